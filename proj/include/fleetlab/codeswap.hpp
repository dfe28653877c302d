#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fleetlab/sandbox.hpp"

namespace fleetlab::codeswap {

using json = nlohmann::json;

enum class Target { onboard, offboard };
const char* target_name(Target t);
std::optional<Target> target_from_name(std::string_view name);

struct CustomModule {
    std::string source;
    std::string user_id;
    Target target = Target::onboard;
    std::string signature;  // md5 hex of source bytes
    std::int64_t deployed_at_ms = 0;

    static CustomModule make(std::string source, std::string user_id, Target target);
};

/// md5 of the source bytes, 32 lowercase hex chars.
std::string signature(std::string_view source);

struct StageViolation {
    std::string stage;  // syntax | entry_point | probe_run | return_type | capability
    std::string message;
};

struct ValidationReport {
    bool ok = false;
    std::vector<StageViolation> violations;

    json to_json() const;
};

struct ValidateOptions {
    std::uint64_t probe_seed = 0;  // 0: derived from the source signature
    std::chrono::milliseconds probe_timeout{5000};
};

/// Two-front validation: syntax load, entry-point arity, probe runs against
/// a fixed vector and 8 seeded random vectors, a return-type check on every
/// probe, and a capability scan. The first failing stage is reported.
ValidationReport validate_custom(const std::string& source, Target target,
                                 const ValidateOptions& options = {});

/// The probe inputs used by validate_custom: [0,1,2] plus 8 random vectors
/// with lengths in 1..64, values in [-100,100], derived from `seed`.
std::vector<std::vector<double>> probe_inputs(std::uint64_t seed);

/// One module slot per (user_id, target), held as a file
/// <user_id>.<target>.script in the store directory. Replacement goes
/// through a temp file and an atomic rename, so readers see the old module
/// or the new one, never a mixture. There is no rollback.
class CodeStore {
public:
    explicit CodeStore(std::filesystem::path dir);

    /// Overwrites the slot; the previous module is gone for good.
    void store(const CustomModule& m);

    /// Fresh read from disk on every call, so a replacement between
    /// iterations is picked up by the next load.
    std::optional<CustomModule> load(const std::string& user_id, Target target) const;

    std::filesystem::path path_for(const std::string& user_id, Target target) const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

struct ExecFailure {
    enum class Kind { not_deployed, timeout, fault, capability, return_type } kind;
    std::string message;
    double elapsed_ms = 0;

    const char* kind_name() const;
};

struct CustomResult {
    script::Value value;  // finite number or vector of finite numbers
    std::string signature;
    double elapsed_ms = 0;
};

struct ExecOutcome {
    std::optional<CustomResult> result;
    std::optional<ExecFailure> failure;
    bool ok() const { return result.has_value(); }
};

/// Runs custom_code(input) in an isolated, externally killable context.
/// The return contract is re-checked at runtime regardless of validation.
ExecOutcome execute_custom(const CustomModule& m, const std::vector<double>& input,
                           const json& params, std::chrono::milliseconds timeout);

}  // namespace fleetlab::codeswap
