#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fleetlab::audit {

using json = nlohmann::json;

/// Append-only JSONL log, one object per line with the fixed field set
/// {ts, assignment_id, iteration, event, signature, client_id}. This is the
/// test surface for signature-purity checks.
class AuditLog {
public:
    explicit AuditLog(std::filesystem::path path);

    void append(const std::string& assignment_id, std::optional<std::int64_t> iteration,
                const std::string& event, const std::string& signature,
                const std::string& client_id);

    const std::filesystem::path& path() const { return path_; }

    static std::vector<json> read_file(const std::filesystem::path& path);

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::mutex mutex_;
};

}  // namespace fleetlab::audit
