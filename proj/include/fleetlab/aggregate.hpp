#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fleetlab/codeswap.hpp"
#include "fleetlab/spec.hpp"

namespace fleetlab::aggregate {

using json = nlohmann::json;

struct ResultEnvelope {
    std::string assignment_id;
    std::string client_id;
    std::int64_t iteration = 0;
    std::string signature;        // md5 hex or "builtin:<keyword>"
    std::optional<json> payload;  // numeric scalar or vector
    std::optional<json> error;    // {kind, message, ...}

    bool is_error() const { return error.has_value(); }
    json to_json() const;
    static ResultEnvelope from_json(const json& doc);
};

struct MajorityOutcome {
    std::optional<std::string> winning_signature;
    std::vector<ResultEnvelope> kept;
    std::vector<ResultEnvelope> discarded;
};

/// Strict plurality over envelope signatures. Ties go to deployed_signature
/// when it is among the tied; otherwise nobody wins and every envelope is
/// discarded. Callers must exclude error envelopes beforehand.
MajorityOutcome majority_filter(const std::vector<ResultEnvelope>& results,
                                const std::optional<std::string>& deployed_signature);

class AggregateError : public std::runtime_error {
public:
    explicit AggregateError(const std::string& what) : std::runtime_error(what) {}
};

/// Element-wise mean of equal-length vectors, or plain mean of scalars.
/// Throws AggregateError on empty input or mixed/ragged payloads.
json average_payloads(const std::vector<ResultEnvelope>& kept);

/// Pass-through: [{client_id, value}, ...] sorted by client_id.
json collect_payloads(const std::vector<ResultEnvelope>& kept);

/// Flattens kept payloads (sorted by client_id) into one numeric vector for
/// a custom off-board module. Scalars count as length-1 vectors; all
/// payloads must share one length, which is reported through params as
/// input_length alongside input_count.
std::vector<double> flatten_payloads(const std::vector<ResultEnvelope>& kept,
                                     std::size_t* per_client_length);

struct OffboardResult {
    std::optional<json> value;
    std::optional<std::string> error;
    std::string signature;  // module signature for custom, "builtin:<kw>" otherwise
    double elapsed_ms = 0;
    bool ok() const { return value.has_value(); }
};

/// Runs the off-board step over the kept envelopes. collect and average are
/// built-ins; custom loads the user's off-board module freshly from the
/// store and executes it in the sandbox.
OffboardResult offboard_compute(spec::OffboardComputation computation,
                                const std::vector<ResultEnvelope>& kept,
                                const std::string& user_id, const codeswap::CodeStore& store,
                                const json& assignment_params,
                                std::chrono::milliseconds timeout);

// Built-in on-board computations, shared by clients and test oracles.
double builtin_mean(const std::vector<double>& samples);

/// 10 equal-width bins over [min, max] of the buffer, right-open except the
/// last bin. A constant buffer lands entirely in bin 0.
std::vector<double> builtin_histogram(const std::vector<double>& samples);

constexpr int kHistogramBins = 10;

}  // namespace fleetlab::aggregate
