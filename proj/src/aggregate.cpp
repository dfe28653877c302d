#include "fleetlab/aggregate.hpp"

#include <algorithm>
#include <map>

namespace fleetlab::aggregate {

json ResultEnvelope::to_json() const {
    json doc;
    doc["client_id"] = client_id;
    doc["iteration"] = iteration;
    doc["signature"] = signature;
    if (payload) doc["payload"] = *payload;
    if (error) doc["error"] = *error;
    return doc;
}

ResultEnvelope ResultEnvelope::from_json(const json& doc) {
    ResultEnvelope env;
    env.client_id = doc.at("client_id").get<std::string>();
    env.iteration = doc.at("iteration").get<std::int64_t>();
    env.signature = doc.at("signature").get<std::string>();
    if (doc.contains("payload")) env.payload = doc["payload"];
    if (doc.contains("error")) env.error = doc["error"];
    return env;
}

MajorityOutcome majority_filter(const std::vector<ResultEnvelope>& results,
                                const std::optional<std::string>& deployed_signature) {
    MajorityOutcome outcome;
    if (results.empty()) return outcome;

    std::map<std::string, std::size_t> counts;
    for (const auto& env : results) counts[env.signature]++;

    std::size_t best = 0;
    for (const auto& [sig, n] : counts) best = std::max(best, n);
    std::vector<std::string> tied;
    for (const auto& [sig, n] : counts)
        if (n == best) tied.push_back(sig);

    if (tied.size() == 1) {
        outcome.winning_signature = tied.front();
    } else if (deployed_signature &&
               std::find(tied.begin(), tied.end(), *deployed_signature) != tied.end()) {
        outcome.winning_signature = *deployed_signature;
    }

    for (const auto& env : results) {
        if (outcome.winning_signature && env.signature == *outcome.winning_signature)
            outcome.kept.push_back(env);
        else
            outcome.discarded.push_back(env);
    }
    return outcome;
}

namespace {

std::vector<ResultEnvelope> sorted_by_client(std::vector<ResultEnvelope> kept) {
    std::sort(kept.begin(), kept.end(), [](const ResultEnvelope& a, const ResultEnvelope& b) {
        return a.client_id < b.client_id;
    });
    return kept;
}

}  // namespace

json average_payloads(const std::vector<ResultEnvelope>& kept) {
    if (kept.empty()) throw AggregateError("average over zero results");

    bool scalar = kept.front().payload && kept.front().payload->is_number();
    if (scalar) {
        double sum = 0;
        for (const auto& env : kept) {
            if (!env.payload || !env.payload->is_number())
                throw AggregateError("average over mixed scalar/vector payloads");
            sum += env.payload->get<double>();
        }
        return sum / static_cast<double>(kept.size());
    }

    std::size_t len = 0;
    std::vector<double> sum;
    for (const auto& env : kept) {
        if (!env.payload || !env.payload->is_array())
            throw AggregateError("average over mixed scalar/vector payloads");
        auto v = env.payload->get<std::vector<double>>();
        if (sum.empty() && len == 0) {
            len = v.size();
            sum.assign(len, 0.0);
        }
        if (v.size() != len)
            throw AggregateError("average over vectors of different lengths: " +
                                 std::to_string(len) + " vs " + std::to_string(v.size()));
        for (std::size_t i = 0; i < len; ++i) sum[i] += v[i];
    }
    for (double& x : sum) x /= static_cast<double>(kept.size());
    return json(sum);
}

json collect_payloads(const std::vector<ResultEnvelope>& kept) {
    json out = json::array();
    for (const auto& env : sorted_by_client(kept)) {
        out.push_back({{"client_id", env.client_id}, {"value", env.payload ? *env.payload : json()}});
    }
    return out;
}

std::vector<double> flatten_payloads(const std::vector<ResultEnvelope>& kept,
                                     std::size_t* per_client_length) {
    std::vector<double> flat;
    std::size_t len = 0;
    bool first = true;
    for (const auto& env : sorted_by_client(kept)) {
        std::vector<double> v;
        if (env.payload && env.payload->is_number()) {
            v.push_back(env.payload->get<double>());
        } else if (env.payload && env.payload->is_array()) {
            v = env.payload->get<std::vector<double>>();
        } else {
            throw AggregateError("custom off-board input must be numeric");
        }
        if (first) {
            len = v.size();
            first = false;
        } else if (v.size() != len) {
            throw AggregateError("custom off-board inputs have mixed lengths");
        }
        flat.insert(flat.end(), v.begin(), v.end());
    }
    if (per_client_length) *per_client_length = len;
    return flat;
}

OffboardResult offboard_compute(spec::OffboardComputation computation,
                                const std::vector<ResultEnvelope>& kept,
                                const std::string& user_id, const codeswap::CodeStore& store,
                                const json& assignment_params,
                                std::chrono::milliseconds timeout) {
    OffboardResult res;
    try {
        switch (computation) {
            case spec::OffboardComputation::collect:
                res.signature = "builtin:collect";
                res.value = collect_payloads(kept);
                return res;
            case spec::OffboardComputation::average:
                if (kept.empty()) {
                    res.error = "average over zero results";
                    return res;
                }
                res.signature = "builtin:average";
                res.value = average_payloads(kept);
                return res;
            case spec::OffboardComputation::custom:
                break;
        }
    } catch (const AggregateError& e) {
        res.error = e.what();
        return res;
    }

    auto module = store.load(user_id, codeswap::Target::offboard);
    if (!module) {
        res.error = "no off-board custom code deployed for user " + user_id;
        return res;
    }
    std::size_t per_client = 0;
    std::vector<double> flat;
    try {
        flat = flatten_payloads(kept, &per_client);
    } catch (const AggregateError& e) {
        res.error = e.what();
        return res;
    }
    json params = assignment_params.is_object() ? assignment_params : json::object();
    params["input_count"] = kept.size();
    params["input_length"] = per_client;
    auto outcome = codeswap::execute_custom(*module, flat, params, timeout);
    if (!outcome.ok()) {
        res.signature = module->signature;
        res.error = std::string(outcome.failure->kind_name()) + ": " + outcome.failure->message;
        res.elapsed_ms = outcome.failure->elapsed_ms;
        return res;
    }
    res.signature = module->signature;
    res.elapsed_ms = outcome.result->elapsed_ms;
    if (outcome.result->value.is_number()) res.value = outcome.result->value.number();
    else res.value = json(outcome.result->value.vec());
    return res;
}

double builtin_mean(const std::vector<double>& samples) {
    if (samples.empty()) throw AggregateError("mean of zero samples");
    double sum = 0;
    for (double x : samples) sum += x;
    return sum / static_cast<double>(samples.size());
}

std::vector<double> builtin_histogram(const std::vector<double>& samples) {
    if (samples.empty()) throw AggregateError("histogram of zero samples");
    double lo = *std::min_element(samples.begin(), samples.end());
    double hi = *std::max_element(samples.begin(), samples.end());
    std::vector<double> bins(kHistogramBins, 0.0);
    if (lo == hi) {
        bins[0] = static_cast<double>(samples.size());
        return bins;
    }
    double width = (hi - lo) / kHistogramBins;
    for (double x : samples) {
        int idx = static_cast<int>((x - lo) / width);
        if (idx >= kHistogramBins) idx = kHistogramBins - 1;  // x == hi
        if (idx < 0) idx = 0;
        bins[static_cast<std::size_t>(idx)] += 1.0;
    }
    return bins;
}

}  // namespace fleetlab::aggregate
