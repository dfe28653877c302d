#include "fleetlab/spec.hpp"

#include <algorithm>
#include <set>

#include "fleetlab/util.hpp"

namespace fleetlab::spec {

const char* name_of(OnboardComputation c) {
    switch (c) {
        case OnboardComputation::collect: return "collect";
        case OnboardComputation::mean: return "mean";
        case OnboardComputation::histogram: return "histogram";
        case OnboardComputation::custom: return "custom";
    }
    return "?";
}

const char* name_of(OffboardComputation c) {
    switch (c) {
        case OffboardComputation::collect: return "collect";
        case OffboardComputation::average: return "average";
        case OffboardComputation::custom: return "custom";
    }
    return "?";
}

ResultFlow OnboardTask::result_flow() const {
    if (parameters.contains("result_flow") && parameters["result_flow"] == "connected")
        return ResultFlow::connected;
    return ResultFlow::isolated;
}

json OnboardTask::to_json() const {
    json doc;
    doc["computation"] = name_of(computation);
    doc["signals"] = signals;
    if (filters) doc["filters"] = *filters;
    doc["frequency"] = frequency;
    doc["samples"] = samples;
    doc["parameters"] = parameters;
    return doc;
}

OnboardTask OnboardTask::from_json(const json& doc) {
    OnboardTask t;
    std::string comp = doc.at("computation").get<std::string>();
    if (comp == "collect") t.computation = OnboardComputation::collect;
    else if (comp == "mean") t.computation = OnboardComputation::mean;
    else if (comp == "histogram") t.computation = OnboardComputation::histogram;
    else t.computation = OnboardComputation::custom;
    t.signals = doc.at("signals").get<std::vector<std::string>>();
    if (doc.contains("filters")) t.filters = doc["filters"].get<std::string>();
    t.frequency = doc.at("frequency").get<std::int64_t>();
    t.samples = doc.at("samples").get<std::int64_t>();
    if (doc.contains("parameters")) t.parameters = doc["parameters"];
    return t;
}

json ClientSelector::to_json() const {
    return std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, All>) return "all";
            else if constexpr (std::is_same_v<T, Random>) return json{{"random", v.count}};
            else if constexpr (std::is_same_v<T, Ids>) return json{{"ids", v.ids}};
            else return json{{"model", v.model}};
        },
        variant);
}

json AssignmentSpec::to_json() const {
    json doc;
    doc["name"] = name;
    doc["user_id"] = user_id;
    doc["clients"] = clients.to_json();
    doc["onboard"] = onboard.to_json();
    doc["offboard"] = {{"computation", name_of(offboard.computation)},
                       {"iterations", offboard.iterations}};
    if (selection_seed != 0) doc["selection_seed"] = selection_seed;
    return doc;
}

json TaskSpec::to_json() const {
    json doc;
    doc["client_id"] = client_id;
    doc["iteration"] = iteration;
    doc["onboard"] = onboard.to_json();
    if (input_model) doc["input_model"] = *input_model;
    if (signature_hint) doc["signature_hint"] = *signature_hint;
    return doc;
}

TaskSpec TaskSpec::from_json(const json& doc) {
    TaskSpec t;
    t.client_id = doc.at("client_id").get<std::string>();
    t.iteration = doc.at("iteration").get<std::int64_t>();
    t.onboard = OnboardTask::from_json(doc.at("onboard"));
    if (doc.contains("input_model"))
        t.input_model = doc["input_model"].get<std::vector<double>>();
    if (doc.contains("signature_hint"))
        t.signature_hint = doc["signature_hint"].get<std::string>();
    return t;
}

namespace {

class Checker {
public:
    explicit Checker(std::vector<Violation>& out) : out_(out) {}

    void violation(std::string field, std::string reason) {
        out_.push_back({std::move(field), std::move(reason)});
    }

    bool require_keys(const json& doc, const std::string& prefix,
                      const std::set<std::string>& required,
                      const std::set<std::string>& optional) {
        bool ok = true;
        for (const auto& key : required) {
            if (!doc.contains(key)) {
                violation(prefix + key, "missing required field");
                ok = false;
            }
        }
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            if (!required.count(it.key()) && !optional.count(it.key())) {
                violation(prefix + it.key(), "unknown field");
                ok = false;
            }
        }
        return ok;
    }

    std::optional<std::int64_t> positive_int(const json& doc, const std::string& field,
                                             const std::string& path) {
        if (!doc.contains(field)) return std::nullopt;
        const json& v = doc[field];
        if (!v.is_number_integer() || v.is_number_float()) {
            violation(path, "must be a positive integer");
            return std::nullopt;
        }
        std::int64_t n = v.get<std::int64_t>();
        if (n < 1) {
            violation(path, "must be a positive integer");
            return std::nullopt;
        }
        return n;
    }

private:
    std::vector<Violation>& out_;
};

std::optional<ClientSelector> parse_selector(const json& doc, Checker& check) {
    ClientSelector sel;
    if (doc.is_string()) {
        if (doc.get<std::string>() == "all") {
            sel.variant = ClientSelector::All{};
            return sel;
        }
        check.violation("clients", "string form must be \"all\"");
        return std::nullopt;
    }
    if (!doc.is_object() || doc.size() != 1) {
        check.violation("clients",
                        "must be \"all\" or an object with one of: random, ids, model");
        return std::nullopt;
    }
    if (doc.contains("random")) {
        if (!doc["random"].is_number_integer() || doc["random"].get<std::int64_t>() < 1) {
            check.violation("clients.random", "count must be a positive integer");
            return std::nullopt;
        }
        sel.variant = ClientSelector::Random{doc["random"].get<std::int64_t>()};
        return sel;
    }
    if (doc.contains("ids")) {
        if (!doc["ids"].is_array() || doc["ids"].empty()) {
            check.violation("clients.ids", "must be a non-empty list of client ids");
            return std::nullopt;
        }
        ClientSelector::Ids ids;
        std::set<std::string> seen;
        for (const auto& v : doc["ids"]) {
            if (!v.is_string()) {
                check.violation("clients.ids", "entries must be strings");
                return std::nullopt;
            }
            std::string id = v.get<std::string>();
            if (!seen.insert(id).second) {
                check.violation("clients.ids", "duplicate id: " + id);
                return std::nullopt;
            }
            ids.ids.push_back(std::move(id));
        }
        sel.variant = std::move(ids);
        return sel;
    }
    if (doc.contains("model")) {
        if (!doc["model"].is_string() || doc["model"].get<std::string>().empty()) {
            check.violation("clients.model", "must be a non-empty string");
            return std::nullopt;
        }
        sel.variant = ClientSelector::Model{doc["model"].get<std::string>()};
        return sel;
    }
    check.violation("clients", "must be \"all\" or an object with one of: random, ids, model");
    return std::nullopt;
}

bool parameter_value_ok(const json& v) {
    if (v.is_number() || v.is_string() || v.is_boolean()) return true;
    if (v.is_array()) {
        return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
    }
    return false;
}

}  // namespace

ValidationResult validate_assignment(const json& doc) {
    ValidationResult result;
    Checker check(result.violations);

    if (!doc.is_object()) {
        check.violation("", "assignment spec must be a JSON object");
        return result;
    }
    check.require_keys(doc, "", {"name", "clients", "onboard", "offboard", "user_id"},
                       {"selection_seed"});

    AssignmentSpec spec;
    if (doc.contains("name")) {
        if (!doc["name"].is_string() || doc["name"].get<std::string>().empty())
            check.violation("name", "must be a non-empty string");
        else
            spec.name = doc["name"].get<std::string>();
    }
    if (doc.contains("user_id")) {
        if (!doc["user_id"].is_string() || !is_safe_identifier(doc["user_id"].get<std::string>()))
            check.violation("user_id", "must match [A-Za-z0-9_-]{1,64}");
        else
            spec.user_id = doc["user_id"].get<std::string>();
    }
    if (doc.contains("selection_seed")) {
        if (!doc["selection_seed"].is_number_integer() ||
            doc["selection_seed"].get<std::int64_t>() < 0)
            check.violation("selection_seed", "must be a non-negative integer");
        else
            spec.selection_seed = doc["selection_seed"].get<std::uint64_t>();
    }

    if (doc.contains("clients")) {
        if (auto sel = parse_selector(doc["clients"], check)) spec.clients = *sel;
    }

    if (doc.contains("onboard")) {
        const json& on = doc["onboard"];
        if (!on.is_object()) {
            check.violation("onboard", "must be an object");
        } else {
            check.require_keys(on, "onboard.", {"computation", "signals", "frequency", "samples"},
                               {"filters", "parameters"});
            if (on.contains("computation")) {
                static const std::set<std::string> allowed = {"collect", "mean", "histogram",
                                                              "custom"};
                std::string c = on["computation"].is_string() ? on["computation"].get<std::string>()
                                                              : std::string();
                if (!allowed.count(c)) {
                    check.violation("onboard.computation",
                                    "must be one of: collect, mean, histogram, custom");
                } else if (c == "collect") spec.onboard.computation = OnboardComputation::collect;
                else if (c == "mean") spec.onboard.computation = OnboardComputation::mean;
                else if (c == "histogram") spec.onboard.computation = OnboardComputation::histogram;
                else spec.onboard.computation = OnboardComputation::custom;
            }
            if (on.contains("signals")) {
                const json& sig = on["signals"];
                bool shape_ok = sig.is_array() && !sig.empty() &&
                                std::all_of(sig.begin(), sig.end(),
                                            [](const json& s) { return s.is_string(); });
                if (!shape_ok) {
                    check.violation("onboard.signals", "must be a non-empty list of signal names");
                } else if (sig.size() > 1) {
                    check.violation("onboard.signals",
                                    "only one signal per task is supported; got " +
                                        std::to_string(sig.size()));
                } else {
                    spec.onboard.signals = sig.get<std::vector<std::string>>();
                }
            }
            if (auto f = check.positive_int(on, "frequency", "onboard.frequency")) {
                if (*f > 1000)
                    check.violation("onboard.frequency", "must not exceed 1000");
                else
                    spec.onboard.frequency = *f;
            }
            if (auto s = check.positive_int(on, "samples", "onboard.samples"))
                spec.onboard.samples = *s;
            if (on.contains("filters")) {
                if (!on["filters"].is_string()) {
                    check.violation("onboard.filters", "must be a string");
                } else {
                    try {
                        filter::parse_filter(on["filters"].get<std::string>());
                        spec.onboard.filters = on["filters"].get<std::string>();
                    } catch (const filter::ParseError& e) {
                        check.violation("onboard.filters", e.what());
                    }
                }
            }
            if (on.contains("parameters")) {
                const json& params = on["parameters"];
                if (!params.is_object()) {
                    check.violation("onboard.parameters", "must be an object");
                } else {
                    for (auto it = params.begin(); it != params.end(); ++it) {
                        if (it.key() == "result_flow") {
                            if (it.value() != "isolated" && it.value() != "connected")
                                check.violation("onboard.parameters.result_flow",
                                                "must be \"isolated\" or \"connected\"");
                        } else if (!parameter_value_ok(it.value())) {
                            check.violation("onboard.parameters." + it.key(),
                                            "must be a number, string, boolean, or numeric list");
                        }
                    }
                    spec.onboard.parameters = params;
                }
            }
        }
    }

    if (doc.contains("offboard")) {
        const json& off = doc["offboard"];
        if (!off.is_object()) {
            check.violation("offboard", "must be an object");
        } else {
            check.require_keys(off, "offboard.", {"computation"}, {"iterations"});
            if (off.contains("computation")) {
                static const std::set<std::string> allowed = {"collect", "average", "custom"};
                std::string c = off["computation"].is_string()
                                    ? off["computation"].get<std::string>()
                                    : std::string();
                if (!allowed.count(c)) {
                    check.violation("offboard.computation",
                                    "must be one of: collect, average, custom");
                } else if (c == "collect") spec.offboard.computation = OffboardComputation::collect;
                else if (c == "average") spec.offboard.computation = OffboardComputation::average;
                else spec.offboard.computation = OffboardComputation::custom;
            }
            if (off.contains("iterations")) {
                if (auto n = check.positive_int(off, "iterations", "offboard.iterations"))
                    spec.offboard.iterations = *n;
            }
        }
    }

    if (result.violations.empty()) result.spec = std::move(spec);
    return result;
}

std::vector<std::string> select_clients(const ClientSelector& sel,
                                        const std::vector<RegistryEntry>& registry,
                                        std::uint64_t rng_seed) {
    std::vector<std::string> out;
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, ClientSelector::All>) {
                for (const auto& e : registry) out.push_back(e.client_id);
            } else if constexpr (std::is_same_v<T, ClientSelector::Random>) {
                if (v.count > static_cast<std::int64_t>(registry.size()))
                    throw SelectionError("random selection of " + std::to_string(v.count) +
                                         " exceeds registry size " +
                                         std::to_string(registry.size()));
                // Seeded Fisher-Yates over a sorted id list, then take a prefix.
                std::vector<std::string> pool;
                for (const auto& e : registry) pool.push_back(e.client_id);
                std::sort(pool.begin(), pool.end());
                std::uint64_t state = splitmix64(rng_seed);
                for (std::size_t i = pool.size(); i > 1; --i) {
                    state = splitmix64(state);
                    std::swap(pool[i - 1], pool[state % i]);
                }
                out.assign(pool.begin(), pool.begin() + v.count);
            } else if constexpr (std::is_same_v<T, ClientSelector::Ids>) {
                std::set<std::string> known;
                for (const auto& e : registry) known.insert(e.client_id);
                for (const auto& id : v.ids) {
                    if (!known.count(id)) throw SelectionError("unknown client id: " + id);
                    out.push_back(id);
                }
            } else if constexpr (std::is_same_v<T, ClientSelector::Model>) {
                for (const auto& e : registry)
                    if (e.model == v.model) out.push_back(e.client_id);
                if (out.empty()) throw SelectionError("no registered client has model " + v.model);
            }
        },
        sel.variant);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<TaskSpec> split_into_tasks(const AssignmentSpec& a, const std::string& assignment_id,
                                       const std::vector<std::string>& clients,
                                       std::int64_t iteration,
                                       const std::optional<std::vector<double>>& input_model,
                                       const std::optional<std::string>& signature_hint) {
    if (clients.empty()) throw SelectionError("task split requires at least one client");
    if (iteration < 0 || iteration >= a.offboard.iterations)
        throw SelectionError("iteration " + std::to_string(iteration) + " out of range");

    std::vector<TaskSpec> tasks;
    tasks.reserve(clients.size());
    for (const auto& client : clients) {
        TaskSpec t;
        t.assignment_id = assignment_id;
        t.user_id = a.user_id;
        t.client_id = client;
        t.iteration = iteration;
        t.onboard = a.onboard;
        if (a.onboard.result_flow() == ResultFlow::connected) t.input_model = input_model;
        t.signature_hint = signature_hint;
        tasks.push_back(std::move(t));
    }
    return tasks;
}

}  // namespace fleetlab::spec
