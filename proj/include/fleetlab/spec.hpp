#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fleetlab/filter.hpp"

namespace fleetlab::spec {

using json = nlohmann::json;

enum class OnboardComputation { collect, mean, histogram, custom };
enum class OffboardComputation { collect, average, custom };

const char* name_of(OnboardComputation c);
const char* name_of(OffboardComputation c);

enum class ResultFlow { isolated, connected };

struct OnboardTask {
    OnboardComputation computation = OnboardComputation::collect;
    std::vector<std::string> signals;          // exactly one supported
    std::optional<std::string> filters;        // FilterExpr source text
    std::int64_t frequency = 1;                // samples per second, 1..1000
    std::int64_t samples = 1;
    json parameters = json::object();          // "result_flow" reserved

    ResultFlow result_flow() const;
    double nominal_duration_s() const {
        return static_cast<double>(samples) / static_cast<double>(frequency);
    }
    json to_json() const;
    static OnboardTask from_json(const json& doc);  // assumes validated
};

struct OffboardTask {
    OffboardComputation computation = OffboardComputation::collect;
    std::int64_t iterations = 1;
};

struct ClientSelector {
    struct All {};
    struct Random {
        std::int64_t count = 1;
    };
    struct Ids {
        std::vector<std::string> ids;
    };
    struct Model {
        std::string model;
    };
    std::variant<All, Random, Ids, Model> variant = All{};

    json to_json() const;
};

struct AssignmentSpec {
    std::string name;
    ClientSelector clients;
    OnboardTask onboard;
    OffboardTask offboard;
    std::string user_id;
    std::uint64_t selection_seed = 0;  // optional, for the random selector

    json to_json() const;
};

struct TaskSpec {
    std::string assignment_id;
    std::string user_id;
    std::string client_id;
    std::int64_t iteration = 0;
    OnboardTask onboard;
    std::optional<std::vector<double>> input_model;  // connected flow only
    std::optional<std::string> signature_hint;

    json to_json() const;
    static TaskSpec from_json(const json& doc);
};

struct Violation {
    std::string field;
    std::string reason;
};

struct ValidationResult {
    std::optional<AssignmentSpec> spec;
    std::vector<Violation> violations;
    bool ok() const { return spec.has_value(); }
};

/// Checks completeness of keys, types of values, and ranges; returns either
/// a fully typed AssignmentSpec or every violation found.
ValidationResult validate_assignment(const json& doc);

struct RegistryEntry {
    std::string client_id;
    std::string model;
};

class SelectionError : public std::runtime_error {
public:
    explicit SelectionError(const std::string& what) : std::runtime_error(what) {}
};

/// Resolves a selector against the registry. Output is sorted ascending.
/// Random selection is driven by a deterministic seeded generator.
std::vector<std::string> select_clients(const ClientSelector& sel,
                                        const std::vector<RegistryEntry>& registry,
                                        std::uint64_t rng_seed);

/// One TaskSpec per client, identical except for client_id.
std::vector<TaskSpec> split_into_tasks(const AssignmentSpec& a, const std::string& assignment_id,
                                       const std::vector<std::string>& clients,
                                       std::int64_t iteration,
                                       const std::optional<std::vector<double>>& input_model,
                                       const std::optional<std::string>& signature_hint);

}  // namespace fleetlab::spec
