#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fleetlab/spec.hpp"

using namespace fleetlab;
using json = nlohmann::json;

namespace {

// The anomaly-detection example: collect speed values over the threshold,
// one hour per iteration, ten iterations, whole fleet.
json example_assignment() {
    return json{
        {"name", "Sample Assignment"},
        {"user_id", "u1"},
        {"clients", "all"},
        {"onboard",
         {{"computation", "collect"},
          {"signals", {"speed"}},
          {"filters", "x > 100"},
          {"frequency", 10},
          {"samples", 36000}}},
        {"offboard", {{"computation", "collect"}, {"iterations", 10}}},
    };
}

bool has_violation(const spec::ValidationResult& r, const std::string& field,
                   const std::string& needle = "") {
    for (const auto& v : r.violations) {
        if (v.field == field && (needle.empty() || v.reason.find(needle) != std::string::npos))
            return true;
    }
    return false;
}

std::vector<spec::RegistryEntry> registry3() {
    return {{"c1", "type_a"}, {"c2", "type_b"}, {"c3", "type_a"}};
}

}  // namespace

TEST_CASE("the example assignment document validates") {
    auto r = spec::validate_assignment(example_assignment());
    REQUIRE(r.ok());
    CHECK(r.spec->name == "Sample Assignment");
    CHECK(r.spec->onboard.computation == spec::OnboardComputation::collect);
    CHECK(r.spec->onboard.samples == 36000);
    CHECK(r.spec->onboard.frequency == 10);
    CHECK(r.spec->onboard.nominal_duration_s() == doctest::Approx(3600.0));
    CHECK(r.spec->offboard.iterations == 10);
    CHECK(std::holds_alternative<spec::ClientSelector::All>(r.spec->clients.variant));
}

TEST_CASE("validation is idempotent on a valid spec") {
    auto r1 = spec::validate_assignment(example_assignment());
    REQUIRE(r1.ok());
    auto r2 = spec::validate_assignment(r1.spec->to_json());
    REQUIRE(r2.ok());
    CHECK(r1.spec->to_json() == r2.spec->to_json());
}

TEST_CASE("frequency must be a positive integer") {
    auto doc = example_assignment();
    doc["onboard"]["frequency"] = 0;
    CHECK(has_violation(spec::validate_assignment(doc), "onboard.frequency", "positive integer"));
    doc["onboard"]["frequency"] = -3;
    CHECK(has_violation(spec::validate_assignment(doc), "onboard.frequency", "positive integer"));
    doc["onboard"]["frequency"] = 10.5;
    CHECK(has_violation(spec::validate_assignment(doc), "onboard.frequency", "positive integer"));
    doc["onboard"]["frequency"] = 2000;
    CHECK(has_violation(spec::validate_assignment(doc), "onboard.frequency", "1000"));
}

TEST_CASE("unknown computation keyword lists the allowed set") {
    auto doc = example_assignment();
    doc["onboard"]["computation"] = "colect";
    auto r = spec::validate_assignment(doc);
    CHECK(!r.ok());
    CHECK(has_violation(r, "onboard.computation", "collect, mean, histogram, custom"));
}

TEST_CASE("all violations are reported, not just the first") {
    auto doc = example_assignment();
    doc["onboard"]["frequency"] = 0;
    doc["onboard"]["samples"] = -1;
    doc["offboard"]["iterations"] = 0;
    doc.erase("name");
    auto r = spec::validate_assignment(doc);
    CHECK(r.violations.size() >= 4);
    CHECK(has_violation(r, "onboard.frequency"));
    CHECK(has_violation(r, "onboard.samples"));
    CHECK(has_violation(r, "offboard.iterations"));
    CHECK(has_violation(r, "name"));
}

TEST_CASE("unknown fields are rejected") {
    auto doc = example_assignment();
    doc["onboard"]["frequencyy"] = 10;
    CHECK(has_violation(spec::validate_assignment(doc), "onboard.frequencyy", "unknown"));
}

TEST_CASE("multiple signals are rejected with a clear message") {
    auto doc = example_assignment();
    doc["onboard"]["signals"] = {"speed", "rpm"};
    CHECK(has_violation(spec::validate_assignment(doc), "onboard.signals", "one signal"));
    doc["onboard"]["signals"] = json::array();
    CHECK(has_violation(spec::validate_assignment(doc), "onboard.signals", "non-empty"));
}

TEST_CASE("bad filters fail validation with the parser message") {
    auto doc = example_assignment();
    doc["onboard"]["filters"] = "y > 1";
    CHECK(has_violation(spec::validate_assignment(doc), "onboard.filters", "unknown identifier"));
}

TEST_CASE("result_flow accepts only isolated and connected") {
    auto doc = example_assignment();
    doc["onboard"]["parameters"] = {{"result_flow", "connected"}};
    CHECK(spec::validate_assignment(doc).ok());
    doc["onboard"]["parameters"] = {{"result_flow", "looped"}};
    CHECK(has_violation(spec::validate_assignment(doc), "onboard.parameters.result_flow"));
}

TEST_CASE("selector forms parse and reject malformed input") {
    auto doc = example_assignment();
    doc["clients"] = {{"random", 2}};
    CHECK(spec::validate_assignment(doc).ok());
    doc["clients"] = {{"ids", {"c1", "c2"}}};
    CHECK(spec::validate_assignment(doc).ok());
    doc["clients"] = {{"model", "type_a"}};
    CHECK(spec::validate_assignment(doc).ok());
    doc["clients"] = {{"ids", {"c1", "c1"}}};
    CHECK(has_violation(spec::validate_assignment(doc), "clients.ids", "duplicate"));
    doc["clients"] = {{"random", 0}};
    CHECK(has_violation(spec::validate_assignment(doc), "clients.random"));
    doc["clients"] = "some";
    CHECK(has_violation(spec::validate_assignment(doc), "clients"));
}

TEST_CASE("select_clients: all, ids, model, random") {
    auto reg = registry3();

    spec::ClientSelector all;
    CHECK(spec::select_clients(all, reg, 0) == std::vector<std::string>{"c1", "c2", "c3"});

    spec::ClientSelector ids;
    ids.variant = spec::ClientSelector::Ids{{"c2", "c9"}};
    CHECK_THROWS_WITH_AS(spec::select_clients(ids, reg, 0), doctest::Contains("c9"),
                         spec::SelectionError);

    spec::ClientSelector model;
    model.variant = spec::ClientSelector::Model{"type_a"};
    CHECK(spec::select_clients(model, reg, 0) == std::vector<std::string>{"c1", "c3"});
    model.variant = spec::ClientSelector::Model{"type_x"};
    CHECK_THROWS_AS(spec::select_clients(model, reg, 0), spec::SelectionError);

    spec::ClientSelector random;
    random.variant = spec::ClientSelector::Random{2};
    auto a = spec::select_clients(random, reg, 7);
    auto b = spec::select_clients(random, reg, 7);
    CHECK(a == b);  // deterministic under one seed
    CHECK(a.size() == 2);
    CHECK(std::is_sorted(a.begin(), a.end()));
    random.variant = spec::ClientSelector::Random{4};
    CHECK_THROWS_AS(spec::select_clients(random, reg, 7), spec::SelectionError);
}

TEST_CASE("random selection is seed-dependent but registry-order independent") {
    auto reg = registry3();
    std::vector<spec::RegistryEntry> shuffled = {{"c3", "type_a"}, {"c1", "type_a"},
                                                 {"c2", "type_b"}};
    spec::ClientSelector random;
    random.variant = spec::ClientSelector::Random{2};
    CHECK(spec::select_clients(random, reg, 5) == spec::select_clients(random, shuffled, 5));

    bool differs = false;
    for (std::uint64_t seed = 0; seed < 32 && !differs; ++seed)
        differs = spec::select_clients(random, reg, seed) !=
                  spec::select_clients(random, reg, seed + 1);
    CHECK(differs);
}

TEST_CASE("split_into_tasks: one task per client, shared fields") {
    auto r = spec::validate_assignment(example_assignment());
    REQUIRE(r.ok());
    auto tasks = spec::split_into_tasks(*r.spec, "u1-1", {"c1", "c2", "c3"}, 0, std::nullopt,
                                        std::nullopt);
    REQUIRE(tasks.size() == 3);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        CHECK(tasks[i].assignment_id == "u1-1");
        CHECK(tasks[i].iteration == 0);
        CHECK(tasks[i].user_id == "u1");
        CHECK(!tasks[i].input_model.has_value());  // isolated flow
        CHECK(tasks[i].onboard.samples == r.spec->onboard.samples);
    }
    CHECK(tasks[0].client_id == "c1");
    CHECK(tasks[2].client_id == "c3");
}

TEST_CASE("connected flow copies the carried model into every task") {
    auto doc = example_assignment();
    doc["onboard"]["computation"] = "custom";
    doc["onboard"]["parameters"] = {{"result_flow", "connected"}};
    doc["offboard"]["computation"] = "custom";
    auto r = spec::validate_assignment(doc);
    REQUIRE(r.ok());

    std::vector<double> model = {2, 3};
    auto tasks = spec::split_into_tasks(*r.spec, "u1-2", {"c1", "c2"}, 1, model, std::nullopt);
    REQUIRE(tasks.size() == 2);
    for (const auto& t : tasks) {
        REQUIRE(t.input_model.has_value());
        CHECK(*t.input_model == model);
    }

    // Iteration 0 has no model yet.
    auto first = spec::split_into_tasks(*r.spec, "u1-2", {"c1"}, 0, std::nullopt, std::nullopt);
    CHECK(!first[0].input_model.has_value());
}

TEST_CASE("split preconditions: clients non-empty, iteration in range") {
    auto r = spec::validate_assignment(example_assignment());
    REQUIRE(r.ok());
    CHECK_THROWS_AS(spec::split_into_tasks(*r.spec, "x", {}, 0, std::nullopt, std::nullopt),
                    spec::SelectionError);
    CHECK_THROWS_AS(spec::split_into_tasks(*r.spec, "x", {"c1"}, 10, std::nullopt, std::nullopt),
                    spec::SelectionError);
}

TEST_CASE("task specs survive the wire representation") {
    auto r = spec::validate_assignment(example_assignment());
    REQUIRE(r.ok());
    auto tasks = spec::split_into_tasks(*r.spec, "u1-1", {"c1"}, 2, std::vector<double>{1.5},
                                        std::string("ff"));
    // isolated flow drops the model even when one is passed
    CHECK(!tasks[0].input_model.has_value());
    auto round = spec::TaskSpec::from_json(tasks[0].to_json());
    CHECK(round.client_id == tasks[0].client_id);
    CHECK(round.iteration == tasks[0].iteration);
    CHECK(round.onboard.to_json() == tasks[0].onboard.to_json());
    CHECK(round.signature_hint == tasks[0].signature_hint);
}
