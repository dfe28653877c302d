#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "fleetlab/codeswap.hpp"
#include "fleetlab/md5.hpp"
#include "fleetlab/util.hpp"

using namespace fleetlab;
using codeswap::Target;
using json = nlohmann::json;

namespace {

const char* kIdentity = "fn custom_code(xs) { return xs; }\n";
const char* kMean = "fn custom_code(xs) { return mean(xs); }\n";

std::filesystem::path fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("fleetlab-codeswap-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

codeswap::ValidateOptions fast_opts() {
    codeswap::ValidateOptions opts;
    opts.probe_seed = 1234;
    opts.probe_timeout = std::chrono::milliseconds(3000);
    return opts;
}

std::string first_stage(const codeswap::ValidationReport& report) {
    return report.violations.empty() ? "" : report.violations.front().stage;
}

}  // namespace

TEST_CASE("probe inputs: the fixed vector plus 8 seeded vectors of length 1..64") {
    auto inputs = codeswap::probe_inputs(99);
    REQUIRE(inputs.size() == 9);
    CHECK(inputs[0] == std::vector<double>{0, 1, 2});
    for (std::size_t i = 1; i < inputs.size(); ++i) {
        CHECK(inputs[i].size() >= 1);
        CHECK(inputs[i].size() <= 64);
        for (double v : inputs[i]) {
            CHECK(v >= -100.0);
            CHECK(v <= 100.0);
        }
    }
    CHECK(codeswap::probe_inputs(99) == inputs);      // deterministic
    CHECK(codeswap::probe_inputs(100) != inputs);     // seed-dependent
}

TEST_CASE("validate accepts the identity and mean modules") {
    CHECK(codeswap::validate_custom(kIdentity, Target::onboard, fast_opts()).ok);
    CHECK(codeswap::validate_custom(kMean, Target::offboard, fast_opts()).ok);
}

TEST_CASE("stage syntax: malformed module") {
    auto report = codeswap::validate_custom("fn custom_code(xs) { return xs;", Target::onboard,
                                            fast_opts());
    CHECK(!report.ok);
    CHECK(first_stage(report) == "syntax");
}

TEST_CASE("stage entry_point: missing function or wrong arity") {
    auto missing = codeswap::validate_custom("fn other(a) { return a; }", Target::onboard,
                                             fast_opts());
    CHECK(first_stage(missing) == "entry_point");

    auto two_args = codeswap::validate_custom("fn custom_code(a, b) { return a; }",
                                              Target::onboard, fast_opts());
    CHECK(first_stage(two_args) == "entry_point");
    CHECK(two_args.violations.front().message.find("exactly one argument") != std::string::npos);
}

TEST_CASE("stage probe_run: module that faults on some probe input") {
    auto report = codeswap::validate_custom("fn custom_code(xs) { return xs[70]; }",
                                            Target::onboard, fast_opts());
    CHECK(first_stage(report) == "probe_run");
}

TEST_CASE("stage return_type: text and non-finite returns") {
    auto text = codeswap::validate_custom("fn custom_code(xs) { return \"hello\"; }",
                                          Target::onboard, fast_opts());
    CHECK(first_stage(text) == "return_type");

    auto nan = codeswap::validate_custom("fn custom_code(xs) { return 0 / 0; }", Target::onboard,
                                         fast_opts());
    CHECK(first_stage(nan) == "return_type");

    auto inf = codeswap::validate_custom("fn custom_code(xs) { return [1 / 0]; }",
                                         Target::onboard, fast_opts());
    CHECK(first_stage(inf) == "return_type");

    auto none = codeswap::validate_custom("fn custom_code(xs) { let a = 1; }", Target::onboard,
                                          fast_opts());
    CHECK(first_stage(none) == "return_type");
}

TEST_CASE("stage capability: file access attempts are rejected") {
    auto direct = codeswap::validate_custom(
        "fn custom_code(xs) { open(\"data.txt\"); return 0; }", Target::onboard, fast_opts());
    CHECK(first_stage(direct) == "capability");

    // Hidden behind a branch the probes never take: the static scan gets it.
    auto hidden = codeswap::validate_custom(
        "fn custom_code(xs) { if (len(xs) > 1000) { socket(1); } return 0; }", Target::onboard,
        fast_opts());
    CHECK(first_stage(hidden) == "capability");
    CHECK(hidden.violations.front().message.find("socket") != std::string::npos);
}

TEST_CASE("validation accepted implies probe execution succeeds") {
    const char* modules[] = {
        kIdentity,
        kMean,
        "fn custom_code(xs) { return sum(xs) + 1; }",
        "fn custom_code(xs) { return [min(xs), max(xs)]; }",
        "fn custom_code(xs) { let v = zeros(len(xs)); let i = 0; while (i < len(xs)) { v[i] = xs[i] * 2; i = i + 1; } return v; }",
    };
    for (const char* source : modules) {
        CAPTURE(source);
        auto report = codeswap::validate_custom(source, Target::onboard, fast_opts());
        REQUIRE(report.ok);
        auto module = codeswap::CustomModule::make(source, "u1", Target::onboard);
        for (const auto& probe : codeswap::probe_inputs(fast_opts().probe_seed)) {
            auto outcome = codeswap::execute_custom(module, probe, json::object(),
                                                    std::chrono::milliseconds(3000));
            REQUIRE(outcome.ok());
        }
    }
}

TEST_CASE("execute_custom: results carry the module signature") {
    auto module = codeswap::CustomModule::make(kIdentity, "u1", Target::onboard);
    CHECK(module.signature == md5_hex(kIdentity));

    auto outcome = codeswap::execute_custom(module, {1, 2, 3}, json::object(),
                                            std::chrono::milliseconds(2000));
    REQUIRE(outcome.ok());
    CHECK(outcome.result->value.vec() == script::Value::Vec{1, 2, 3});
    CHECK(outcome.result->signature == module.signature);

    auto mean_module = codeswap::CustomModule::make(kMean, "u1", Target::onboard);
    auto mean_outcome = codeswap::execute_custom(mean_module, {2, 4, 6}, json::object(),
                                                 std::chrono::milliseconds(2000));
    REQUIRE(mean_outcome.ok());
    CHECK(mean_outcome.result->value.number() == doctest::Approx(4.0));
}

TEST_CASE("execute_custom: runtime return-type violation") {
    auto module = codeswap::CustomModule::make("fn custom_code(xs) { return xs[0] / 0; }", "u1",
                                               Target::onboard);
    auto outcome = codeswap::execute_custom(module, {0}, json::object(),
                                            std::chrono::milliseconds(2000));
    REQUIRE(!outcome.ok());
    CHECK(outcome.failure->kind == codeswap::ExecFailure::Kind::return_type);
}

TEST_CASE("infinite loop is killed within the timeout plus grace") {
    auto module = codeswap::CustomModule::make(
        "fn custom_code(xs) { while (true) { } return 0; }", "u1", Target::onboard);
    auto start = mono_now();
    auto outcome = codeswap::execute_custom(module, {1}, json::object(),
                                            std::chrono::milliseconds(100));
    double wall_ms = elapsed_ms(start);
    REQUIRE(!outcome.ok());
    CHECK(outcome.failure->kind == codeswap::ExecFailure::Kind::timeout);
    CHECK(wall_ms < 150.0);  // 100 ms budget + 50 ms grace
    CHECK(outcome.failure->elapsed_ms >= 99.0);
}

TEST_CASE("host survives faulting and looping executions") {
    auto loop_module = codeswap::CustomModule::make(
        "fn custom_code(xs) { while (true) { } return 0; }", "u1", Target::onboard);
    auto fault_module = codeswap::CustomModule::make(
        "fn custom_code(xs) { return xs[99999]; }", "u1", Target::onboard);
    for (int i = 0; i < 100; ++i) {
        const auto& module = (i % 2 == 0) ? fault_module : loop_module;
        auto outcome = codeswap::execute_custom(module, {1}, json::object(),
                                                std::chrono::milliseconds(i % 2 == 0 ? 500 : 20));
        REQUIRE(!outcome.ok());
    }
    // Still able to run honest work afterwards.
    auto module = codeswap::CustomModule::make(kMean, "u1", Target::onboard);
    auto outcome = codeswap::execute_custom(module, {2, 4}, json::object(),
                                            std::chrono::milliseconds(2000));
    REQUIRE(outcome.ok());
    CHECK(outcome.result->value.number() == doctest::Approx(3.0));
}

TEST_CASE("store and load round-trip through the slot file") {
    auto dir = fresh_dir("store");
    codeswap::CodeStore store(dir);
    CHECK(!store.load("u1", Target::onboard).has_value());

    auto module = codeswap::CustomModule::make(kIdentity, "u1", Target::onboard);
    store.store(module);
    CHECK(std::filesystem::exists(dir / "u1.onboard.script"));

    auto loaded = store.load("u1", Target::onboard);
    REQUIRE(loaded.has_value());
    CHECK(loaded->source == kIdentity);
    CHECK(loaded->signature == module.signature);
    CHECK(!store.load("u1", Target::offboard).has_value());
}

TEST_CASE("replacement discards the old module for good") {
    auto dir = fresh_dir("replace");
    codeswap::CodeStore store(dir);
    auto a = codeswap::CustomModule::make(kIdentity, "u1", Target::onboard);
    auto b = codeswap::CustomModule::make(kMean, "u1", Target::onboard);
    store.store(a);
    CHECK(store.load("u1", Target::onboard)->signature == a.signature);
    store.store(b);
    CHECK(store.load("u1", Target::onboard)->signature == b.signature);
    // one slot per (user, target): no other file remains
    std::size_t files = 0;
    for (auto& entry : std::filesystem::directory_iterator(dir)) {
        (void)entry;
        ++files;
    }
    CHECK(files == 1);
}

TEST_CASE("slots are keyed by user and target") {
    auto dir = fresh_dir("keys");
    codeswap::CodeStore store(dir);
    store.store(codeswap::CustomModule::make(kIdentity, "u1", Target::onboard));
    store.store(codeswap::CustomModule::make(kMean, "u2", Target::onboard));
    store.store(codeswap::CustomModule::make(kMean, "u1", Target::offboard));
    CHECK(store.load("u1", Target::onboard)->signature == md5_hex(kIdentity));
    CHECK(store.load("u2", Target::onboard)->signature == md5_hex(kMean));
    CHECK(store.load("u1", Target::offboard)->signature == md5_hex(kMean));
}

TEST_CASE("unsafe user ids never touch the filesystem") {
    auto dir = fresh_dir("unsafe");
    codeswap::CodeStore store(dir);
    auto evil = codeswap::CustomModule::make(kIdentity, "../escape", Target::onboard);
    CHECK_THROWS_AS(store.store(evil), std::invalid_argument);
}

TEST_CASE("atomic replacement: loaders only ever see the old or the new module") {
    auto dir = fresh_dir("atomic");
    codeswap::CodeStore store(dir);
    auto a = codeswap::CustomModule::make(kIdentity, "u1", Target::onboard);
    auto b = codeswap::CustomModule::make(kMean, "u1", Target::onboard);
    store.store(a);

    std::atomic<bool> stop{false};
    std::atomic<std::uint64_t> loads{0};
    std::atomic<bool> corrupted{false};
    std::vector<std::thread> readers;
    for (int t = 0; t < 4; ++t) {
        readers.emplace_back([&] {
            while (!stop.load()) {
                auto m = store.load("u1", Target::onboard);
                if (!m || (m->signature != a.signature && m->signature != b.signature)) {
                    corrupted.store(true);
                    return;
                }
                loads.fetch_add(1);
            }
        });
    }
    std::thread writer([&] {
        // Keep replacing until the readers have observed enough interleavings.
        int i = 0;
        while ((i < 2000 || loads.load() < 12000) && i < 200000 && !corrupted.load()) {
            store.store(i % 2 == 0 ? b : a);
            ++i;
        }
        stop.store(true);
    });
    writer.join();
    for (auto& r : readers) r.join();
    CHECK(!corrupted.load());
    CHECK(loads.load() >= 10000);  // interleaving volume
}

TEST_CASE("per-user module isolation under execution") {
    auto dir = fresh_dir("isolation");
    codeswap::CodeStore store(dir);
    store.store(codeswap::CustomModule::make(kIdentity, "u1", Target::onboard));
    store.store(codeswap::CustomModule::make(kMean, "u2", Target::onboard));

    auto m1 = store.load("u1", Target::onboard);
    auto m2 = store.load("u2", Target::onboard);
    auto r1 = codeswap::execute_custom(*m1, {2, 4, 6}, json::object(),
                                       std::chrono::milliseconds(2000));
    auto r2 = codeswap::execute_custom(*m2, {2, 4, 6}, json::object(),
                                       std::chrono::milliseconds(2000));
    REQUIRE(r1.ok());
    REQUIRE(r2.ok());
    CHECK(r1.result->value.is_vector());
    CHECK(r2.result->value.number() == doctest::Approx(4.0));
    CHECK(r1.result->signature != r2.result->signature);
}

TEST_CASE("params reach the executing module") {
    auto module = codeswap::CustomModule::make(
        "fn custom_code(xs) { if (has_param(\"input_model\")) { return param(\"input_model\"); } "
        "return xs; }",
        "u1", Target::onboard);
    json params = {{"input_model", {9.0, 8.0}}};
    auto outcome = codeswap::execute_custom(module, {1}, params,
                                            std::chrono::milliseconds(2000));
    REQUIRE(outcome.ok());
    CHECK(outcome.result->value.vec() == script::Value::Vec{9, 8});
}
