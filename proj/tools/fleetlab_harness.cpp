// Scenario runner and replacement-latency benchmark.

#include <CLI11.hpp>
#include <iostream>

#include "fleetlab/harness.hpp"
#include "fleetlab/util.hpp"

using namespace fleetlab;
using json = nlohmann::json;

int main(int argc, char** argv) {
    CLI::App app{"fleetlab harness"};
    app.require_subcommand(1);

    std::string scenario_file;
    std::string workdir = "harness-work";
    std::string report_file;
    int clients = 3;
    int runs = 5;

    auto* scenario = app.add_subcommand("scenario", "run a scripted scenario");
    scenario->add_option("file", scenario_file, "scenario JSON file")->required();
    scenario->add_option("--workdir", workdir, "working directory for node state and logs");
    scenario->add_option("--report", report_file, "write the JSON report here");

    auto* bench = app.add_subcommand("bench",
                                     "measure code replacement vs scripted redeployment");
    bench->add_option("--clients", clients, "number of client nodes");
    bench->add_option("--runs", runs, "averaging runs");
    bench->add_option("--workdir", workdir, "working directory");
    bench->add_option("--report", report_file, "write the JSON report here");

    CLI11_PARSE(app, argc, argv);

    try {
        auto bins = harness::BinPaths::discover();
        if (scenario->parsed()) {
            auto text = read_text_file(scenario_file);
            if (!text) {
                std::cerr << "cannot read " << scenario_file << "\n";
                return 2;
            }
            json doc = json::parse(*text);
            auto dir = std::filesystem::absolute(scenario_file).parent_path();
            auto report = harness::run_scenario(doc, dir, workdir, bins);
            std::cout << report.to_json().dump(2) << "\n";
            if (!report_file.empty()) write_text_file(report_file, report.to_json().dump(2));
            return report.ok ? 0 : 1;
        }
        if (bench->parsed()) {
            auto report = harness::bench_replace_vs_redeploy(bins, workdir, clients, runs);
            std::cout << report.to_json().dump(2) << "\n";
            if (!report_file.empty()) write_text_file(report_file, report.to_json().dump(2));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
