// Analyst front-end: validates specs and custom modules locally, submits
// assignments, deploys code, watches live results.
//
// Exit codes: 0 success, 1 domain rejection, 2 I/O or parse failure.

#include <CLI11.hpp>
#include <iostream>

#include "fleetlab/codeswap.hpp"
#include "fleetlab/session.hpp"
#include "fleetlab/spec.hpp"
#include "fleetlab/util.hpp"

using namespace fleetlab;
using json = nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRejected = 1;
constexpr int kIoError = 2;

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 4700;
};

Endpoint parse_endpoint(const std::string& text) {
    Endpoint ep;
    auto pos = text.rfind(':');
    if (pos == std::string::npos) {
        ep.host = text;
        return ep;
    }
    ep.host = text.substr(0, pos);
    ep.port = static_cast<std::uint16_t>(std::stoi(text.substr(pos + 1)));
    return ep;
}

std::optional<json> load_json_file(const std::string& path, std::string* error) {
    auto text = read_text_file(path);
    if (!text) {
        *error = "cannot read " + path;
        return std::nullopt;
    }
    json doc = json::parse(*text, nullptr, false);
    if (doc.is_discarded()) {
        // Re-parse with exceptions to get an offset.
        try {
            json::parse(*text);
        } catch (const json::parse_error& e) {
            *error = e.what();
            return std::nullopt;
        }
        *error = "malformed JSON";
        return std::nullopt;
    }
    return doc;
}

json selector_from_text(const std::string& text) {
    if (text == "all") return json("all");
    if (text.rfind("random:", 0) == 0) return json{{"random", std::stoll(text.substr(7))}};
    if (text.rfind("ids:", 0) == 0) return json{{"ids", split(text.substr(4), ',')}};
    if (text.rfind("model:", 0) == 0) return json{{"model", text.substr(6)}};
    throw CLI::ValidationError("--clients", "expected all | random:N | ids:c1,c2 | model:NAME");
}

int run_validate(const std::string& spec_file, const std::string& user) {
    std::string error;
    auto doc = load_json_file(spec_file, &error);
    if (!doc) {
        std::cerr << "error: " << error << "\n";
        return kIoError;
    }
    if (!doc->contains("user_id") && !user.empty()) (*doc)["user_id"] = user;
    auto result = spec::validate_assignment(*doc);
    if (result.ok()) {
        std::cout << "valid\n";
        return kOk;
    }
    for (const auto& v : result.violations)
        std::cout << v.field << ": " << v.reason << "\n";
    return kRejected;
}

int run_deploy(const Endpoint& ep, const std::string& user, const std::string& target,
               const std::string& code_file, const std::string& clients) {
    auto source = read_text_file(code_file);
    if (!source) {
        std::cerr << "error: cannot read " << code_file << "\n";
        return kIoError;
    }
    auto t = codeswap::target_from_name(target);
    if (!t) {
        std::cerr << "error: target must be onboard or offboard\n";
        return kIoError;
    }
    // Local validation first; nothing is sent when it fails.
    auto report = codeswap::validate_custom(*source, *t);
    if (!report.ok) {
        for (const auto& v : report.violations)
            std::cout << "rejected (" << v.stage << "): " << v.message << "\n";
        return kRejected;
    }
    std::cout << "signature " << codeswap::signature(*source) << "\n";
    try {
        session::Session s(ep.host, ep.port, user);
        auto reply = s.deploy(*t == codeswap::Target::onboard ? "deploy_onboard"
                                                              : "deploy_offboard",
                              *source, selector_from_text(clients));
        if (!reply.ok) {
            std::cout << "bridge rejected: " << reply.error << "\n";
            if (reply.body.contains("violations"))
                for (const auto& v : reply.body["violations"])
                    std::cout << "  " << v.value("stage", "") << ": " << v.value("message", "")
                              << "\n";
            return kRejected;
        }
        if (*t == codeswap::Target::offboard) {
            std::cout << "deployed offboard\n";
            return kOk;
        }
        for (const auto& ack : reply.body["acks"])
            std::cout << "ack " << ack.value("client_id", "") << " "
                      << ack.value("signature", "") << "\n";
        for (const auto& f : reply.body["failures"])
            std::cout << "failed " << f.value("client_id", "") << ": "
                      << f.value("message", "") << "\n";
        bool all_ok = reply.body.value("ok", false);
        std::cout << (all_ok ? "deployed onboard\n" : "partial deployment; repeat the update\n");
        return all_ok ? kOk : kRejected;
    } catch (const net::NetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoError;
    }
}

int run_submit(const Endpoint& ep, const std::string& user, const std::string& spec_file) {
    std::string error;
    auto doc = load_json_file(spec_file, &error);
    if (!doc) {
        std::cerr << "error: " << error << "\n";
        return kIoError;
    }
    if (!doc->contains("user_id")) (*doc)["user_id"] = user;
    auto result = spec::validate_assignment(*doc);
    if (!result.ok()) {
        for (const auto& v : result.violations)
            std::cout << v.field << ": " << v.reason << "\n";
        return kRejected;
    }
    try {
        session::Session s(ep.host, ep.port, user);
        auto reply = s.submit(*doc);
        if (!reply.ok) {
            std::cout << "bridge rejected: " << reply.error << "\n";
            return kRejected;
        }
        std::cout << reply.assignment_id << "\n";
        return kOk;
    } catch (const net::NetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoError;
    }
}

void print_record(std::ostream& out, const json& record) {
    std::string status = record.value("status", "");
    if (status == "inconsistent") {
        out << record.value("assignment_id", "") << " iteration "
            << record.value("iteration", -1) << " discarded: inconsistent signatures\n";
        return;
    }
    out << record.value("assignment_id", "") << " iteration " << record.value("iteration", -1)
        << " " << status;
    if (record.contains("signature") && record["signature"].is_string())
        out << " signature " << record["signature"].get<std::string>();
    if (record.contains("offboard") && !record["offboard"].is_null())
        out << " offboard " << record["offboard"].dump();
    out << "\n";
}

int run_watch(const Endpoint& ep, const std::string& user, const std::string& assignment_id) {
    try {
        session::Session s(ep.host, ep.port, user);
        auto reply = s.watch(assignment_id, [](const json& record) {
            print_record(std::cout, record);
            return true;
        });
        if (!reply.ok) {
            std::cout << "error: " << reply.error << "\n";
            return kRejected;
        }
        std::cout << "finished (" << reply.body.value("delivered", 0) << " iterations)\n";
        return kOk;
    } catch (const net::NetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoError;
    }
}

int run_results(const Endpoint& ep, const std::string& user, const std::string& assignment_id,
                const std::string& out_file) {
    try {
        session::Session s(ep.host, ep.port, user);
        auto reply = s.fetch_results(assignment_id);
        if (!reply.ok) {
            std::cout << "error: " << reply.error << "\n";
            return kRejected;
        }
        std::string lines;
        for (const auto& record : reply.body["records"]) lines += record.dump() + "\n";
        if (out_file.empty() || out_file == "-") {
            std::cout << lines;
        } else {
            write_text_file(out_file, lines);
            std::cout << reply.body["records"].size() << " records written to " << out_file
                      << "\n";
        }
        return kOk;
    } catch (const net::NetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoError;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoError;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fleetlab analyst CLI"};
    app.require_subcommand(1);

    std::string bridge = "127.0.0.1:4700";
    std::string user = "u1";
    app.add_option("--bridge", bridge, "bridge address host:port");
    app.add_option("--user", user, "user id for this session");

    std::string spec_file, code_file, target, assignment_id, out_file;
    std::string clients = "all";

    auto* validate = app.add_subcommand("validate", "validate an assignment spec file");
    validate->add_option("spec", spec_file, "assignment spec JSON file")->required();

    auto* deploy = app.add_subcommand("deploy", "validate and deploy a custom-code module");
    deploy->add_option("target", target, "onboard | offboard")->required();
    deploy->add_option("file", code_file, "module source file")->required();
    deploy->add_option("--clients", clients, "all | random:N | ids:c1,c2 | model:NAME");

    auto* submit = app.add_subcommand("submit", "submit an assignment");
    submit->add_option("spec", spec_file, "assignment spec JSON file")->required();

    auto* watch = app.add_subcommand("watch", "stream live iteration results");
    watch->add_option("assignment", assignment_id, "assignment id")->required();

    auto* results = app.add_subcommand("results", "fetch delivered iteration results");
    results->add_option("assignment", assignment_id, "assignment id")->required();
    results->add_option("-o,--out", out_file, "output file (JSON lines); stdout by default");

    CLI11_PARSE(app, argc, argv);

    Endpoint ep = parse_endpoint(bridge);
    if (validate->parsed()) return run_validate(spec_file, user);
    if (deploy->parsed()) return run_deploy(ep, user, target, code_file, clients);
    if (submit->parsed()) return run_submit(ep, user, spec_file);
    if (watch->parsed()) return run_watch(ep, user, assignment_id);
    if (results->parsed()) return run_results(ep, user, assignment_id, out_file);
    return kIoError;
}
