#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fleetlab/script.hpp"

namespace fleetlab::sandbox {

using json = nlohmann::json;

// Runs user scripts in a forked child process so that faults cannot touch
// the host and a timeout can be enforced by killing the child from outside
// (no cooperative polling inside the script).

enum class ErrorKind { timeout, fault, capability, return_type, syntax, entry_point, crash };

const char* error_kind_name(ErrorKind k);

struct Outcome {
    bool ok = false;
    script::Value value;  // number or numeric vector when ok
    ErrorKind error = ErrorKind::fault;
    std::string message;
    double elapsed_ms = 0;
};

/// Calls custom_code(input) in a fresh child. The returned value has already
/// passed the numeric-and-finite return contract inside the child; callers
/// re-check it anyway.
Outcome run_entry(const std::string& source, const std::vector<double>& input,
                  const json& params, std::chrono::milliseconds timeout);

struct ProbeReport {
    bool ok = false;
    std::string stage;  // syntax | entry_point | probe_run | return_type | capability
    std::string message;
};

/// Runs every probe input through custom_code inside one child process and
/// type-checks each result. Reports the first failure. params_for_probe, when
/// set, supplies the parameter map a probe input runs under (mirroring the
/// execution environment of the target node).
ProbeReport run_probes(const std::string& source,
                       const std::vector<std::vector<double>>& inputs,
                       std::chrono::milliseconds timeout,
                       const std::function<json(const std::vector<double>&)>& params_for_probe =
                           nullptr);

/// True when the value satisfies the return contract: a finite number or a
/// vector of finite numbers.
bool return_type_ok(const script::Value& v, std::string* why = nullptr);

}  // namespace fleetlab::sandbox
