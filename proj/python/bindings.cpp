#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fleetlab/aggregate.hpp"
#include "fleetlab/codeswap.hpp"
#include "fleetlab/filter.hpp"
#include "fleetlab/md5.hpp"
#include "fleetlab/sensors.hpp"
#include "fleetlab/spec.hpp"
#include "fleetlab/wire.hpp"

namespace py = pybind11;
using namespace fleetlab;
using json = nlohmann::json;

namespace {

py::object json_to_py(const json& j) {
    switch (j.type()) {
        case json::value_t::null: return py::none();
        case json::value_t::boolean: return py::bool_(j.get<bool>());
        case json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
        case json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
        case json::value_t::number_float: return py::float_(j.get<double>());
        case json::value_t::string: return py::str(j.get<std::string>());
        case json::value_t::array: {
            py::list out;
            for (const auto& e : j) out.append(json_to_py(e));
            return out;
        }
        case json::value_t::object: {
            py::dict out;
            for (auto it = j.begin(); it != j.end(); ++it)
                out[py::str(it.key())] = json_to_py(it.value());
            return out;
        }
        default: return py::none();
    }
}

json py_to_json(const py::handle& obj) {
    if (obj.is_none()) return json();
    if (py::isinstance<py::bool_>(obj)) return obj.cast<bool>();
    if (py::isinstance<py::int_>(obj)) return obj.cast<std::int64_t>();
    if (py::isinstance<py::float_>(obj)) return obj.cast<double>();
    if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
    if (py::isinstance<py::list>(obj) || py::isinstance<py::tuple>(obj)) {
        json arr = json::array();
        for (const auto& e : obj) arr.push_back(py_to_json(e));
        return arr;
    }
    if (py::isinstance<py::dict>(obj)) {
        json doc = json::object();
        for (const auto& item : obj.cast<py::dict>())
            doc[item.first.cast<std::string>()] = py_to_json(item.second);
        return doc;
    }
    throw py::type_error("unsupported value type for JSON conversion");
}

py::object value_to_py(const script::Value& v) {
    if (v.is_number()) return py::float_(v.number());
    if (v.is_vector()) {
        py::list out;
        for (double x : v.vec()) out.append(py::float_(x));
        return out;
    }
    if (v.is_bool()) return py::bool_(v.boolean());
    if (v.is_string()) return py::str(v.str());
    return py::none();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "fleetlab core operations";

    m.def("signature", [](const std::string& source) { return codeswap::signature(source); },
          py::arg("source"), "md5 hex tag of a module source");

    m.def("md5_hex", [](const std::string& text) { return md5_hex(text); });

    m.def(
        "validate_assignment",
        [](const py::dict& doc) { return json_to_py(
              [&] {
                  auto result = spec::validate_assignment(py_to_json(doc));
                  json out;
                  out["ok"] = result.ok();
                  json violations = json::array();
                  for (const auto& v : result.violations)
                      violations.push_back({{"field", v.field}, {"reason", v.reason}});
                  out["violations"] = violations;
                  if (result.ok()) out["spec"] = result.spec->to_json();
                  return out;
              }()); },
        py::arg("doc"));

    m.def(
        "parse_filter",
        [](const std::string& text) { return filter::to_string(filter::parse_filter(text)); },
        py::arg("text"), "parses a filter; raises ValueError on bad syntax");

    m.def(
        "eval_filter",
        [](const std::string& text, double v) {
            return filter::eval_filter(filter::parse_filter(text), v);
        },
        py::arg("text"), py::arg("value"));

    m.def(
        "validate_custom",
        [](const std::string& source, const std::string& target, std::uint64_t probe_seed) {
            auto t = codeswap::target_from_name(target);
            if (!t) throw py::value_error("target must be onboard or offboard");
            codeswap::ValidateOptions opts;
            opts.probe_seed = probe_seed;
            return json_to_py(codeswap::validate_custom(source, *t, opts).to_json());
        },
        py::arg("source"), py::arg("target") = "onboard", py::arg("probe_seed") = 1);

    m.def(
        "execute_custom",
        [](const std::string& source, const std::vector<double>& input, const py::dict& params,
           double timeout_s) {
            auto module = codeswap::CustomModule::make(source, "py", codeswap::Target::onboard);
            auto outcome = codeswap::execute_custom(
                module, input, py_to_json(params),
                std::chrono::milliseconds(static_cast<std::int64_t>(timeout_s * 1000)));
            py::dict out;
            out["ok"] = outcome.ok();
            if (outcome.ok()) {
                out["value"] = value_to_py(outcome.result->value);
                out["signature"] = outcome.result->signature;
                out["elapsed_ms"] = outcome.result->elapsed_ms;
            } else {
                out["error"] = outcome.failure->kind_name();
                out["message"] = outcome.failure->message;
                out["elapsed_ms"] = outcome.failure->elapsed_ms;
            }
            return out;
        },
        py::arg("source"), py::arg("input"), py::arg("params") = py::dict(),
        py::arg("timeout_s") = 10.0);

    m.def(
        "majority_filter",
        [](const std::vector<std::pair<std::string, std::string>>& results,
           const std::optional<std::string>& deployed_signature) {
            std::vector<aggregate::ResultEnvelope> envelopes;
            for (const auto& [client_id, sig] : results) {
                aggregate::ResultEnvelope env;
                env.client_id = client_id;
                env.signature = sig;
                env.payload = json(0.0);
                envelopes.push_back(std::move(env));
            }
            auto outcome = aggregate::majority_filter(envelopes, deployed_signature);
            py::dict out;
            out["winner"] = outcome.winning_signature ? py::object(py::str(*outcome.winning_signature))
                                                      : py::object(py::none());
            py::list kept, discarded;
            for (const auto& env : outcome.kept) kept.append(env.client_id);
            for (const auto& env : outcome.discarded) discarded.append(env.client_id);
            out["kept"] = kept;
            out["discarded"] = discarded;
            return out;
        },
        py::arg("results"), py::arg("deployed_signature") = std::nullopt,
        "results: list of (client_id, signature) pairs");

    m.def(
        "encode_frame",
        [](const std::string& kind, const std::string& assignment_id, const std::string& user_id,
           const py::dict& body) {
            wire::Message msg;
            auto k = wire::kind_from_name(kind);
            if (!k) throw py::value_error("unknown kind " + kind);
            msg.kind = *k;
            msg.assignment_id = assignment_id;
            msg.user_id = user_id;
            msg.body = py_to_json(body);
            auto bytes = wire::encode_frame(msg);
            return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        },
        py::arg("kind"), py::arg("assignment_id"), py::arg("user_id"),
        py::arg("body") = py::dict());

    m.def(
        "decode_frame",
        [](const py::bytes& data) {
            std::string raw = data;
            auto res = wire::decode_frame(reinterpret_cast<const std::uint8_t*>(raw.data()),
                                          raw.size());
            py::dict out;
            switch (res.status) {
                case wire::DecodeResult::Status::ok: out["status"] = "ok"; break;
                case wire::DecodeResult::Status::need_more: out["status"] = "need_more"; break;
                case wire::DecodeResult::Status::error: out["status"] = "error"; break;
            }
            out["consumed"] = res.consumed;
            if (res.status == wire::DecodeResult::Status::ok) {
                out["kind"] = wire::kind_name(res.message.kind);
                out["assignment_id"] = res.message.assignment_id;
                out["user_id"] = res.message.user_id;
                out["body"] = json_to_py(res.message.body);
            } else {
                out["error"] = res.error;
            }
            return out;
        },
        py::arg("data"));

    m.def(
        "sensor_samples",
        [](const std::string& signal, std::uint64_t seed, std::size_t count,
           const py::object& catalog) {
            sensors::SignalCatalog cat = catalog.is_none()
                                             ? sensors::SignalCatalog::defaults()
                                             : sensors::SignalCatalog::from_json(
                                                   py_to_json(catalog));
            auto stream = sensors::open_stream(signal, cat, sensors::stream_seed(seed, signal));
            std::vector<double> out;
            out.reserve(count);
            for (std::size_t i = 0; i < count; ++i) out.push_back(stream.next_sample());
            return out;
        },
        py::arg("signal"), py::arg("seed"), py::arg("count"), py::arg("catalog") = py::none());

    m.def("builtin_mean", &aggregate::builtin_mean, py::arg("samples"));
    m.def("builtin_histogram", &aggregate::builtin_histogram, py::arg("samples"));

    py::register_exception<filter::ParseError>(m, "FilterParseError", PyExc_ValueError);
    py::register_exception<sensors::StreamError>(m, "StreamError", PyExc_ValueError);
}
