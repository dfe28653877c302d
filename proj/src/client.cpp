#include "fleetlab/client.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "fleetlab/aggregate.hpp"
#include "fleetlab/bridge.hpp"
#include "fleetlab/filter.hpp"
#include "fleetlab/util.hpp"

namespace fleetlab::client {

using wire::Kind;
using wire::Message;
using json = wire::json;

ClientNode::ClientNode(ClientConfig config) : config_(std::move(config)) {
    if (config_.store_dir.empty()) config_.store_dir = config_.client_id + "-store";
    store_ = std::make_unique<codeswap::CodeStore>(config_.store_dir);
}

ClientNode::~ClientNode() {
    stop();
}

bool ClientNode::start() {
    auto socket = net::connect_retry(
        config_.bridge_host, config_.bridge_port,
        std::chrono::milliseconds(static_cast<std::int64_t>(config_.connect_wait_s * 1000)),
        std::chrono::milliseconds(
            static_cast<std::int64_t>(config_.connect_retry_interval_s * 1000)));
    if (!socket) return false;
    conn_ = std::make_shared<net::Conn>(std::move(*socket));

    Message reg;
    reg.kind = Kind::status;
    reg.assignment_id = bridge::kSystemId;
    reg.user_id = bridge::kSystemId;
    reg.body = {{"event", "register"},
                {"client_id", config_.client_id},
                {"model", config_.model},
                {"time_scale", config_.time_scale}};
    if (!conn_->send(reg)) return false;

    auto ack = conn_->recv();
    if (ack.status != net::Conn::RecvStatus::ok || ack.message.kind != Kind::ack ||
        ack.message.body.value("event", "") != "registered")
        return false;

    running_.store(true);
    recv_thread_ = std::thread([this] { recv_loop(); });
    return true;
}

void ClientNode::stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) return;
    if (conn_) conn_->shutdown();
    if (recv_thread_.joinable()) recv_thread_.join();
    std::vector<TaskThread> tasks;
    {
        std::lock_guard<std::mutex> lock(tasks_mutex_);
        tasks.swap(task_threads_);
    }
    for (auto& t : tasks) {
        if (t.thread.joinable()) t.thread.join();
    }
    running_.store(false);
}

void ClientNode::wait() {
    std::unique_lock<std::mutex> lock(exit_mutex_);
    exit_cv_.wait(lock, [&] { return recv_loop_done_; });
}

void ClientNode::reap_finished() {
    std::lock_guard<std::mutex> lock(tasks_mutex_);
    for (auto it = task_threads_.begin(); it != task_threads_.end();) {
        if (it->done->load() && it->thread.joinable()) {
            it->thread.join();
            it = task_threads_.erase(it);
        } else {
            ++it;
        }
    }
}

void ClientNode::spawn(std::function<void()> fn) {
    reap_finished();
    TaskThread slot;
    slot.done = std::make_shared<std::atomic<bool>>(false);
    auto done = slot.done;
    slot.thread = std::thread([fn = std::move(fn), done] {
        fn();
        done->store(true);
    });
    std::lock_guard<std::mutex> lock(tasks_mutex_);
    task_threads_.push_back(std::move(slot));
}

void ClientNode::recv_loop() {
    while (!stopping_.load()) {
        auto received = conn_->recv();
        if (received.status != net::Conn::RecvStatus::ok) break;
        Message& msg = received.message;
        switch (msg.kind) {
            case Kind::task: {
                spec::TaskSpec task;
                try {
                    task = spec::TaskSpec::from_json(msg.body);
                } catch (const json::exception& e) {
                    send_envelope(msg.assignment_id,
                                  {{"client_id", config_.client_id},
                                   {"iteration", msg.body.value("iteration", 0)},
                                   {"signature", ""},
                                   {"error", {{"kind", "bad_task"}, {"message", e.what()}}}});
                    break;
                }
                task.assignment_id = msg.assignment_id;
                task.user_id = msg.user_id;
                spawn([this, task = std::move(task)] { run_task(task); });
                break;
            }
            case Kind::deploy_code:
                spawn([this, msg] { handle_deploy(msg); });
                break;
            case Kind::status: {
                if (msg.body.value("event", "") == "ping") {
                    Message pong;
                    pong.kind = Kind::ack;
                    pong.body = {{"event", "pong"},
                                 {"req_id", msg.body.value("req_id", "")},
                                 {"client_id", config_.client_id},
                                 {"start_time_ms", bridge::process_start_ms()},
                                 {"pid", static_cast<std::int64_t>(::getpid())}};
                    conn_->send(pong);
                }
                break;
            }
            default:
                break;
        }
    }
    running_.store(false);
    {
        std::lock_guard<std::mutex> lock(exit_mutex_);
        recv_loop_done_ = true;
    }
    exit_cv_.notify_all();
}

void ClientNode::send_envelope(const std::string& assignment_id, const json& body) {
    Message msg;
    msg.kind = Kind::result;
    msg.assignment_id = assignment_id;
    msg.user_id = config_.client_id;
    msg.body = body;
    conn_->send(msg);
}

void ClientNode::run_task(spec::TaskSpec task) {
    json envelope;
    envelope["client_id"] = config_.client_id;
    envelope["iteration"] = task.iteration;
    envelope["signature"] = "";
    auto fail = [&](const std::string& kind, const std::string& message, json extra = {}) {
        json err = std::move(extra);
        err["kind"] = kind;
        err["message"] = message;
        envelope["error"] = err;
        send_envelope(task.assignment_id, envelope);
    };

    const spec::OnboardTask& onboard = task.onboard;
    if (onboard.signals.empty()) {
        fail("bad_task", "task carries no signal");
        return;
    }
    const std::string& signal = onboard.signals.front();

    std::optional<filter::FilterExpr> filt;
    if (onboard.filters) {
        try {
            filt = filter::parse_filter(*onboard.filters);
        } catch (const filter::ParseError& e) {
            fail("bad_filter", e.what());
            return;
        }
    }

    std::optional<sensors::SignalStream> stream;
    try {
        stream.emplace(sensors::open_stream(
            signal, config_.catalog, sensors::stream_seed(config_.sensor_seed, signal)));
    } catch (const sensors::StreamError& e) {
        fail("unknown_signal", e.what());
        return;
    }

    // Collection phase: draw at the (time-compressed) task frequency, keep
    // samples that pass the filter, stop at task.samples accepted or at the
    // wall-clock cap.
    double scale = std::max(config_.time_scale, 1e-9);
    double interval_s = 1.0 / (static_cast<double>(onboard.frequency) * scale);
    double nominal_s = onboard.nominal_duration_s() / scale;
    double cap_s = std::max(config_.collect_cap_min_s, nominal_s * config_.collect_cap_mult);

    std::vector<double> buffer;
    buffer.reserve(static_cast<std::size_t>(onboard.samples));
    auto t0 = std::chrono::steady_clock::now();
    auto cap_deadline = t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                 std::chrono::duration<double>(cap_s));
    auto next_draw = t0;
    std::uint64_t draws = 0;
    while (buffer.size() < static_cast<std::size_t>(onboard.samples)) {
        if (stopping_.load()) return;
        auto now = std::chrono::steady_clock::now();
        if (now >= cap_deadline) {
            fail("partial", "collection cap reached after " + std::to_string(buffer.size()) +
                                " of " + std::to_string(onboard.samples) + " samples",
                 {{"accepted", buffer.size()}, {"draws", draws}});
            return;
        }
        if (now < next_draw) std::this_thread::sleep_until(std::min(next_draw, cap_deadline));
        double value;
        try {
            value = stream->next_sample();
        } catch (const sensors::StreamError& e) {
            fail("stream_end", e.what(), {{"accepted", buffer.size()}});
            return;
        }
        ++draws;
        next_draw += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(interval_s));
        if (!filt || filter::eval_filter(*filt, value)) buffer.push_back(value);
    }

    // Computation phase; for custom code the module is loaded freshly from
    // the store, so a replacement deployed during collection takes effect
    // right here.
    switch (onboard.computation) {
        case spec::OnboardComputation::collect:
            envelope["signature"] = "builtin:collect";
            envelope["payload"] = buffer;
            break;
        case spec::OnboardComputation::mean:
            envelope["signature"] = "builtin:mean";
            envelope["payload"] = aggregate::builtin_mean(buffer);
            break;
        case spec::OnboardComputation::histogram:
            envelope["signature"] = "builtin:histogram";
            envelope["payload"] = aggregate::builtin_histogram(buffer);
            break;
        case spec::OnboardComputation::custom: {
            auto module = store_->load(task.user_id, codeswap::Target::onboard);
            if (!module) {
                fail("not_deployed", "no custom code for user " + task.user_id);
                return;
            }
            json params =
                onboard.parameters.is_object() ? onboard.parameters : json::object();
            if (task.input_model) params["input_model"] = *task.input_model;
            auto outcome = codeswap::execute_custom(
                *module, buffer, params,
                std::chrono::milliseconds(
                    static_cast<std::int64_t>(config_.exec_timeout_s * 1000)));
            envelope["signature"] = module->signature;
            if (!outcome.ok()) {
                fail(outcome.failure->kind_name(), outcome.failure->message,
                     {{"elapsed_ms", outcome.failure->elapsed_ms}});
                return;
            }
            if (outcome.result->value.is_number())
                envelope["payload"] = outcome.result->value.number();
            else
                envelope["payload"] = outcome.result->value.vec();
            break;
        }
    }
    send_envelope(task.assignment_id, envelope);
}

void ClientNode::handle_deploy(Message msg) {
    auto t0 = mono_now();
    std::string req_id = msg.body.value("req_id", "");
    Message ack;
    ack.kind = Kind::ack;
    auto reject = [&](const std::string& stage, const std::string& message) {
        ack.body = {{"event", "deploy_ack"}, {"req_id", req_id},     {"ok", false},
                    {"stage", stage},        {"message", message},   {"client_id", config_.client_id}};
        conn_->send(ack);
    };

    auto decoded = base64_decode(msg.body.value("custom_code", ""));
    if (!decoded) {
        reject("syntax", "custom_code is not valid base64");
        return;
    }
    if (!is_safe_identifier(msg.user_id)) {
        reject("syntax", "bad user id");
        return;
    }
    // Defensive re-validation on the node, independent of the front-end.
    codeswap::ValidateOptions opts;
    opts.probe_seed = splitmix64(static_cast<std::uint64_t>(now_unix_ms()) ^
                                 fnv1a64(config_.client_id));
    double t_preval = elapsed_ms(t0);
    auto report = codeswap::validate_custom(*decoded, codeswap::Target::onboard, opts);
    double t_val = elapsed_ms(t0);
    if (std::getenv("FLEETLAB_DEPLOY_TRACE"))
        std::fprintf(stderr, "client deploy: preval=%.2f val=%.2f\n", t_preval, t_val);
    if (!report.ok) {
        reject(report.violations.front().stage, report.violations.front().message);
        return;
    }
    auto module = codeswap::CustomModule::make(*decoded, msg.user_id, codeswap::Target::onboard);
    try {
        store_->store(module);
    } catch (const std::exception& e) {
        reject("store", e.what());
        return;
    }
    ack.body = {{"event", "deploy_ack"},
                {"req_id", req_id},
                {"ok", true},
                {"signature", module.signature},
                {"client_id", config_.client_id}};
    conn_->send(ack);
}

}  // namespace fleetlab::client
