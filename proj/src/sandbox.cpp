#include "fleetlab/sandbox.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "fleetlab/util.hpp"

namespace fleetlab::sandbox {

const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::timeout: return "timeout";
        case ErrorKind::fault: return "fault";
        case ErrorKind::capability: return "capability";
        case ErrorKind::return_type: return "return_type";
        case ErrorKind::syntax: return "syntax";
        case ErrorKind::entry_point: return "entry_point";
        case ErrorKind::crash: return "crash";
    }
    return "?";
}

bool return_type_ok(const script::Value& v, std::string* why) {
    auto set_why = [&](const std::string& msg) {
        if (why) *why = msg;
    };
    if (v.is_number()) {
        if (!std::isfinite(v.number())) {
            set_why("returned number is not finite");
            return false;
        }
        return true;
    }
    if (v.is_vector()) {
        for (double x : v.vec()) {
            if (!std::isfinite(x)) {
                set_why("returned vector contains a non-finite value");
                return false;
            }
        }
        return true;
    }
    set_why(std::string("return value must be a number or a numeric vector, got ") +
            v.type_name());
    return false;
}

namespace {

json value_to_json(const script::Value& v) {
    if (v.is_number()) return v.number();
    json arr = json::array();
    for (double x : v.vec()) arr.push_back(x);
    return arr;
}

json classify_fault(const script::Fault& f) {
    return {{"status", f.kind == script::FaultKind::capability ? "capability" : "fault"},
            {"message", f.what()}};
}

// ---------------------------------------------------------------------------
// Request execution (runs inside the worker child).

json run_entry_request(const json& req) {
    script::Program prog;
    try {
        prog = script::parse_program(req.value("source", ""));
    } catch (const script::ParseError& e) {
        return {{"status", "syntax"}, {"message", e.what()}};
    }
    const script::Function* entry = prog.find("custom_code");
    if (!entry)
        return {{"status", "entry_point"}, {"message", "no function custom_code defined"}};
    if (entry->params.size() != 1)
        return {{"status", "entry_point"},
                {"message", "custom_code takes exactly one argument, found " +
                                std::to_string(entry->params.size())}};
    script::Interpreter interp(prog, req.value("params", json::object()));
    script::Value result;
    try {
        result = interp.call("custom_code",
                             {script::Value(req.value("input", std::vector<double>()))});
    } catch (const script::Fault& f) {
        return classify_fault(f);
    }
    std::string why;
    if (!return_type_ok(result, &why)) return {{"status", "return_type"}, {"message", why}};
    return {{"status", "ok"}, {"value", value_to_json(result)}};
}

json run_probes_request(const json& req) {
    script::Program prog;
    try {
        prog = script::parse_program(req.value("source", ""));
    } catch (const script::ParseError& e) {
        return {{"stage", "syntax"}, {"message", e.what()}};
    }
    const script::Function* entry = prog.find("custom_code");
    if (!entry)
        return {{"stage", "entry_point"}, {"message", "no function custom_code defined"}};
    if (entry->params.size() != 1)
        return {{"stage", "entry_point"},
                {"message", "custom_code takes exactly one argument, found " +
                                std::to_string(entry->params.size())}};
    const json& inputs = req["inputs"];
    const json& params_list = req["params_list"];
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        script::Interpreter interp(prog, params_list[i]);
        script::Value result;
        try {
            result = interp.call("custom_code",
                                 {script::Value(inputs[i].get<std::vector<double>>())});
        } catch (const script::Fault& f) {
            const char* stage =
                f.kind == script::FaultKind::capability ? "capability" : "probe_run";
            return {{"stage", stage},
                    {"message", std::string(f.what()) + " (probe " + std::to_string(i) + ")"}};
        }
        std::string why;
        if (!return_type_ok(result, &why))
            return {{"stage", "return_type"},
                    {"message", why + " (probe " + std::to_string(i) + ")"}};
    }
    return {{"stage", "ok"}};
}

json dispatch_request(const json& req) {
    if (req.value("mode", "") == "probes") return run_probes_request(req);
    return run_entry_request(req);
}

// ---------------------------------------------------------------------------
// Pre-forked one-shot workers. Each execution consumes an idle worker and
// the pool refills in the background, keeping fork() off the latency path.
// One worker per request also means every execution starts from a blank
// process image.

bool write_all_fd(int fd, const void* data, std::size_t len) {
    const char* p = static_cast<const char*>(data);
    while (len > 0) {
        ssize_t n = ::write(fd, p, len);
        if (n <= 0) {
            if (errno == EINTR) continue;
            return false;
        }
        p += n;
        len -= static_cast<std::size_t>(n);
    }
    return true;
}

struct Worker {
    pid_t pid = -1;
    int request_fd = -1;   // parent writes
    int response_fd = -1;  // parent reads

    void close_fds() {
        if (request_fd >= 0) ::close(request_fd);
        if (response_fd >= 0) ::close(response_fd);
        request_fd = response_fd = -1;
    }
};

// A worker must not hold copies of the host's sockets or of other workers'
// pipes (that would block their EOFs), so it drops every other descriptor
// right after the fork.
void close_other_fds(int keep1, int keep2) {
    DIR* dir = opendir("/proc/self/fd");
    if (dir) {
        int dir_fd = dirfd(dir);
        std::vector<int> to_close;
        while (struct dirent* entry = readdir(dir)) {
            int fd = std::atoi(entry->d_name);
            if (fd <= 2 || fd == keep1 || fd == keep2 || fd == dir_fd) continue;
            if (entry->d_name[0] == '.') continue;
            to_close.push_back(fd);
        }
        closedir(dir);
        for (int fd : to_close) ::close(fd);
        return;
    }
    for (int fd = 3; fd < 1024; ++fd) {
        if (fd != keep1 && fd != keep2) ::close(fd);
    }
}

[[noreturn]] void worker_main(int request_fd, int response_fd) {
    prctl(PR_SET_PDEATHSIG, SIGKILL);
    close_other_fds(request_fd, response_fd);
    // One request and one response, each 4-byte little-endian length plus a
    // JSON document.
    auto read_exact = [&](void* buf, std::size_t want) {
        char* p = static_cast<char*>(buf);
        std::size_t done = 0;
        while (done < want) {
            ssize_t n = ::read(request_fd, p + done, want - done);
            if (n <= 0) {
                if (n < 0 && errno == EINTR) continue;
                return false;
            }
            done += static_cast<std::size_t>(n);
        }
        return true;
    };
    std::uint32_t len = 0;
    if (!read_exact(&len, 4) || len > (64u << 20)) _exit(1);
    std::string body(len, '\0');
    if (!read_exact(body.data(), len)) _exit(1);
    std::string out;
    try {
        json req = json::parse(body, nullptr, false);
        if (req.is_discarded()) _exit(1);
        out = dispatch_request(req).dump();
    } catch (...) {
        out = json{{"status", "fault"}, {"message", "internal sandbox error"}}.dump();
    }
    std::uint32_t out_len = static_cast<std::uint32_t>(out.size());
    write_all_fd(response_fd, &out_len, 4);
    write_all_fd(response_fd, out.data(), out.size());
    ::close(response_fd);
    _exit(0);
}

class WorkerPool {
public:
    static WorkerPool& instance() {
        // Leaked deliberately: the detached refill thread may outlive static
        // destruction.
        static WorkerPool* pool = new WorkerPool();
        return *pool;
    }

    Worker take() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            if (!ready_.empty()) {
                Worker w = ready_.front();
                ready_.pop_front();
                refill_cv_.notify_one();
                return w;
            }
        }
        refill_cv_.notify_one();
        return spawn();
    }

    static Worker spawn() {
        Worker w;
        int req[2];
        int resp[2];
        if (pipe(req) != 0) return w;
        if (pipe(resp) != 0) {
            ::close(req[0]);
            ::close(req[1]);
            return w;
        }
        pid_t pid = fork();
        if (pid < 0) {
            ::close(req[0]);
            ::close(req[1]);
            ::close(resp[0]);
            ::close(resp[1]);
            return w;
        }
        if (pid == 0) {
            ::close(req[1]);
            ::close(resp[0]);
            worker_main(req[0], resp[1]);
        }
        ::close(req[0]);
        ::close(resp[1]);
        w.pid = pid;
        w.request_fd = req[1];
        w.response_fd = resp[0];
        return w;
    }

private:
    WorkerPool() {
        // Pipe writes to a worker that died early must not kill the host.
        signal(SIGPIPE, SIG_IGN);
        refill_thread_ = std::thread([this] { refill_loop(); });
        refill_thread_.detach();
    }

    void refill_loop() {
        while (true) {
            std::unique_lock<std::mutex> lock(mutex_);
            refill_cv_.wait(lock, [&] { return ready_.size() < kTarget; });
            lock.unlock();
            Worker w = spawn();
            if (w.pid < 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
                continue;
            }
            lock.lock();
            ready_.push_back(w);
        }
    }

    static constexpr std::size_t kTarget = 3;
    std::mutex mutex_;
    std::condition_variable refill_cv_;
    std::deque<Worker> ready_;
    std::thread refill_thread_;
};

struct ChildResult {
    enum class Status { completed, timed_out, died } status = Status::died;
    json payload;
    int signal = 0;
    double elapsed_ms = 0;
};

// Hands the request to an idle worker and enforces the deadline by killing
// the worker process from outside.
ChildResult run_in_worker(const json& request, std::chrono::milliseconds timeout) {
    ChildResult res;
    auto start = mono_now();

    Worker w = WorkerPool::instance().take();
    if (w.pid < 0) {
        res.status = ChildResult::Status::completed;
        res.payload = {{"status", "fault"}, {"message", "cannot start sandbox worker"}};
        return res;
    }

    std::string body = request.dump();
    std::uint32_t len = static_cast<std::uint32_t>(body.size());
    bool sent = write_all_fd(w.request_fd, &len, 4) &&
                write_all_fd(w.request_fd, body.data(), body.size());
    ::close(w.request_fd);
    w.request_fd = -1;
    if (!sent) {
        ::kill(w.pid, SIGKILL);
        waitpid(w.pid, nullptr, 0);
        w.close_fds();
        res.status = ChildResult::Status::died;
        return res;
    }

    // The execution clock starts once the request is delivered.
    auto deadline = mono_now() + timeout;
    std::string collected;
    bool complete = false;
    std::uint32_t expect = 0;
    bool have_len = false;
    while (!complete) {
        if (have_len && collected.size() >= 4u + expect) {
            complete = true;
            break;
        }
        auto now = mono_now();
        if (now >= deadline) break;
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
        struct pollfd pfd{w.response_fd, POLLIN, 0};
        int rc = poll(&pfd, 1, static_cast<int>(left.count()) + 1);
        if (rc < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (rc == 0) break;
        char buf[8192];
        ssize_t n = ::read(w.response_fd, buf, sizeof(buf));
        if (n < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (n == 0) break;  // worker died before completing the response
        collected.append(buf, static_cast<std::size_t>(n));
        if (!have_len && collected.size() >= 4) {
            std::memcpy(&expect, collected.data(), 4);
            have_len = true;
        }
    }

    int wstatus = 0;
    if (!complete) {
        ::kill(w.pid, SIGKILL);
        waitpid(w.pid, &wstatus, 0);
        w.close_fds();
        res.status = ChildResult::Status::timed_out;
        res.elapsed_ms = elapsed_ms(start);
        return res;
    }
    waitpid(w.pid, &wstatus, 0);
    w.close_fds();
    res.elapsed_ms = elapsed_ms(start);

    json doc = json::parse(collected, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        res.status = ChildResult::Status::died;
        res.signal = WIFSIGNALED(wstatus) ? WTERMSIG(wstatus) : 0;
        return res;
    }
    res.status = ChildResult::Status::completed;
    res.payload = std::move(doc);
    return res;
}

}  // namespace

Outcome run_entry(const std::string& source, const std::vector<double>& input,
                  const json& params, std::chrono::milliseconds timeout) {
    json request = {{"mode", "entry"}, {"source", source}, {"input", input}, {"params", params}};
    ChildResult child = run_in_worker(request, timeout);

    Outcome out;
    out.elapsed_ms = child.elapsed_ms;
    switch (child.status) {
        case ChildResult::Status::timed_out:
            out.error = ErrorKind::timeout;
            out.message = "execution exceeded " + std::to_string(timeout.count()) + " ms";
            return out;
        case ChildResult::Status::died:
            out.error = ErrorKind::crash;
            out.message = child.signal != 0
                              ? "sandbox terminated by signal " + std::to_string(child.signal)
                              : "sandbox exited without a result";
            return out;
        case ChildResult::Status::completed:
            break;
    }
    const json& doc = child.payload;
    std::string status = doc.value("status", "fault");
    if (status == "ok") {
        const json& v = doc["value"];
        if (v.is_number()) {
            out.value = script::Value(v.get<double>());
        } else {
            script::Value::Vec vec;
            vec.reserve(v.size());
            for (const auto& x : v) vec.push_back(x.get<double>());
            out.value = script::Value(std::move(vec));
        }
        std::string why;
        if (!return_type_ok(out.value, &why)) {
            out.error = ErrorKind::return_type;
            out.message = why;
            return out;
        }
        out.ok = true;
        return out;
    }
    out.message = doc.value("message", "");
    if (status == "syntax") out.error = ErrorKind::syntax;
    else if (status == "entry_point") out.error = ErrorKind::entry_point;
    else if (status == "capability") out.error = ErrorKind::capability;
    else if (status == "return_type") out.error = ErrorKind::return_type;
    else out.error = ErrorKind::fault;
    return out;
}

ProbeReport run_probes(const std::string& source,
                       const std::vector<std::vector<double>>& inputs,
                       std::chrono::milliseconds timeout,
                       const std::function<json(const std::vector<double>&)>& params_for_probe) {
    json inputs_json = json::array();
    json params_list = json::array();
    for (const auto& input : inputs) {
        inputs_json.push_back(input);
        params_list.push_back(params_for_probe ? params_for_probe(input) : json::object());
    }
    json request = {{"mode", "probes"},
                    {"source", source},
                    {"inputs", inputs_json},
                    {"params_list", params_list}};
    ChildResult child = run_in_worker(request, timeout);

    ProbeReport report;
    switch (child.status) {
        case ChildResult::Status::timed_out:
            report.stage = "probe_run";
            report.message = "probe execution exceeded " + std::to_string(timeout.count()) + " ms";
            return report;
        case ChildResult::Status::died:
            report.stage = "probe_run";
            report.message = child.signal != 0
                                 ? "probe terminated by signal " + std::to_string(child.signal)
                                 : "probe exited without a result";
            return report;
        case ChildResult::Status::completed:
            break;
    }
    std::string stage = child.payload.value("stage", "probe_run");
    if (stage == "ok") {
        report.ok = true;
        return report;
    }
    report.stage = stage;
    report.message = child.payload.value("message", "");
    return report;
}

}  // namespace fleetlab::sandbox
