#include "fleetlab/audit.hpp"

#include "fleetlab/util.hpp"

namespace fleetlab::audit {

AuditLog::AuditLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    out_.open(path_, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open audit log " + path_.string());
}

void AuditLog::append(const std::string& assignment_id, std::optional<std::int64_t> iteration,
                      const std::string& event, const std::string& signature,
                      const std::string& client_id) {
    json line;
    line["ts"] = now_unix_ms();
    line["assignment_id"] = assignment_id;
    line["iteration"] = iteration ? json(*iteration) : json();
    line["event"] = event;
    line["signature"] = signature;
    line["client_id"] = client_id;
    std::lock_guard<std::mutex> lock(mutex_);
    out_ << line.dump() << '\n';
    out_.flush();
}

std::vector<json> AuditLog::read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::vector<json> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (!doc.is_discarded()) lines.push_back(std::move(doc));
    }
    return lines;
}

}  // namespace fleetlab::audit
