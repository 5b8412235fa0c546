#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "common.hpp"
#include "subprocess.hpp"

namespace ctfagent {

struct FlagContract {
    enum class Kind { LITERAL, PATTERN } kind = Kind::LITERAL;
    std::string value;  // literal flag or regex source

    // Pattern used by passive flag detection in agent output.
    std::string detection_pattern() const {
        if (kind == Kind::PATTERN) return value;
        static const std::string specials = R"(\^$.|?*+()[]{})";
        std::string escaped;
        for (char c : value) {
            if (specials.find(c) != std::string::npos) escaped.push_back('\\');
            escaped.push_back(c);
        }
        return escaped;
    }

    // LITERAL compares exact bytes after trimming one trailing newline;
    // PATTERN must match the full string.
    bool accepts(std::string flag) const {
        if (!flag.empty() && flag.back() == '\n') flag.pop_back();
        if (kind == Kind::LITERAL) return flag == value;
        return std::regex_match(flag, std::regex(value));
    }
};

struct ServiceSpec {
    std::string script;       // path relative to the challenge root
    bool line_protocol = true;
};

struct ChallengeDescriptor {
    std::string id;
    std::string name;
    std::string category;
    fs::path root;
    std::vector<std::string> files;
    std::optional<ServiceSpec> service;
    FlagContract flag;
    int points = 0;
};

struct ScanDiagnostic {
    fs::path path;
    std::string message;
};

struct ChallengeIndex {
    std::vector<ChallengeDescriptor> challenges;  // sorted by id
    std::vector<ScanDiagnostic> diagnostics;

    const ChallengeDescriptor* find(const std::string& id) const {
        for (const auto& c : challenges)
            if (c.id == id) return &c;
        return nullptr;
    }
};

inline ChallengeDescriptor parse_challenge_json(const fs::path& dir, const json& j) {
    ChallengeDescriptor d;
    d.id = j.at("id").get<std::string>();
    d.name = j.value("name", d.id);
    d.category = j.value("category", std::string("misc"));
    d.root = dir;
    d.points = j.value("points", 0);
    for (const auto& f : j.value("files", json::array())) {
        std::string name = f.get<std::string>();
        if (!fs::is_regular_file(dir / name))
            throw ConfigError("listed public file missing: " + name);
        d.files.push_back(name);
    }
    const json& flag = j.at("flag");
    if (flag.contains("literal")) {
        d.flag = {FlagContract::Kind::LITERAL, flag.at("literal").get<std::string>()};
    } else if (flag.contains("pattern")) {
        d.flag = {FlagContract::Kind::PATTERN, flag.at("pattern").get<std::string>()};
    } else {
        throw ConfigError("flag must be literal or pattern");
    }
    if (j.contains("service")) {
        ServiceSpec s;
        s.script = j.at("service").at("script").get<std::string>();
        s.line_protocol = j.at("service").value("line_protocol", true);
        d.service = s;
    }
    return d;
}

// Every subdirectory holding a challenge.json becomes a descriptor; malformed
// entries are diagnostics, not failures. Deterministic: sorted by id.
inline ChallengeIndex scan(const fs::path& root) {
    if (!fs::is_directory(root)) throw StorageError("unreadable root: " + root.string());
    ChallengeIndex index;
    std::set<std::string> seen;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        fs::path cfg = dir / "challenge.json";
        if (!fs::is_regular_file(cfg)) continue;
        try {
            auto d = parse_challenge_json(dir, json::parse(read_text_file(cfg)));
            if (seen.count(d.id)) {
                index.diagnostics.push_back({dir, "duplicate challenge id: " + d.id});
                continue;
            }
            seen.insert(d.id);
            index.challenges.push_back(std::move(d));
        } catch (const std::exception& e) {
            index.diagnostics.push_back({dir, e.what()});
        }
    }
    std::sort(index.challenges.begin(), index.challenges.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    return index;
}

// ---------------------------------------------------------------------------
// Challenge service hosting: one listener per scheduled challenge, one
// challenge-script process per accepted connection, stdio bridged line by
// line to the socket. Sessions are isolated by construction.

class ChallengeService {
public:
    ChallengeService(const ChallengeDescriptor& desc) : desc_(desc) {
        if (!desc.service) throw ConfigError("challenge has no service spec");
        fs::path script = desc.root / desc.service->script;
        if (!fs::is_regular_file(script))
            throw ConfigError("service script missing: " + script.string());
        // the child chdirs into the challenge root before exec
        script_ = fs::absolute(script);

        listen_fd_ = socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (listen_fd_ < 0) throw std::runtime_error("socket() failed");
        int yes = 1;
        setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;  // ephemeral
        if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
            listen(listen_fd_, 64) != 0) {
            ::close(listen_fd_);
            throw std::runtime_error("bind/listen failed");
        }
        socklen_t len = sizeof(addr);
        getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    ~ChallengeService() { stop(); }

    int port() const { return port_; }
    std::string endpoint() const { return "127.0.0.1:" + std::to_string(port_); }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> workers;
        {
            std::lock_guard lock(mu_);
            workers.swap(workers_);
            // break any still-connected client so worker joins cannot block
            for (int fd : client_fds_) shutdown(fd, SHUT_RDWR);
        }
        for (auto& t : workers)
            if (t.joinable()) t.join();
    }

private:
    void accept_loop() {
        while (!stopping_) {
            int client = accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
            if (client < 0) break;
            std::lock_guard lock(mu_);
            client_fds_.insert(client);
            workers_.emplace_back([this, client] { serve(client); });
        }
    }

    void serve(int client) {
        try {
            PipedProcess proc(script_.string(), desc_.root);
            std::thread to_child([&] {
                char buf[4096];
                while (true) {
                    ssize_t n = recv(client, buf, sizeof(buf), 0);
                    if (n <= 0) break;
                    if (write(proc.stdin_fd(), buf, static_cast<std::size_t>(n)) < 0) break;
                }
                proc.close_stdin();
            });
            char buf[4096];
            while (true) {
                ssize_t n = read(proc.stdout_fd(), buf, sizeof(buf));
                if (n <= 0) break;
                if (send(client, buf, static_cast<std::size_t>(n), MSG_NOSIGNAL) < 0) break;
            }
            shutdown(client, SHUT_RDWR);
            to_child.join();
            proc.terminate();
        } catch (...) {
        }
        {
            std::lock_guard lock(mu_);
            client_fds_.erase(client);
        }
        ::close(client);
    }

    ChallengeDescriptor desc_;
    fs::path script_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex mu_;
    std::vector<std::thread> workers_;
    std::set<int> client_fds_;
};

// ---------------------------------------------------------------------------
// Flag arbitration and statistics.

enum class Verdict { CORRECT, INCORRECT, DUPLICATE, UNKNOWN_CHALLENGE };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::CORRECT: return "CORRECT";
        case Verdict::INCORRECT: return "INCORRECT";
        case Verdict::DUPLICATE: return "DUPLICATE";
        case Verdict::UNKNOWN_CHALLENGE: return "UNKNOWN_CHALLENGE";
    }
    return "INCORRECT";
}

struct ChallengeStats {
    bool solved = false;
    std::int64_t first_solve_ms = 0;
    std::int64_t attempts = 0;
};

class ScoreBoard {
public:
    explicit ScoreBoard(const ChallengeIndex& index) {
        for (const auto& c : index.challenges) contracts_[c.id] = c.flag;
    }

    // DUPLICATE is scoped per (challenge, session); the challenge counts as
    // solved once globally.
    Verdict submit(const std::string& challenge_id, const std::string& flag,
                   const std::string& session_id) {
        std::lock_guard lock(mu_);
        auto it = contracts_.find(challenge_id);
        if (it == contracts_.end()) return Verdict::UNKNOWN_CHALLENGE;
        auto& st = stats_[challenge_id];
        ++st.attempts;
        if (!it->second.accepts(flag)) return Verdict::INCORRECT;
        auto key = std::make_pair(challenge_id, session_id);
        if (solved_by_.count(key)) return Verdict::DUPLICATE;
        solved_by_.insert(key);
        if (!st.solved) {
            st.solved = true;
            st.first_solve_ms = unix_millis();
        }
        return Verdict::CORRECT;
    }

    ChallengeStats stats_for(const std::string& challenge_id) const {
        std::lock_guard lock(mu_);
        auto it = stats_.find(challenge_id);
        return it == stats_.end() ? ChallengeStats{} : it->second;
    }

    json to_json() const {
        std::lock_guard lock(mu_);
        json per = json::object();
        int solved = 0;
        for (const auto& [id, st] : stats_) {
            per[id] = {{"solved", st.solved},
                       {"first_solve_ms", st.first_solve_ms},
                       {"attempts", st.attempts}};
            if (st.solved) ++solved;
        }
        return {{"challenges", per},
                {"total_tracked", contracts_.size()},
                {"solved", solved}};
    }

private:
    mutable std::mutex mu_;
    std::map<std::string, FlagContract> contracts_;
    std::map<std::string, ChallengeStats> stats_;
    std::set<std::pair<std::string, std::string>> solved_by_;
};

}  // namespace ctfagent
