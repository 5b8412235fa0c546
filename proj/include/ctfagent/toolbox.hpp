#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"
#include "research.hpp"
#include "subprocess.hpp"
#include "workspace.hpp"

namespace ctfagent {

enum class EffectClass { READ_ONLY, WRITES_SESSION_DIR, EXECUTES, NETWORK };

enum class ToolStatus { OK, ERROR, TIMEOUT };

inline const char* to_string(ToolStatus s) {
    switch (s) {
        case ToolStatus::OK: return "OK";
        case ToolStatus::ERROR: return "ERROR";
        case ToolStatus::TIMEOUT: return "TIMEOUT";
    }
    return "ERROR";
}

struct ParamSpec {
    std::string name;
    std::string type;  // "string" | "int" | "bool"
    bool required = true;
};

struct ToolDescriptor {
    std::string name;
    std::string description;
    std::vector<ParamSpec> params;
    EffectClass effect = EffectClass::READ_ONLY;
};

struct ToolResult {
    ToolStatus status = ToolStatus::OK;
    std::string output;
    std::chrono::milliseconds duration{0};
    int exit_code = 0;
    std::size_t full_output_length = 0;
    bool truncated = false;

    static ToolResult ok(std::string out) { return {ToolStatus::OK, std::move(out)}; }
    static ToolResult error(std::string msg) { return {ToolStatus::ERROR, std::move(msg)}; }

    json to_json() const {
        return {{"status", to_string(status)},
                {"output", output},
                {"duration_ms", duration.count()},
                {"exit_code", exit_code},
                {"truncated", truncated}};
    }
};

struct ToolInvocation {
    std::string tool;
    json arguments = json::object();
    std::string session_id;
};

// Per-session tool context: sandbox directory plus open TCP connections.
class ToolSession {
public:
    explicit ToolSession(fs::path sandbox_dir) : sandbox_(std::move(sandbox_dir)) {
        fs::create_directories(sandbox_);
    }

    ~ToolSession() {
        for (auto& [_, fd] : connections_)
            if (fd >= 0) ::close(fd);
    }

    const fs::path& sandbox() const { return sandbox_; }

    int open_connection(const std::string& host, int port, std::string& err) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 ||
            !res) {
            err = "cannot resolve " + host;
            return -1;
        }
        int fd = -1;
        for (addrinfo* ai = res; ai; ai = ai->ai_next) {
            fd = socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
            if (fd < 0) continue;
            if (connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
            ::close(fd);
            fd = -1;
        }
        freeaddrinfo(res);
        if (fd < 0) {
            err = "cannot connect to " + host + ":" + std::to_string(port);
            return -1;
        }
        timeval tv{5, 0};
        setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
        int id = next_conn_++;
        connections_[id] = fd;
        return id;
    }

    int fd_for(int conn_id) const {
        auto it = connections_.find(conn_id);
        return it == connections_.end() ? -1 : it->second;
    }

    void close_connection(int conn_id) {
        auto it = connections_.find(conn_id);
        if (it != connections_.end()) {
            ::close(it->second);
            connections_.erase(it);
        }
    }

private:
    fs::path sandbox_;
    std::map<int, int> connections_;
    int next_conn_ = 1;
};

// Resolves `user_path` inside the sandbox; nullopt for traversal or absolute
// escapes.
inline std::optional<fs::path> confine_path(const fs::path& sandbox,
                                            const std::string& user_path) {
    if (user_path.empty()) return std::nullopt;
    fs::path p(user_path);
    if (p.is_absolute()) return std::nullopt;
    fs::path combined = (sandbox / p).lexically_normal();
    fs::path base = sandbox.lexically_normal();
    auto bit = base.begin();
    auto cit = combined.begin();
    for (; bit != base.end(); ++bit, ++cit) {
        if (cit == combined.end() || *cit != *bit) return std::nullopt;
    }
    return combined;
}

using ToolHandler = std::function<ToolResult(const json& args, ToolSession& session)>;

struct ToolboxConfig {
    std::chrono::milliseconds command_timeout{30000};
    std::size_t output_cap = 64 * 1024;
    std::string crypto_endpoint;  // empty = unconfigured
};

class Toolbox {
public:
    explicit Toolbox(ToolboxConfig cfg = {}) : cfg_(cfg) {}

    void register_tool(ToolDescriptor desc, ToolHandler handler) {
        if (desc.name.empty() || desc.description.empty())
            throw ConfigError("tool needs a name and a description");
        if (tools_.count(desc.name)) throw ConfigError("duplicate tool name: " + desc.name);
        std::string name = desc.name;
        order_.push_back(name);
        tools_.emplace(std::move(name), Entry{std::move(desc), std::move(handler)});
    }

    bool has_tool(const std::string& name) const { return tools_.count(name) > 0; }
    std::size_t size() const { return tools_.size(); }

    // Fixed-format tool section for the system prompt.
    std::string render_prompt_section() const {
        if (tools_.empty()) return "## Tools\n\n(no tools available)\n";
        std::string out = "## Tools\n\n";
        for (const auto& name : order_) {
            const auto& t = tools_.at(name);
            out += "- " + name + "(";
            bool first = true;
            for (const auto& p : t.desc.params) {
                if (!first) out += ", ";
                first = false;
                out += p.name + ": " + p.type + (p.required ? "" : "?");
            }
            out += "): " + t.desc.description + "\n";
        }
        return out;
    }

    // Error-as-data: every failure maps to a ToolResult.
    ToolResult dispatch(const ToolInvocation& inv, ToolSession& session) {
        auto start = std::chrono::steady_clock::now();
        ToolResult res = dispatch_inner(inv, session);
        res.duration = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        if (res.output.size() > cfg_.output_cap) {
            res.full_output_length = res.output.size();
            res.output.resize(cfg_.output_cap);
            res.output += kTruncationMarker;
            res.output += " (" + std::to_string(res.full_output_length) + " bytes)";
            res.truncated = true;
        }
        return res;
    }

    // ---- builtin registration -------------------------------------------

    void register_builtins() {
        register_tool({"read_file", "Read a file from the session sandbox", {{"path", "string"}},
                       EffectClass::READ_ONLY},
                      [](const json& a, ToolSession& s) {
                          auto p = confine_path(s.sandbox(), a.at("path").get<std::string>());
                          if (!p) return ToolResult::error("path escapes the session sandbox");
                          if (!fs::is_regular_file(*p))
                              return ToolResult::error("no such file: " +
                                                       a.at("path").get<std::string>());
                          return ToolResult::ok(read_text_file(*p));
                      });
        register_tool({"write_file",
                       "Write a file inside the session sandbox",
                       {{"path", "string"}, {"content", "string"}},
                       EffectClass::WRITES_SESSION_DIR},
                      [](const json& a, ToolSession& s) {
                          auto p = confine_path(s.sandbox(), a.at("path").get<std::string>());
                          if (!p) return ToolResult::error("path escapes the session sandbox");
                          fs::create_directories(p->parent_path());
                          write_text_file(*p, a.at("content").get<std::string>());
                          return ToolResult::ok("written");
                      });
        register_tool({"list_dir", "List a sandbox directory", {{"path", "string", false}},
                       EffectClass::READ_ONLY},
                      [](const json& a, ToolSession& s) {
                          std::string rel = a.value("path", std::string("."));
                          auto p = confine_path(s.sandbox(), rel);
                          if (!p) return ToolResult::error("path escapes the session sandbox");
                          if (!fs::is_directory(*p)) return ToolResult::error("not a directory");
                          std::vector<std::string> names;
                          for (const auto& e : fs::directory_iterator(*p))
                              names.push_back(e.path().filename().string() +
                                              (e.is_directory() ? "/" : ""));
                          std::sort(names.begin(), names.end());
                          std::string out;
                          for (const auto& n : names) out += n + "\n";
                          return ToolResult::ok(out);
                      });
        register_tool({"run_command",
                       "Run a shell command inside the session sandbox",
                       {{"command", "string"}, {"timeout_ms", "int", false}},
                       EffectClass::EXECUTES},
                      [this](const json& a, ToolSession& s) {
                          auto timeout = cfg_.command_timeout;
                          if (a.contains("timeout_ms"))
                              timeout = std::chrono::milliseconds(
                                  a.at("timeout_ms").get<std::int64_t>());
                          CommandResult cr = run_command(a.at("command").get<std::string>(),
                                                         s.sandbox(), timeout, cfg_.output_cap);
                          ToolResult res;
                          res.status = cr.timed_out ? ToolStatus::TIMEOUT : ToolStatus::OK;
                          res.output = cr.output;
                          res.exit_code = cr.exit_status;
                          res.truncated = cr.truncated;
                          res.full_output_length = cr.full_length;
                          return res;
                      });
        register_tool({"remote_connect",
                       "Open a line-oriented TCP connection to a challenge service",
                       {{"host", "string"}, {"port", "int"}},
                       EffectClass::NETWORK},
                      [](const json& a, ToolSession& s) {
                          std::string err;
                          int id = s.open_connection(a.at("host").get<std::string>(),
                                                     a.at("port").get<int>(), err);
                          if (id < 0) return ToolResult::error(err);
                          return ToolResult::ok("connection " + std::to_string(id));
                      });
        register_tool({"remote_send",
                       "Send one line on an open connection",
                       {{"conn", "int"}, {"line", "string"}},
                       EffectClass::NETWORK},
                      [](const json& a, ToolSession& s) {
                          int fd = s.fd_for(a.at("conn").get<int>());
                          if (fd < 0) return ToolResult::error("no such connection");
                          std::string line = a.at("line").get<std::string>() + "\n";
                          if (::send(fd, line.data(), line.size(), MSG_NOSIGNAL) < 0)
                              return ToolResult::error("send failed");
                          return ToolResult::ok("sent");
                      });
        register_tool({"remote_recv", "Receive one line from an open connection",
                       {{"conn", "int"}}, EffectClass::NETWORK},
                      [](const json& a, ToolSession& s) {
                          int fd = s.fd_for(a.at("conn").get<int>());
                          if (fd < 0) return ToolResult::error("no such connection");
                          std::string line;
                          char c;
                          while (true) {
                              ssize_t n = ::recv(fd, &c, 1, 0);
                              if (n <= 0)
                                  return line.empty() ? ToolResult::error("recv failed or timed out")
                                                      : ToolResult::ok(line);
                              if (c == '\n') break;
                              line.push_back(c);
                          }
                          return ToolResult::ok(line);
                      });
        register_tool({"remote_close", "Close an open connection", {{"conn", "int"}},
                       EffectClass::NETWORK},
                      [](const json& a, ToolSession& s) {
                          s.close_connection(a.at("conn").get<int>());
                          return ToolResult::ok("closed");
                      });
    }

    void register_research(std::shared_ptr<ResearchPipeline> pipeline) {
        register_tool({"deep_research",
                       "Fan a set of query topics out to web/academic/code search and return "
                       "a structured report",
                       {{"topics", "string"}},
                       EffectClass::NETWORK},
                      [pipeline](const json& a, ToolSession&) {
                          ResearchQuery q;
                          for (const auto& t : split_ws(a.at("topics").get<std::string>()))
                              q.topics.push_back(t);
                          // topics may also arrive comma-separated
                          if (a.contains("topic_list"))
                              q.topics = a.at("topic_list").get<std::vector<std::string>>();
                          ResearchReport rep = pipeline->run(q);
                          return ToolResult::ok(rep.to_json().dump());
                      });
    }

    void register_workspace(std::shared_ptr<Workspace> ws) {
        register_tool({"workspace_ingest",
                       "Persist content into the knowledge workspace, returns its doc_id",
                       {{"content", "string"}, {"title", "string", false}},
                       EffectClass::WRITES_SESSION_DIR},
                      [ws](const json& a, ToolSession&) {
                          std::string content = a.at("content").get<std::string>();
                          if (content.empty()) return ToolResult::error("content is empty");
                          DocMetadata md;
                          md.title = a.value("title", std::string("untitled"));
                          md.source_channel = "agent";
                          std::string id = ws->ingest(content, "agent", md);
                          return ToolResult::ok(id);
                      });
        register_tool({"workspace_lookup",
                       "Fetch a stored document representation by doc_id",
                       {{"doc_id", "string"}, {"representation", "string", false}},
                       EffectClass::READ_ONLY},
                      [ws](const json& a, ToolSession&) {
                          auto rec = ws->lookup(a.at("doc_id").get<std::string>());
                          if (!rec) return ToolResult::error("unknown doc_id");
                          std::string rep = a.value("representation", std::string("TEXT"));
                          try {
                              return ToolResult::ok(ws->read_representation(rec->doc_id, rep));
                          } catch (const StorageError& e) {
                              return ToolResult::error(e.what());
                          }
                      });
    }

    // crypto_compute posts {language, program, stdin} to the configured
    // endpoint; the HTTP call itself is injected so offline builds need no
    // client.
    using HttpPoster = std::function<std::optional<std::string>(
        const std::string& endpoint, const std::string& body)>;

    void register_crypto_compute(HttpPoster poster) {
        auto endpoint = cfg_.crypto_endpoint;
        register_tool({"crypto_compute",
                       "Run a program on the external cryptographic compute endpoint",
                       {{"language", "string", false}, {"program", "string"},
                        {"stdin", "string", false}},
                       EffectClass::NETWORK},
                      [endpoint, poster](const json& a, ToolSession&) {
                          if (endpoint.empty())
                              return ToolResult::error("endpoint not configured");
                          json body{{"language", a.value("language", std::string("sage"))},
                                    {"program", a.at("program").get<std::string>()},
                                    {"stdin", a.value("stdin", std::string())}};
                          auto reply = poster(endpoint, body.dump());
                          if (!reply) return ToolResult::error("compute endpoint unreachable");
                          try {
                              json j = json::parse(*reply);
                              ToolResult res;
                              res.status = ToolStatus::OK;
                              res.output = j.value("stdout", std::string());
                              if (!j.value("stderr", std::string()).empty())
                                  res.output += "\n[stderr] " + j.at("stderr").get<std::string>();
                              res.exit_code = j.value("exit_status", 0);
                              return res;
                          } catch (const json::exception&) {
                              return ToolResult::error("malformed compute endpoint reply");
                          }
                      });
    }

private:
    struct Entry {
        ToolDescriptor desc;
        ToolHandler handler;
    };

    ToolResult dispatch_inner(const ToolInvocation& inv, ToolSession& session) {
        auto it = tools_.find(inv.tool);
        if (it == tools_.end()) return ToolResult::error("unknown tool: " + inv.tool);
        std::string schema_err;
        if (!validate_args(it->second.desc, inv.arguments, schema_err))
            return ToolResult::error("invalid arguments: " + schema_err);
        try {
            return it->second.handler(inv.arguments, session);
        } catch (const std::exception& e) {
            return ToolResult::error(std::string("tool failed: ") + e.what());
        }
    }

    static bool validate_args(const ToolDescriptor& desc, const json& args,
                              std::string& err) {
        if (!args.is_object()) {
            err = "arguments must be an object";
            return false;
        }
        std::vector<std::string> bad;
        for (const auto& p : desc.params) {
            if (!args.contains(p.name)) {
                if (p.required) bad.push_back(p.name + " (missing)");
                continue;
            }
            const json& v = args.at(p.name);
            bool ok = (p.type == "string" && v.is_string()) ||
                      (p.type == "int" && v.is_number_integer()) ||
                      (p.type == "bool" && v.is_boolean());
            if (!ok) bad.push_back(p.name + " (expected " + p.type + ")");
        }
        if (!bad.empty()) {
            for (std::size_t i = 0; i < bad.size(); ++i)
                err += (i ? ", " : "") + bad[i];
            return false;
        }
        return true;
    }

    ToolboxConfig cfg_;
    std::map<std::string, Entry> tools_;
    std::vector<std::string> order_;
};

}  // namespace ctfagent
