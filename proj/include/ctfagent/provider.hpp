#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "common.hpp"

namespace ctfagent {

struct ModelSpec {
    std::string model_id;
    Tier tier = Tier::MID;
    double input_rate = 0.0;   // currency per 1e6 input tokens
    double output_rate = 0.0;  // currency per 1e6 output tokens
    std::int64_t context_limit = 128000;
    // live backend wiring; unused in offline runs
    std::string base_url;
    std::string path = "/v1/chat/completions";
    std::string auth_env;

    std::int64_t input_rate_micro() const {
        return static_cast<std::int64_t>(std::llround(input_rate * 1e6));
    }
    std::int64_t output_rate_micro() const {
        return static_cast<std::int64_t>(std::llround(output_rate * 1e6));
    }
};

enum class Role { System, User, Assistant, Tool };

inline const char* to_string(Role r) {
    switch (r) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
        case Role::Tool: return "tool";
    }
    return "user";
}

inline std::optional<Role> parse_role(std::string_view s) {
    if (s == "system") return Role::System;
    if (s == "user") return Role::User;
    if (s == "assistant") return Role::Assistant;
    if (s == "tool") return Role::Tool;
    return std::nullopt;
}

struct ToolCallPayload {
    std::string name;
    json arguments = json::object();
};

struct ChatMessage {
    Role role = Role::User;
    std::string content;
    std::vector<ToolCallPayload> tool_calls;

    json to_json() const {
        json j{{"role", to_string(role)}, {"content", content}};
        if (!tool_calls.empty()) {
            json tc = json::array();
            for (const auto& t : tool_calls)
                tc.push_back({{"name", t.name}, {"arguments", t.arguments}});
            j["tool_calls"] = tc;
        }
        return j;
    }
};

struct ChatRequest {
    std::string model_id;
    std::vector<ChatMessage> messages;
    std::optional<std::int64_t> sampling_seed;
    std::optional<double> temperature;
    std::string session_label = "default";  // selects the mock script lane

    std::int64_t estimated_tokens() const {
        std::int64_t n = 0;
        for (const auto& m : messages) n += word_count(m.content);
        return n;
    }
};

struct TokenUsage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
};

struct ChatResponse {
    std::string content;
    std::vector<ToolCallPayload> tool_calls;
    TokenUsage usage;
    std::string model_id;
};

enum class ProviderErrorKind { UnknownModel, Transport, ContextOverflow, ScriptExhausted, ScriptMalformed };

struct ProviderError : std::runtime_error {
    ProviderErrorKind kind;
    ProviderError(ProviderErrorKind k, const std::string& msg)
        : std::runtime_error(msg), kind(k) {}
};

// ---------------------------------------------------------------------------
// Cost ledger: integer micro-currency (1 unit = 1e-6 currency) so that the
// running total is an exact sum.

struct LedgerEntry {
    std::int64_t timestamp_ms;
    std::string model_id;
    std::int64_t input_tokens;
    std::int64_t output_tokens;
    std::int64_t cost_micro;
};

inline std::int64_t entry_cost_micro(std::int64_t input_tokens, std::int64_t output_tokens,
                                     const ModelSpec& spec) {
    auto part = [](std::int64_t toks, std::int64_t rate_micro) {
        // toks * rate_micro / 1e6, rounded half up
        return (toks * rate_micro + 500000) / 1000000;
    };
    return part(input_tokens, spec.input_rate_micro()) +
           part(output_tokens, spec.output_rate_micro());
}

class CostLedger {
public:
    void append(LedgerEntry e) {
        std::lock_guard lock(mu_);
        total_micro_ += e.cost_micro;
        entries_.push_back(std::move(e));
    }

    std::int64_t running_total_micro() const {
        std::lock_guard lock(mu_);
        return total_micro_;
    }

    double running_total() const { return static_cast<double>(running_total_micro()) / 1e6; }

    std::vector<LedgerEntry> entries() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

    std::size_t count_for_model(const std::string& model_id) const {
        std::lock_guard lock(mu_);
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.model_id == model_id) ++n;
        return n;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

private:
    mutable std::mutex mu_;
    std::vector<LedgerEntry> entries_;
    std::int64_t total_micro_ = 0;
};

// ---------------------------------------------------------------------------

class ModelRegistry {
public:
    void register_model(ModelSpec spec) {
        if (models_.count(spec.model_id))
            throw ConfigError("duplicate model id: " + spec.model_id);
        order_.push_back(spec.model_id);
        models_.emplace(spec.model_id, std::move(spec));
    }

    const ModelSpec* find(const std::string& model_id) const {
        auto it = models_.find(model_id);
        return it == models_.end() ? nullptr : &it->second;
    }

    // First registered model of the tier.
    const ModelSpec* resolve_tier(Tier tier) const {
        for (const auto& id : order_) {
            const auto& s = models_.at(id);
            if (s.tier == tier) return &s;
        }
        return nullptr;
    }

    bool has_both_tiers() const {
        return resolve_tier(Tier::MID) != nullptr && resolve_tier(Tier::TOP) != nullptr;
    }

    std::size_t size() const { return models_.size(); }

private:
    std::map<std::string, ModelSpec> models_;
    std::vector<std::string> order_;
};

// ---------------------------------------------------------------------------

class Backend {
public:
    virtual ~Backend() = default;
    virtual ChatResponse complete(const ChatRequest& req) = 0;
};

// Deterministic scripted backend. The script document maps a session label to
// an ordered entry list; each entry either plays next-in-order or is keyed by
// a substring of the last user/tool message. Entries may set "repeat" to stay
// live after being matched.
class MockBackend : public Backend {
public:
    static std::unique_ptr<MockBackend> from_json(const json& doc) {
        if (!doc.is_object())
            throw ProviderError(ProviderErrorKind::ScriptMalformed,
                                "mock script root must be an object");
        auto be = std::make_unique<MockBackend>();
        std::map<std::string, Lane> lanes;
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            if (!it.value().is_array())
                throw ProviderError(ProviderErrorKind::ScriptMalformed,
                                    "script lane must be an array: " + it.key());
            Lane lane;
            for (const auto& je : it.value()) {
                Entry e;
                if (!je.is_object() || !je.contains("content"))
                    throw ProviderError(ProviderErrorKind::ScriptMalformed,
                                        "script entry missing content in lane " + it.key());
                e.content = je.at("content").get<std::string>();
                if (je.contains("on")) e.on = je.at("on").get<std::string>();
                if (je.contains("repeat")) e.repeat = je.at("repeat").get<bool>();
                if (je.contains("fail")) e.fail = je.at("fail").get<bool>();
                if (je.contains("tool_calls")) {
                    for (const auto& jt : je.at("tool_calls")) {
                        ToolCallPayload tc;
                        tc.name = jt.at("name").get<std::string>();
                        if (jt.contains("arguments")) tc.arguments = jt.at("arguments");
                        e.tool_calls.push_back(std::move(tc));
                    }
                }
                if (je.contains("usage")) {
                    e.usage = TokenUsage{je.at("usage").value("input_tokens", std::int64_t{0}),
                                         je.at("usage").value("output_tokens", std::int64_t{0})};
                }
                lane.entries.push_back(std::move(e));
            }
            lanes[it.key()] = std::move(lane);
        }
        be->lanes_ = std::move(lanes);
        return be;
    }

    static std::unique_ptr<MockBackend> from_file(const fs::path& p) {
        json doc;
        try {
            doc = json::parse(read_text_file(p));
        } catch (const json::exception& e) {
            throw ProviderError(ProviderErrorKind::ScriptMalformed,
                                "unparseable mock script " + p.string() + ": " + e.what());
        }
        return from_json(doc);
    }

    ChatResponse complete(const ChatRequest& req) override {
        std::lock_guard lock(mu_);
        auto it = lanes_.find(req.session_label);
        if (it == lanes_.end())
            throw ProviderError(ProviderErrorKind::ScriptExhausted,
                                "no script lane for session '" + req.session_label + "'");
        Lane& lane = it->second;

        std::string last_user;
        for (auto mi = req.messages.rbegin(); mi != req.messages.rend(); ++mi) {
            if (mi->role == Role::User || mi->role == Role::Tool) {
                last_user = mi->content;
                break;
            }
        }

        Entry* chosen = nullptr;
        // substring-keyed entries win regardless of position
        for (auto& e : lane.entries) {
            if (e.on && !e.consumed && last_user.find(*e.on) != std::string::npos) {
                chosen = &e;
                break;
            }
        }
        if (!chosen) {
            for (std::size_t i = lane.cursor; i < lane.entries.size(); ++i) {
                Entry& e = lane.entries[i];
                if (e.on) continue;
                if (e.consumed && !e.repeat) continue;
                chosen = &e;
                if (!e.repeat) lane.cursor = i + 1;
                break;
            }
        }
        if (!chosen)
            throw ProviderError(ProviderErrorKind::ScriptExhausted,
                                "mock script exhausted for session '" + req.session_label + "'");
        if (!chosen->repeat) chosen->consumed = true;
        if (chosen->fail)
            throw ProviderError(ProviderErrorKind::Transport,
                                "scripted transport failure for session '" + req.session_label + "'");

        ChatResponse resp;
        resp.content = chosen->content;
        resp.tool_calls = chosen->tool_calls;
        resp.model_id = req.model_id;
        if (chosen->usage) {
            resp.usage = *chosen->usage;
        } else {
            resp.usage.input_tokens = req.estimated_tokens();
            resp.usage.output_tokens = word_count(resp.content);
        }
        return resp;
    }

private:
    struct Entry {
        std::string content;
        std::optional<std::string> on;
        std::vector<ToolCallPayload> tool_calls;
        std::optional<TokenUsage> usage;
        bool repeat = false;
        bool fail = false;  // scripted transport failure
        bool consumed = false;
    };
    struct Lane {
        std::vector<Entry> entries;
        std::size_t cursor = 0;
    };
    std::map<std::string, Lane> lanes_;
    std::mutex mu_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds backoff{1000};
};

// Registry + backend + ledger. complete() validates the model, enforces the
// context limit, retries transport failures, and appends one ledger entry
// atomically with a successful return.
class Provider {
public:
    Provider(ModelRegistry registry, std::unique_ptr<Backend> backend,
             RetryPolicy retry = {})
        : registry_(std::move(registry)), backend_(std::move(backend)), retry_(retry) {}

    const ModelRegistry& registry() const { return registry_; }
    CostLedger& ledger() { return ledger_; }
    const CostLedger& ledger() const { return ledger_; }

    std::int64_t attempts_for(const std::string& model_id) const {
        std::lock_guard lock(stats_mu_);
        auto it = attempts_.find(model_id);
        return it == attempts_.end() ? 0 : it->second;
    }

    ChatResponse complete(const ChatRequest& req) {
        const ModelSpec* spec = registry_.find(req.model_id);
        if (!spec)
            throw ProviderError(ProviderErrorKind::UnknownModel,
                                "unknown model: " + req.model_id);
        if (req.messages.empty())
            throw ProviderError(ProviderErrorKind::Transport, "empty message list");
        if (req.estimated_tokens() > spec->context_limit)
            throw ProviderError(ProviderErrorKind::ContextOverflow,
                                "request exceeds context limit of " + req.model_id);

        for (int attempt = 1;; ++attempt) {
            {
                std::lock_guard lock(stats_mu_);
                ++attempts_[req.model_id];
            }
            try {
                ChatResponse resp = backend_->complete(req);
                resp.model_id = req.model_id;
                ledger_.append(LedgerEntry{unix_millis(), req.model_id,
                                           resp.usage.input_tokens, resp.usage.output_tokens,
                                           entry_cost_micro(resp.usage.input_tokens,
                                                            resp.usage.output_tokens, *spec)});
                return resp;
            } catch (const ProviderError& e) {
                if (e.kind != ProviderErrorKind::Transport || attempt >= retry_.max_attempts)
                    throw;
                std::this_thread::sleep_for(retry_.backoff);
            }
        }
    }

private:
    ModelRegistry registry_;
    std::unique_ptr<Backend> backend_;
    RetryPolicy retry_;
    CostLedger ledger_;
    mutable std::mutex stats_mu_;
    std::map<std::string, std::int64_t> attempts_;
};

}  // namespace ctfagent
