#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "governance.hpp"
#include "harness.hpp"
#include "routing.hpp"
#include "toolbox.hpp"

namespace ctfagent {

enum class Outcome { SOLVED, BUDGET_EXHAUSTED, AGENT_GAVE_UP, ERRORED };

inline const char* to_string(Outcome o) {
    switch (o) {
        case Outcome::SOLVED: return "SOLVED";
        case Outcome::BUDGET_EXHAUSTED: return "BUDGET_EXHAUSTED";
        case Outcome::AGENT_GAVE_UP: return "AGENT_GAVE_UP";
        case Outcome::ERRORED: return "ERRORED";
    }
    return "ERRORED";
}

// First substring matching the challenge's flag pattern, if any.
inline std::optional<std::string> detect_flag(const std::string& content,
                                              const FlagContract& contract) {
    try {
        std::regex re(contract.detection_pattern());
        std::smatch m;
        if (std::regex_search(content, m, re)) return m.str(0);
    } catch (const std::regex_error&) {
    }
    return std::nullopt;
}

using FlagArbiter =
    std::function<Verdict(const std::string& challenge_id, const std::string& flag,
                          const std::string& session_id)>;

struct SessionState {
    std::string session_id;
    std::string challenge_id;
    FlagContract flag_contract;
    std::vector<ChatMessage> transcript;
    int turn_count = 0;
    int turn_budget = 30;
    std::string script_label;  // mock-script lane for this session
    std::vector<RoutingLogEntry> routing_log;
    std::vector<json> tool_log;
    fs::path session_dir;
    std::optional<Outcome> outcome;
    std::string flag;           // set when SOLVED
    std::string error_reason;   // set when ERRORED

    bool terminal() const { return outcome.has_value(); }

    std::string transcript_jsonl() const {
        std::string out;
        for (const auto& m : transcript) out += m.to_json().dump() + "\n";
        return out;
    }
};

struct HeavyThinkConfig {
    int workers = 1;     // N
    int iterations = 1;  // M
    Tier aggregator_tier = Tier::MID;

    void validate() const {
        if (workers < 1) throw ConfigError("heavythink workers must be >= 1");
        if (iterations < 1) throw ConfigError("heavythink iterations must be >= 1");
    }
};

struct AggregatorVerdict {
    int chosen = 0;
    std::string justification;
    std::string next_round_prompt;
    bool fallback = false;  // set when the aggregator reply was unusable
};

inline constexpr const char* kAggregatorRubric =
    "You compare candidate solving trajectories for the same challenge. Judge each on "
    "(a) concrete progress toward a flag, (b) internal consistency, (c) whether it ends "
    "with an executable next step. Reply with either 'choose <index>' or "
    "'scores: <s0> <s1> ...' (one number per candidate, highest wins).";

// Parses an aggregator reply: explicit choice, or scores (argmax, ties to the
// lowest index). nullopt when neither is present.
inline std::optional<int> parse_aggregator_choice(const std::string& reply,
                                                  std::size_t n_candidates) {
    static const std::regex choose_re(R"(choose\s+(\d+))", std::regex::icase);
    std::smatch m;
    if (std::regex_search(reply, m, choose_re)) {
        int idx = std::stoi(m[1].str());
        if (idx >= 0 && static_cast<std::size_t>(idx) < n_candidates) return idx;
        return std::nullopt;
    }
    static const std::regex scores_re(R"(scores\s*:\s*([0-9.\s-]+))", std::regex::icase);
    if (std::regex_search(reply, m, scores_re)) {
        std::istringstream ss(m[1].str());
        std::vector<double> scores;
        double v;
        while (ss >> v) scores.push_back(v);
        if (scores.size() != n_candidates) return std::nullopt;
        int best = 0;
        for (std::size_t i = 1; i < scores.size(); ++i)
            if (scores[i] > scores[best]) best = static_cast<int>(i);
        return best;
    }
    return std::nullopt;
}

struct OrchestratorConfig {
    PromptBundle bundle;
    HeuristicTable heuristic = HeuristicTable::shipped();
    GraderConfig grader;
    fs::path sessions_root = "sessions";
    ToolboxConfig toolbox;
};

class Orchestrator {
public:
    Orchestrator(Provider& provider, OrchestratorConfig cfg, FlagArbiter arbiter)
        : provider_(provider), cfg_(std::move(cfg)), arbiter_(std::move(arbiter)) {
        cfg_.bundle.validate();
    }

    Provider& provider() { return provider_; }
    const OrchestratorConfig& config() const { return cfg_; }

    // Hook for wiring session-scoped tools (research, workspace, …) into the
    // per-session toolbox. Builtins are always registered.
    std::function<void(Toolbox&)> toolbox_customizer;

    SessionState make_session(const ChallengeDescriptor& challenge,
                              const std::optional<std::string>& service_endpoint,
                              int budget, const std::string& session_id,
                              const std::string& script_label) {
        SessionState s;
        s.session_id = session_id;
        s.challenge_id = challenge.id;
        s.flag_contract = challenge.flag;
        s.turn_budget = budget;
        s.session_dir = cfg_.sessions_root / session_id;
        init_session_dir(s.session_dir);
        // public files are copied into the sandbox so file tools see them
        for (const auto& f : challenge.files)
            fs::copy_file(challenge.root / f, s.session_dir / "sandbox" / f,
                          fs::copy_options::overwrite_existing);

        ChallengeContext ctx{challenge.name, challenge.category, challenge.files,
                             service_endpoint};
        std::string system_prompt = assemble_system_prompt(cfg_.bundle, ctx, "");
        s.transcript.push_back({Role::System, system_prompt, {}});
        s.transcript.push_back(
            {Role::User,
             "Solve the challenge. Work inside your sandbox; the listed files are there.",
             {}});
        s.script_label = script_label;
        return s;
    }

    // One reason-act-observe step: route, one model call, tool dispatches,
    // flag detection. Exactly one turn consumed.
    void step(SessionState& s, Toolbox& toolbox, ToolSession& tool_session) {
        if (s.terminal()) return;
        if (s.turn_count >= s.turn_budget) {
            s.outcome = Outcome::BUDGET_EXHAUSTED;
            return;
        }

        std::string last_output;
        for (auto it = s.transcript.rbegin(); it != s.transcript.rend(); ++it) {
            if (it->role == Role::Assistant) {
                last_output = it->content;
                break;
            }
        }
        std::string excerpt = last_output;
        if (excerpt.empty())
            for (const auto& m : s.transcript)
                if (m.role == Role::User) excerpt = m.content;

        DifficultyRating rating =
            estimate_difficulty(last_output, excerpt, provider_, cfg_.grader,
                                cfg_.bundle.difficulty_rubric, cfg_.heuristic);
        RoutingDecision decision;
        try {
            decision = route(rating, provider_.registry());
        } catch (const ConfigError& e) {
            s.outcome = Outcome::ERRORED;
            s.error_reason = e.what();
            return;
        }
        s.routing_log.push_back({s.turn_count + 1, rating.level, rating.source,
                                 decision.tier, decision.model_id});

        ChatRequest req;
        req.model_id = decision.model_id;
        req.session_label = s.script_label;
        req.messages =
            handoff_context(s.transcript, *provider_.registry().find(decision.model_id));

        ChatResponse resp;
        try {
            resp = provider_.complete(req);
        } catch (const ProviderError& e) {
            s.outcome = Outcome::ERRORED;
            s.error_reason = e.what();
            return;
        }

        s.transcript.push_back({Role::Assistant, resp.content, resp.tool_calls});
        ++s.turn_count;

        std::string step_tool_output;
        for (const auto& call : resp.tool_calls) {
            if (s.terminal()) break;
            if (call.name == "submit_flag") {
                std::string flag = call.arguments.value("flag", std::string());
                Verdict v = arbiter_(s.challenge_id, flag, s.session_id);
                s.transcript.push_back(
                    {Role::Tool, std::string("submit_flag: ") + to_string(v), {}});
                s.tool_log.push_back({{"tool", "submit_flag"},
                                      {"arguments", call.arguments},
                                      {"status", to_string(v)}});
                if (v == Verdict::CORRECT) {
                    s.outcome = Outcome::SOLVED;
                    s.flag = flag;
                }
                continue;
            }
            ToolResult result = toolbox.dispatch({call.name, call.arguments, s.session_id},
                                                 tool_session);
            s.transcript.push_back(
                {Role::Tool, call.name + " -> " + to_string(result.status) + "\n" +
                                 result.output, {}});
            s.tool_log.push_back({{"tool", call.name},
                                  {"arguments", call.arguments},
                                  {"result", result.to_json()}});
            step_tool_output += result.output + "\n";
        }

        if (!s.terminal()) {
            // passive detection over this step's new content
            auto candidate = detect_flag(resp.content + "\n" + step_tool_output,
                                         s.flag_contract);
            if (candidate) {
                Verdict v = arbiter_(s.challenge_id, *candidate, s.session_id);
                if (v == Verdict::CORRECT) {
                    s.outcome = Outcome::SOLVED;
                    s.flag = *candidate;
                }
            }
        }
        if (!s.terminal() && resp.content.find(kSurrenderToken) != std::string::npos)
            s.outcome = Outcome::AGENT_GAVE_UP;
        if (!s.terminal() && s.turn_count >= s.turn_budget)
            s.outcome = Outcome::BUDGET_EXHAUSTED;
    }

    struct RunResult {
        SessionState session;
        std::int64_t wall_ms = 0;
        std::int64_t cost_micro = 0;
        std::string mode = "auto";
        int ht_workers = 0;
        int ht_iterations = 0;
    };

    RunResult run_autonomous(const ChallengeDescriptor& challenge,
                             const std::optional<std::string>& service_endpoint, int budget,
                             const std::string& session_id) {
        if (budget <= 0) throw ConfigError("turn budget must be positive");
        auto start = std::chrono::steady_clock::now();
        std::int64_t cost_before = provider_.ledger().running_total_micro();

        SessionState s =
            make_session(challenge, service_endpoint, budget, session_id, session_id);
        Toolbox toolbox = build_toolbox();
        ToolSession tool_session(s.session_dir / "sandbox");
        while (!s.terminal()) step(s, toolbox, tool_session);

        RunResult r;
        r.session = std::move(s);
        r.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
        r.cost_micro = provider_.ledger().running_total_micro() - cost_before;
        persist(r);
        return r;
    }

    // N workers per round, an aggregator picks the candidate that seeds the
    // next round; a flag accepted anywhere ends the run. N=1, M=1 degenerates
    // to the autonomous loop (same session label, identical transcript).
    RunResult run_heavythink(const ChallengeDescriptor& challenge,
                             const std::optional<std::string>& service_endpoint,
                             const HeavyThinkConfig& ht, int per_worker_budget,
                             const std::string& session_id) {
        ht.validate();
        if (ht.workers == 1 && ht.iterations == 1) {
            RunResult r =
                run_autonomous(challenge, service_endpoint, per_worker_budget, session_id);
            r.mode = "heavythink";
            r.ht_workers = 1;
            r.ht_iterations = 1;
            persist(r);
            return r;
        }

        auto start = std::chrono::steady_clock::now();
        std::int64_t cost_before = provider_.ledger().running_total_micro();

        std::string round_seed;  // extra prompt text carried between rounds
        std::optional<SessionState> final_state;
        std::optional<Outcome> final_outcome;
        std::string final_flag;

        for (int round = 0; round < ht.iterations && !final_outcome; ++round) {
            std::vector<SessionState> candidates(static_cast<std::size_t>(ht.workers));
            std::vector<std::thread> threads;
            for (int w = 0; w < ht.workers; ++w) {
                threads.emplace_back([&, w] {
                    std::string worker_id = session_id + "-r" + std::to_string(round + 1) +
                                            "w" + std::to_string(w);
                    SessionState s = make_session(challenge, service_endpoint,
                                                  per_worker_budget, worker_id, worker_id);
                    // worker variation: an index nonce plus the round seed
                    std::string nonce = "You are worker " + std::to_string(w) + " of " +
                                        std::to_string(ht.workers) + ".";
                    if (!round_seed.empty()) nonce += "\n\n" + round_seed;
                    s.transcript.push_back({Role::User, nonce, {}});
                    Toolbox toolbox = build_toolbox();
                    ToolSession tool_session(s.session_dir / "sandbox");
                    while (!s.terminal()) step(s, toolbox, tool_session);
                    candidates[static_cast<std::size_t>(w)] = std::move(s);
                });
            }
            for (auto& t : threads) t.join();

            for (const auto& c : candidates) {
                if (c.outcome == Outcome::SOLVED) {
                    final_state = c;
                    final_outcome = Outcome::SOLVED;
                    final_flag = c.flag;
                    break;
                }
            }
            if (final_outcome) break;

            bool all_errored = true;
            for (const auto& c : candidates)
                if (c.outcome != Outcome::ERRORED) all_errored = false;
            if (all_errored) {
                final_state = candidates.front();
                final_outcome = Outcome::ERRORED;
                break;
            }

            AggregatorVerdict verdict =
                aggregate_candidates(candidates, round, session_id);
            const SessionState& chosen =
                candidates[static_cast<std::size_t>(verdict.chosen)];
            if (round + 1 >= ht.iterations) {
                final_state = chosen;
                final_outcome = chosen.outcome;
                final_flag = chosen.flag;
            } else {
                round_seed = verdict.next_round_prompt;
            }
        }

        RunResult r;
        r.session = std::move(*final_state);
        r.session.session_id = session_id;
        r.session.outcome = final_outcome;
        r.session.flag = final_flag;
        r.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
        r.cost_micro = provider_.ledger().running_total_micro() - cost_before;
        r.mode = "heavythink";
        r.ht_workers = ht.workers;
        r.ht_iterations = ht.iterations;
        init_session_dir(cfg_.sessions_root / session_id);
        r.session.session_dir = cfg_.sessions_root / session_id;
        persist(r);
        return r;
    }

    // One aggregator call over the candidates; a singleton skips the call.
    // Unusable replies fall back to the lowest-index non-errored candidate.
    AggregatorVerdict aggregate_candidates(const std::vector<SessionState>& candidates,
                                           int round, const std::string& session_id) {
        if (candidates.empty()) throw ConfigError("no candidates to aggregate");
        int fallback_idx = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i)
            if (candidates[i].outcome != Outcome::ERRORED) {
                fallback_idx = static_cast<int>(i);
                break;
            }
        if (candidates.size() == 1)
            return {0, "single candidate", last_assistant(candidates[0]), false};

        ChatRequest req;
        const ModelSpec* spec = provider_.registry().resolve_tier(Tier::MID);
        if (!spec) return {fallback_idx, "no aggregator model", last_assistant(candidates[static_cast<std::size_t>(fallback_idx)]), true};
        req.model_id = spec->model_id;
        req.session_label = session_id + "#agg";
        req.temperature = 0.0;
        std::string body = "Round " + std::to_string(round + 1) + " candidates:\n";
        for (std::size_t i = 0; i < candidates.size(); ++i)
            body += "\n### Candidate " + std::to_string(i) + "\n" +
                    last_assistant(candidates[i]) + "\n";
        req.messages.push_back({Role::System, kAggregatorRubric, {}});
        req.messages.push_back({Role::User, body, {}});
        try {
            ChatResponse resp = provider_.complete(req);
            auto choice = parse_aggregator_choice(resp.content, candidates.size());
            if (!choice)
                return {fallback_idx, "unparseable aggregator reply",
                        last_assistant(candidates[static_cast<std::size_t>(fallback_idx)]),
                        true};
            return {*choice, resp.content,
                    last_assistant(candidates[static_cast<std::size_t>(*choice)]), false};
        } catch (const ProviderError& e) {
            return {fallback_idx, std::string("aggregator failed: ") + e.what(),
                    last_assistant(candidates[static_cast<std::size_t>(fallback_idx)]), true};
        }
    }

    void persist(const RunResult& r) const {
        const SessionState& s = r.session;
        write_text_file(s.session_dir / "transcript.jsonl", s.transcript_jsonl());
        std::string routing;
        for (const auto& e : s.routing_log) routing += e.to_json().dump() + "\n";
        write_text_file(s.session_dir / "routing.jsonl", routing);
        std::string tools;
        for (const auto& e : s.tool_log) tools += e.dump() + "\n";
        write_text_file(s.session_dir / "tools.jsonl", tools);
        json report{{"outcome", s.outcome ? to_string(*s.outcome) : "RUNNING"},
                    {"turns", s.turn_count},
                    {"wall_ms", r.wall_ms},
                    {"cost_micro", r.cost_micro},
                    {"mode", r.mode},
                    {"challenge_id", s.challenge_id}};
        if (s.outcome == Outcome::SOLVED) report["flag"] = s.flag;
        if (s.outcome == Outcome::ERRORED) report["error"] = s.error_reason;
        if (r.mode == "heavythink") {
            report["ht_workers"] = r.ht_workers;
            report["ht_iterations"] = r.ht_iterations;
        }
        write_text_file(s.session_dir / "report.json", report.dump(2));
    }

private:
    static std::string last_assistant(const SessionState& s) {
        for (auto it = s.transcript.rbegin(); it != s.transcript.rend(); ++it)
            if (it->role == Role::Assistant) return it->content;
        return "";
    }

    Toolbox build_toolbox() {
        Toolbox tb{cfg_.toolbox};
        tb.register_builtins();
        if (toolbox_customizer) toolbox_customizer(tb);
        return tb;
    }

    Provider& provider_;
    OrchestratorConfig cfg_;
    FlagArbiter arbiter_;
};

}  // namespace ctfagent
