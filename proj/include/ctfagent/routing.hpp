#pragma once

#include <regex>
#include <string>
#include <vector>

#include "governance.hpp"
#include "provider.hpp"

namespace ctfagent {

enum class RatingSource { SELF_ASSESSMENT, GRADER_AGENT, HEURISTIC };

inline const char* to_string(RatingSource s) {
    switch (s) {
        case RatingSource::SELF_ASSESSMENT: return "self";
        case RatingSource::GRADER_AGENT: return "grader";
        case RatingSource::HEURISTIC: return "heuristic";
    }
    return "heuristic";
}

struct DifficultyRating {
    Level level = Level::L2;
    RatingSource source = RatingSource::HEURISTIC;
};

struct RoutingDecision {
    DifficultyRating rating;
    Tier tier = Tier::MID;
    std::string model_id;
};

// L1-L2 -> MID, L3-L5 -> TOP.
inline Tier tier_for(Level level) {
    return (level == Level::L1 || level == Level::L2) ? Tier::MID : Tier::TOP;
}

struct HeuristicTable {
    std::vector<std::pair<std::string, Level>> keyword_rules;   // ordered
    std::vector<std::pair<std::int64_t, Level>> length_thresholds;  // (min_chars, level)
    Level default_level = Level::L2;

    static HeuristicTable shipped() {
        HeuristicTable t;
        t.keyword_rules = {{"lattice", Level::L4}, {"coppersmith", Level::L4},
                           {"LWE", Level::L4},     {"HNP", Level::L4},
                           {"isogeny", Level::L4}, {"MT19937", Level::L4},
                           {"rsa", Level::L2},     {"xor", Level::L2},
                           {"base64", Level::L2},  {"caesar", Level::L2}};
        t.length_thresholds = {{8000, Level::L3}};
        t.default_level = Level::L2;
        return t;
    }

    static HeuristicTable from_json(const json& j) {
        HeuristicTable t;
        for (const auto& r : j.value("keywords", json::array())) {
            auto lvl = parse_level(r.at(1).get<std::string>());
            if (!lvl) throw ConfigError("heuristic keyword rule has invalid level");
            t.keyword_rules.emplace_back(r.at(0).get<std::string>(), *lvl);
        }
        for (const auto& r : j.value("length_thresholds", json::array())) {
            auto lvl = parse_level(r.at(1).get<std::string>());
            if (!lvl) throw ConfigError("heuristic length threshold has invalid level");
            t.length_thresholds.emplace_back(r.at(0).get<std::int64_t>(), *lvl);
        }
        if (j.contains("default_level")) {
            auto lvl = parse_level(j.at("default_level").get<std::string>());
            if (!lvl) throw ConfigError("heuristic default_level invalid");
            t.default_level = *lvl;
        }
        return t;
    }
};

// First matching keyword rule wins (case-insensitive); otherwise the largest
// satisfied length threshold; otherwise the default. Total and deterministic.
inline Level heuristic_grade(std::string_view text, const HeuristicTable& table) {
    for (const auto& [pattern, level] : table.keyword_rules)
        if (contains_ci(text, pattern)) return level;
    std::int64_t len = static_cast<std::int64_t>(text.size());
    const Level* best = nullptr;
    std::int64_t best_min = -1;
    for (const auto& [min_chars, level] : table.length_thresholds)
        if (len >= min_chars && min_chars > best_min) {
            best = &level;
            best_min = min_chars;
        }
    return best ? *best : table.default_level;
}

struct GraderConfig {
    bool enabled = false;
    std::string model_id;       // MID-tier grader model
    std::string session_label = "grader";
};

// One model call; reply scanned for a level token. Any failure collapses to
// nullopt, which the fallback chain consumes.
inline std::optional<Level> grade_with_agent(Provider& provider, const GraderConfig& cfg,
                                             const std::string& rubric,
                                             const std::string& context_excerpt) {
    if (!cfg.enabled || cfg.model_id.empty()) return std::nullopt;
    ChatRequest req;
    req.model_id = cfg.model_id;
    req.session_label = cfg.session_label;
    req.temperature = 0.0;
    req.messages.push_back({Role::System, rubric, {}});
    req.messages.push_back(
        {Role::User, "Rate the difficulty of the next step (L1-L5):\n\n" + context_excerpt, {}});
    try {
        ChatResponse resp = provider.complete(req);
        static const std::regex level_re("\\bL([1-5])\\b");
        std::smatch m;
        if (std::regex_search(resp.content, m, level_re))
            return static_cast<Level>(m[1].str()[0] - '0');
        return std::nullopt;
    } catch (const ProviderError&) {
        return std::nullopt;
    }
}

// Three-path fallback: self-assessment block, grader agent, heuristic.
// Exactly one path's result is returned; total by construction.
inline DifficultyRating estimate_difficulty(std::string_view last_agent_output,
                                            const std::string& context_excerpt,
                                            Provider& provider, const GraderConfig& grader,
                                            const std::string& rubric,
                                            const HeuristicTable& table) {
    auto parsed = extract_routing_block(last_agent_output);
    if (auto* block = std::get_if<RoutingBlock>(&parsed))
        return {block->difficulty, RatingSource::SELF_ASSESSMENT};
    if (auto level = grade_with_agent(provider, grader, rubric, context_excerpt))
        return {*level, RatingSource::GRADER_AGENT};
    return {heuristic_grade(context_excerpt, table), RatingSource::HEURISTIC};
}

inline RoutingDecision route(const DifficultyRating& rating, const ModelRegistry& registry) {
    Tier tier = tier_for(rating.level);
    const ModelSpec* spec = registry.resolve_tier(tier);
    if (!spec)
        throw ConfigError(std::string("no registered model for tier ") + to_string(tier));
    return {rating, tier, spec->model_id};
}

// Full transcript carried into the next request regardless of tier change;
// oldest non-system messages dropped only when the target context limit
// forces it. The system prompt is always retained.
inline std::vector<ChatMessage> handoff_context(const std::vector<ChatMessage>& transcript,
                                                const ModelSpec& target) {
    std::int64_t total = 0;
    for (const auto& m : transcript) total += word_count(m.content);
    if (total <= target.context_limit) return transcript;

    std::vector<ChatMessage> kept;
    std::vector<const ChatMessage*> non_system;
    for (const auto& m : transcript)
        if (m.role != Role::System) non_system.push_back(&m);

    std::int64_t system_tokens = 0;
    for (const auto& m : transcript)
        if (m.role == Role::System) system_tokens += word_count(m.content);

    // drop oldest non-system until the rest fits
    std::size_t drop = 0;
    std::int64_t rest = total - system_tokens;
    while (drop < non_system.size() && system_tokens + rest > target.context_limit) {
        rest -= word_count(non_system[drop]->content);
        ++drop;
    }
    std::size_t seen_non_system = 0;
    for (const auto& m : transcript) {
        if (m.role == Role::System) {
            kept.push_back(m);
        } else {
            if (seen_non_system++ >= drop) kept.push_back(m);
        }
    }
    return kept;
}

struct RoutingLogEntry {
    int turn = 0;
    Level level = Level::L2;
    RatingSource source = RatingSource::HEURISTIC;
    Tier tier = Tier::MID;
    std::string model_id;

    json to_json() const {
        return {{"turn", turn},
                {"level", to_string(level)},
                {"source", to_string(source)},
                {"tier", to_string(tier)},
                {"model_id", model_id}};
    }
};

}  // namespace ctfagent
