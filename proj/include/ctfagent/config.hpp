#pragma once

#include <cstdlib>
#include <string>
#include <vector>

#include "benchmark.hpp"
#include "provider.hpp"
#include "routing.hpp"

namespace ctfagent {

// ${VAR} occurrences replaced from the environment; unset variables expand
// to the empty string.
inline std::string interpolate_env(const std::string& text) {
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t open = text.find("${", pos);
        if (open == std::string::npos) {
            out += text.substr(pos);
            break;
        }
        std::size_t close = text.find('}', open + 2);
        if (close == std::string::npos) {
            out += text.substr(pos);
            break;
        }
        out += text.substr(pos, open - pos);
        std::string var = text.substr(open + 2, close - open - 2);
        const char* val = std::getenv(var.c_str());
        if (val) out += val;
        pos = close + 1;
    }
    return out;
}

struct RunConfig {
    std::vector<ModelSpec> models;
    HeuristicTable heuristic = HeuristicTable::shipped();
    std::string grader_model;
    bool grader_enabled = false;
    // research
    std::string blocklist_path;
    std::string sources_path;  // fixture-backed channels when set
    int per_channel_cap = 5;
    int channel_timeout_s = 20;
    // paths
    std::string workspace_root = "workspace";
    std::string prompts_dir = "assets/prompts";
    std::string crypto_endpoint;
    std::string sessions_root = "sessions";
    // execution
    std::vector<BenchmarkProfile> profiles;
    std::string mock_script;  // offline mode when set
    json raw = json::object();

    bool offline() const { return !mock_script.empty(); }

    const BenchmarkProfile* profile(const std::string& name) const {
        for (const auto& p : profiles)
            if (p.name == name) return &p;
        return nullptr;
    }

    // Collects every violation; throws one ConfigError listing all of them.
    void validate() const {
        std::vector<std::string> errs;
        if (models.empty()) errs.push_back("models: at least one model required");
        bool has_mid = false, has_top = false, any_live = false;
        std::set<std::string> ids;
        for (const auto& m : models) {
            if (!ids.insert(m.model_id).second)
                errs.push_back("models: duplicate id " + m.model_id);
            if (m.input_rate < 0 || m.output_rate < 0)
                errs.push_back("models: negative rate on " + m.model_id);
            if (m.tier == Tier::MID) has_mid = true;
            if (m.tier == Tier::TOP) has_top = true;
            if (!m.base_url.empty()) any_live = true;
        }
        if (!has_mid) errs.push_back("models: no MID-tier model registered");
        if (!has_top) errs.push_back("models: no TOP-tier model registered");
        if (mock_script.empty() && !any_live)
            errs.push_back("exactly one of live model endpoints or a mock script is required");
        if (!mock_script.empty() && any_live)
            errs.push_back("mock script and live endpoints are mutually exclusive");
        if (!mock_script.empty() && !fs::exists(mock_script))
            errs.push_back("offline.mock_script: path does not exist: " + mock_script);
        if (!blocklist_path.empty() && !fs::exists(blocklist_path))
            errs.push_back("research.blocklist_path: path does not exist: " + blocklist_path);
        if (!fs::exists(prompts_dir))
            errs.push_back("prompts_dir: path does not exist: " + prompts_dir);
        if (grader_enabled && grader_model.empty())
            errs.push_back("routing.grader_model required when the grader is enabled");
        for (const auto& p : profiles) {
            if (p.turn_budget <= 0)
                errs.push_back("profiles." + p.name + ": turn_budget must be positive");
            if (p.mode != "auto" && p.mode != "heavythink")
                errs.push_back("profiles." + p.name + ": mode must be auto or heavythink");
            if (p.ht.workers < 1 || p.ht.iterations < 1)
                errs.push_back("profiles." + p.name + ": heavythink N and M must be >= 1");
        }
        if (!errs.empty()) {
            std::string msg = "config validation failed:";
            for (const auto& e : errs) msg += "\n  - " + e;
            throw ConfigError(msg);
        }
    }

    static RunConfig from_json(json j) {
        RunConfig c;
        c.raw = j;
        for (const auto& m : j.value("models", json::array())) {
            ModelSpec s;
            s.model_id = m.at("model_id").get<std::string>();
            auto tier = parse_tier(m.value("tier", std::string("MID")));
            if (!tier) throw ConfigError("invalid tier for model " + s.model_id);
            s.tier = *tier;
            s.input_rate = m.value("input_rate", 0.0);
            s.output_rate = m.value("output_rate", 0.0);
            s.context_limit = m.value("context_limit", std::int64_t{128000});
            s.base_url = m.value("base_url", std::string());
            s.path = m.value("path", std::string("/v1/chat/completions"));
            s.auth_env = m.value("auth_env", std::string());
            c.models.push_back(std::move(s));
        }
        if (j.contains("routing")) {
            const json& r = j.at("routing");
            if (r.contains("heuristic")) c.heuristic = HeuristicTable::from_json(r.at("heuristic"));
            c.grader_model = r.value("grader_model", std::string());
            c.grader_enabled = r.value("grader_enabled", false);
        }
        if (j.contains("research")) {
            const json& r = j.at("research");
            c.blocklist_path = r.value("blocklist_path", std::string());
            c.sources_path = r.value("sources_path", std::string());
            c.per_channel_cap = r.value("per_channel_cap", 5);
            c.channel_timeout_s = r.value("timeout_seconds", 20);
        }
        c.workspace_root = j.value("workspace_root", std::string("workspace"));
        c.prompts_dir = j.value("prompts_dir", std::string("assets/prompts"));
        c.crypto_endpoint = j.value("crypto_endpoint", std::string());
        c.sessions_root = j.value("sessions_root", std::string("sessions"));
        for (const auto& p : j.value("profiles", json::array())) {
            BenchmarkProfile bp;
            bp.name = p.at("name").get<std::string>();
            bp.turn_budget = p.value("turn_budget", 30);
            bp.mode = p.value("mode", std::string("auto"));
            if (p.contains("heavythink")) {
                bp.ht.workers = p.at("heavythink").value("workers", 1);
                bp.ht.iterations = p.at("heavythink").value("iterations", 1);
            }
            c.profiles.push_back(std::move(bp));
        }
        if (j.contains("offline"))
            c.mock_script = j.at("offline").value("mock_script", std::string());
        return c;
    }

    static RunConfig load(const fs::path& p) {
        std::string text = interpolate_env(read_text_file(p));
        try {
            return from_json(json::parse(text));
        } catch (const json::exception& e) {
            throw ConfigError("unparseable config " + p.string() + ": " + e.what());
        }
    }

    // Value round-trip: the loaded document is preserved verbatim.
    json to_json() const { return raw; }
};

}  // namespace ctfagent
