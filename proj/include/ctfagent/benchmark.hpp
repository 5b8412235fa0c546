#pragma once

#include <memory>
#include <string>
#include <vector>

#include "harness.hpp"
#include "orchestrator.hpp"

namespace ctfagent {

struct BenchmarkProfile {
    std::string name;
    int turn_budget = 30;
    std::string mode = "auto";  // "auto" | "heavythink"
    HeavyThinkConfig ht;

    static BenchmarkProfile intercode30() { return {"intercode30", 30, "auto", {}}; }
    static BenchmarkProfile nyu50() { return {"nyu50", 50, "auto", {}}; }
};

struct BenchmarkRow {
    std::string id;
    std::string outcome;
    int turns = 0;
    double seconds = 0.0;
    double cost = 0.0;

    json to_json() const {
        return {{"id", id},
                {"outcome", outcome},
                {"turns", turns},
                {"seconds", seconds},
                {"cost", cost}};
    }
};

struct BenchmarkReport {
    std::string profile;
    std::vector<BenchmarkRow> rows;
    int solved = 0;
    int total = 0;

    double solve_rate() const { return total ? static_cast<double>(solved) / total : 0.0; }

    json to_json() const {
        json r = json::array();
        for (const auto& row : rows) r.push_back(row.to_json());
        return {{"profile", profile},
                {"rows", std::move(r)},
                {"solved", solved},
                {"total", total},
                {"solve_rate", solve_rate()}};
    }
};

// One session per challenge; services scheduled on demand; per-challenge
// failures become ERRORED rows, the run continues. Sequential by default so
// logs stay reproducible.
inline BenchmarkReport run_benchmark(const ChallengeIndex& index, Orchestrator& orch,
                                     ScoreBoard& board, const BenchmarkProfile& profile) {
    if (index.challenges.empty()) throw ConfigError("benchmark index is empty");
    BenchmarkReport report;
    report.profile = profile.name;
    report.total = static_cast<int>(index.challenges.size());
    for (const auto& challenge : index.challenges) {
        BenchmarkRow row;
        row.id = challenge.id;
        try {
            std::unique_ptr<ChallengeService> service;
            std::optional<std::string> endpoint;
            if (challenge.service) {
                service = std::make_unique<ChallengeService>(challenge);
                endpoint = service->endpoint();
            }
            std::string session_id = challenge.id;
            Orchestrator::RunResult r =
                profile.mode == "heavythink"
                    ? orch.run_heavythink(challenge, endpoint, profile.ht,
                                          profile.turn_budget, session_id)
                    : orch.run_autonomous(challenge, endpoint, profile.turn_budget,
                                          session_id);
            row.outcome = to_string(*r.session.outcome);
            row.turns = r.session.turn_count;
            row.seconds = static_cast<double>(r.wall_ms) / 1000.0;
            row.cost = static_cast<double>(r.cost_micro) / 1e6;
            if (r.session.outcome == Outcome::SOLVED) ++report.solved;
        } catch (const std::exception& e) {
            row.outcome = "ERRORED";
        }
        report.rows.push_back(std::move(row));
        (void)board;
    }
    return report;
}

}  // namespace ctfagent
