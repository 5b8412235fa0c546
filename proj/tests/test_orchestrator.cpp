#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctfagent/benchmark.hpp"
#include "ctfagent/orchestrator.hpp"

using namespace ctfagent;

TEST_CASE("flag detection against literal and pattern contracts") {
    FlagContract lit{FlagContract::Kind::LITERAL, "flag{a+b}"};
    CHECK(detect_flag("noise flag{a+b} noise", lit) == "flag{a+b}");
    CHECK(!detect_flag("flag{aab}", lit).has_value());  // regex specials escaped
    FlagContract pat{FlagContract::Kind::PATTERN, "flag\\{[0-9]+\\}"};
    CHECK(detect_flag("see flag{123} here", pat) == "flag{123}");
    CHECK(!detect_flag("flag{abc}", pat).has_value());
}

TEST_CASE("aggregator reply parsing") {
    CHECK(parse_aggregator_choice("I choose 2 because it is furthest along", 4) == 2);
    CHECK(parse_aggregator_choice("Choose 0", 3) == 0);
    CHECK(!parse_aggregator_choice("choose 7", 3).has_value());  // out of range
    CHECK(parse_aggregator_choice("scores: 1 3 2", 3) == 1);
    CHECK(parse_aggregator_choice("scores: 2 2 1", 3) == 0);     // tie -> lowest index
    CHECK(parse_aggregator_choice("scores: 0.5 0.9 0.9", 3) == 1);
    CHECK(!parse_aggregator_choice("scores: 1 2", 3).has_value());  // count mismatch
    CHECK(!parse_aggregator_choice("no structure at all", 2).has_value());
    // determinism
    for (int i = 0; i < 100; ++i) CHECK(parse_aggregator_choice("scores: 1 3 3 2", 4) == 1);
}

TEST_CASE("heavythink config validation") {
    CHECK_THROWS_AS((HeavyThinkConfig{0, 1}).validate(), ConfigError);
    CHECK_THROWS_AS((HeavyThinkConfig{1, 0}).validate(), ConfigError);
    CHECK_NOTHROW((HeavyThinkConfig{1, 1}).validate());
}

namespace {

struct Rig {
    fs::path sessions;
    ChallengeIndex index;
    std::unique_ptr<Provider> provider;
    std::unique_ptr<ScoreBoard> board;
    std::unique_ptr<Orchestrator> orch;

    explicit Rig(const json& script, const std::string& tag) {
        sessions = fs::temp_directory_path() /
                   ("ctfagent-orch-" + tag + "-" + std::to_string(unix_millis()));
        fs::remove_all(sessions);
        index = scan("fixtures/challenges");
        ModelRegistry reg;
        reg.register_model({"mid-default", Tier::MID, 0.1, 0.4, 128000});
        reg.register_model({"top-reasoner", Tier::TOP, 2.0, 8.0, 200000});
        provider = std::make_unique<Provider>(std::move(reg), MockBackend::from_json(script),
                                              RetryPolicy{3, std::chrono::milliseconds(1)});
        board = std::make_unique<ScoreBoard>(index);
        OrchestratorConfig cfg;
        cfg.bundle = PromptBundle::load("assets/prompts");
        cfg.sessions_root = sessions;
        orch = std::make_unique<Orchestrator>(
            *provider, std::move(cfg),
            [this](const std::string& cid, const std::string& flag, const std::string& sid) {
                return board->submit(cid, flag, sid);
            });
    }

    ~Rig() { fs::remove_all(sessions); }
};

json bench_script() { return json::parse(read_text_file("fixtures/scripts/bench.json")); }

}  // namespace

TEST_CASE("autonomous run: explicit submit_flag solves") {
    json script = bench_script();
    script["s1"] = script.at("toy-xor");
    Rig rig(script, "submit");
    const auto* c = rig.index.find("toy-xor");
    auto r = rig.orch->run_autonomous(*c, std::nullopt, 30, "s1");
    CHECK(r.session.outcome == Outcome::SOLVED);
    CHECK(r.session.flag == "flag{x0r_m4st3r}");
    CHECK(r.session.turn_count == 3);
    CHECK(rig.board->stats_for("toy-xor").solved);
    CHECK(r.cost_micro == rig.provider->ledger().running_total_micro());
}

TEST_CASE("autonomous run: passive flag detection over tool output") {
    json script = bench_script();
    script["s1"] = script.at("b64-note");
    Rig rig(script, "passive");
    const auto* c = rig.index.find("b64-note");
    auto r = rig.orch->run_autonomous(*c, std::nullopt, 30, "s1");
    CHECK(r.session.outcome == Outcome::SOLVED);
    CHECK(r.session.flag == "flag{b4se_sixty_four}");
    CHECK(r.session.turn_count == 2);
    // passive path still submits to the arbiter
    CHECK(rig.board->stats_for("b64-note").attempts == 1);
}

TEST_CASE("surrender token ends the session as AGENT_GAVE_UP") {
    json script{{"s1", json::array({json{{"content",
        std::string("This construction is beyond recovery. ") + kSurrenderToken}}})}};
    Rig rig(script, "giveup");
    const auto* c = rig.index.find("toy-xor");
    auto r = rig.orch->run_autonomous(*c, std::nullopt, 30, "s1");
    CHECK(r.session.outcome == Outcome::AGENT_GAVE_UP);
    CHECK(r.session.turn_count == 1);
}

TEST_CASE("budget exhaustion at exactly the budget") {
    json script{{"s1", json::array({json{
        {"content", "Still probing.\n```json\n{\"difficulty\": \"L2\"}\n```"},
        {"repeat", true}}})}};
    Rig rig(script, "budget");
    const auto* c = rig.index.find("toy-xor");
    auto r = rig.orch->run_autonomous(*c, std::nullopt, 7, "s1");
    CHECK(r.session.outcome == Outcome::BUDGET_EXHAUSTED);
    CHECK(r.session.turn_count == 7);
    CHECK_THROWS_AS(rig.orch->run_autonomous(*c, std::nullopt, 0, "s2"), ConfigError);
}

TEST_CASE("provider failure surfaces as ERRORED with a reason") {
    json script{{"s1", json::array({json{{"content", "one reply only"}}})}};
    Rig rig(script, "errored");
    const auto* c = rig.index.find("toy-xor");
    auto r = rig.orch->run_autonomous(*c, std::nullopt, 30, "s1");
    CHECK(r.session.outcome == Outcome::ERRORED);
    CHECK(r.session.error_reason.find("exhausted") != std::string::npos);
}

TEST_CASE("routing log: first turn heuristic, later turns self-assessment") {
    json script = bench_script();
    script["s1"] = script.at("toy-xor");
    Rig rig(script, "routelog");
    const auto* c = rig.index.find("toy-xor");
    auto r = rig.orch->run_autonomous(*c, std::nullopt, 30, "s1");
    REQUIRE(r.session.routing_log.size() == 3);
    CHECK(r.session.routing_log[0].source == RatingSource::HEURISTIC);
    CHECK(r.session.routing_log[1].source == RatingSource::SELF_ASSESSMENT);
    CHECK(r.session.routing_log[2].source == RatingSource::SELF_ASSESSMENT);
    CHECK(r.session.routing_log[1].level == Level::L2);
    CHECK(r.session.routing_log[1].tier == Tier::MID);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(r.session.routing_log[i].turn == static_cast<int>(i) + 1);
}

TEST_CASE("session artifacts persisted with the prescribed layout") {
    json script = bench_script();
    script["s1"] = script.at("toy-xor");
    Rig rig(script, "persist");
    const auto* c = rig.index.find("toy-xor");
    auto r = rig.orch->run_autonomous(*c, std::nullopt, 30, "s1");
    fs::path dir = r.session.session_dir;
    CHECK(validate_workspace_layout(dir).ok());
    json report = json::parse(read_text_file(dir / "report.json"));
    CHECK(report.at("outcome") == "SOLVED");
    CHECK(report.at("flag") == "flag{x0r_m4st3r}");
    CHECK(report.at("turns") == 3);
    // public files copied into the sandbox
    CHECK(fs::is_regular_file(dir / "sandbox" / "cipher.txt"));
    // one transcript line per message, no timestamps anywhere
    std::string transcript = read_text_file(dir / "transcript.jsonl");
    CHECK(transcript == r.session.transcript_jsonl());
    std::istringstream ss(transcript);
    std::string line;
    while (std::getline(ss, line)) {
        json j = json::parse(line);
        CHECK(!j.contains("timestamp"));
        CHECK(!j.contains("time"));
    }
}

TEST_CASE("degenerate heavythink delegates to the autonomous loop") {
    json s1 = bench_script();
    s1["ht"] = s1.at("rot13-scroll");
    json s2 = s1;
    Rig a(s1, "deg-auto"), b(s2, "deg-ht");
    const auto* c = a.index.find("rot13-scroll");
    auto ra = a.orch->run_autonomous(*c, std::nullopt, 30, "ht");
    auto rb = b.orch->run_heavythink(*a.index.find("rot13-scroll"), std::nullopt, {1, 1}, 30,
                                     "ht");
    CHECK(rb.mode == "heavythink");
    CHECK(ra.session.outcome == rb.session.outcome);
    CHECK(ra.session.transcript_jsonl() == rb.session.transcript_jsonl());
}

TEST_CASE("heavythink: early exit when a worker solves") {
    json script = bench_script();
    // both workers of round 1 play the toy-xor lane
    script["ht-r1w0"] = script.at("toy-xor");
    script["ht-r1w1"] = script.at("toy-xor");
    Rig rig(script, "ht-solve");
    const auto* c = rig.index.find("toy-xor");
    auto r = rig.orch->run_heavythink(*c, std::nullopt, {2, 3}, 30, "ht");
    CHECK(r.session.outcome == Outcome::SOLVED);
    CHECK(r.ht_workers == 2);
    CHECK(r.ht_iterations == 3);
    // solved in round 1: no round-2 lanes were ever consulted
}

TEST_CASE("heavythink: aggregator choice seeds the final answer") {
    auto worker_lane = [](const std::string& text) {
        return json::array({json{
            {"content", text + "\n```json\n{\"difficulty\": \"L2\"}\n```\n" +
                            std::string(kSurrenderToken)}}});
    };
    json script;
    script["ht-r1w0"] = worker_lane("candidate zero progress");
    script["ht-r1w1"] = worker_lane("candidate one progress");
    script["ht#agg"] = json::array({json{{"content", "scores: 1 5"}, {"repeat", true}}});
    Rig rig(script, "ht-agg");
    const auto* c = rig.index.find("toy-xor");
    auto r = rig.orch->run_heavythink(*c, std::nullopt, {2, 1}, 30, "ht");
    CHECK(r.session.outcome == Outcome::AGENT_GAVE_UP);
    // chosen candidate 1's transcript carried into the final state
    CHECK(r.session.transcript_jsonl().find("candidate one progress") != std::string::npos);
}

TEST_CASE("heavythink: unusable aggregator reply falls back to candidate 0") {
    auto worker_lane = [](const std::string& text) {
        return json::array({json{
            {"content", text + "\n" + std::string(kSurrenderToken)}}});
    };
    json script;
    script["ht-r1w0"] = worker_lane("zero");
    script["ht-r1w1"] = worker_lane("one");
    script["ht#agg"] = json::array({json{{"content", "shrug"}, {"repeat", true}}});
    Rig rig(script, "ht-fb");
    const auto* c = rig.index.find("toy-xor");
    auto r = rig.orch->run_heavythink(*c, std::nullopt, {2, 1}, 30, "ht");
    CHECK(r.session.transcript_jsonl().find("zero") != std::string::npos);
}

TEST_CASE("benchmark runner: solve-rate rows and error isolation") {
    json script = bench_script();
    script.erase("mirror-text");  // this lane now errors (no script)
    Rig rig(script, "bench");
    BenchmarkProfile profile = BenchmarkProfile::intercode30();
    BenchmarkReport rep = run_benchmark(rig.index, *rig.orch, *rig.board, profile);
    CHECK(rep.total == 5);
    CHECK(rep.solved == 4);
    CHECK(rep.rows.size() == 5);
    for (const auto& row : rep.rows) {
        if (row.id == "mirror-text")
            CHECK(row.outcome == "ERRORED");
        else
            CHECK(row.outcome == "SOLVED");
    }
    CHECK(rep.solve_rate() == doctest::Approx(0.8));
    json j = rep.to_json();
    CHECK(j.at("rows").size() == 5);
    CHECK(j.at("profile") == "intercode30");
}

TEST_CASE("service-backed challenge solved through the harness") {
    json script = bench_script();
    script["svc"] = script.at("echo-gate");
    Rig rig(script, "svc");
    const auto* c = rig.index.find("echo-gate");
    REQUIRE(c->service.has_value());
    ChallengeService svc(*c);
    auto r = rig.orch->run_autonomous(*c, svc.endpoint(), 30, "svc");
    CHECK(r.session.outcome == Outcome::SOLVED);
    CHECK(r.session.flag == "flag{serv1ce_fl4g}");
    svc.stop();
}
