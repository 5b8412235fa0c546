#include <CLI11.hpp>

#include <csignal>
#include <iomanip>
#include <iostream>

#include "ctfagent/arbitration_http.hpp"
#include "ctfagent/benchmark.hpp"
#include "ctfagent/config.hpp"
#include "ctfagent/http_backend.hpp"
#include "ctfagent/orchestrator.hpp"
#include "ctfagent/research.hpp"
#include "ctfagent/research_http.hpp"
#include "ctfagent/workspace.hpp"

namespace {

using namespace ctfagent;

struct App {
    RunConfig cfg;
    std::unique_ptr<Provider> provider;
    std::shared_ptr<Workspace> workspace;
    std::shared_ptr<ResearchPipeline> research;
    PromptBundle bundle;

    explicit App(const std::string& config_path) {
        cfg = RunConfig::load(config_path);
        cfg.validate();  // nothing runs before this passes
        ModelRegistry registry;
        for (const auto& m : cfg.models) registry.register_model(m);
        std::unique_ptr<Backend> backend;
        if (cfg.offline()) {
            backend = MockBackend::from_file(cfg.mock_script);
        } else {
            backend = std::make_unique<HttpBackend>(registry);
        }
        provider = std::make_unique<Provider>(std::move(registry), std::move(backend));
        workspace = std::make_shared<Workspace>(cfg.workspace_root);
        bundle = PromptBundle::load(cfg.prompts_dir);
        research = build_research();
    }

    std::shared_ptr<ResearchPipeline> build_research() const {
        ResearchConfig rc;
        rc.per_channel_cap = cfg.per_channel_cap;
        rc.channel_timeout = std::chrono::seconds(cfg.channel_timeout_s);
        if (!cfg.blocklist_path.empty()) {
            json bl = json::parse(read_text_file(cfg.blocklist_path));
            for (const auto& b : bl) rc.blocklist.push_back(b.get<std::string>());
        }
        std::map<Channel, std::shared_ptr<ChannelClient>> channels;
        std::shared_ptr<SnapshotConverter> primary, fallback;
        if (!cfg.sources_path.empty()) {
            json src = json::parse(read_text_file(cfg.sources_path));
            for (Channel c : kChannelOrder) {
                std::vector<RawResult> results;
                for (const auto& item : src.value(to_string(c), json::array()))
                    results.push_back({item.value("title", std::string()),
                                       item.at("url").get<std::string>()});
                channels[c] = std::make_shared<FixtureChannel>(std::move(results));
            }
            std::map<std::string, std::string> text_map, md_map;
            json snaps = src.value("snapshots", json::object());
            for (const auto& [url, body] : snaps.items()) {
                text_map[url] = body.value("text", std::string());
                md_map[url] = body.value("markdown", std::string());
            }
            primary = std::make_shared<FixtureConverter>("text", std::move(text_map));
            fallback = std::make_shared<FixtureConverter>("markdown", std::move(md_map));
        } else {
            auto env_or = [](const char* var) {
                const char* v = std::getenv(var);
                return v ? std::string(v) : std::string();
            };
            if (auto base = env_or("SEARCH_WEB_URL"); !base.empty())
                channels[Channel::WEB] =
                    std::make_shared<HttpChannel>(base, "/search", "SEARCH_WEB_TOKEN");
            if (auto base = env_or("SEARCH_ACADEMIC_URL"); !base.empty())
                channels[Channel::ACADEMIC] =
                    std::make_shared<HttpChannel>(base, "/search", "SEARCH_ACADEMIC_TOKEN");
            if (auto base = env_or("SEARCH_CODE_URL"); !base.empty())
                channels[Channel::CODE] =
                    std::make_shared<HttpChannel>(base, "/search", "SEARCH_CODE_TOKEN");
            if (auto base = env_or("SNAPSHOT_TEXT_URL"); !base.empty())
                primary = std::make_shared<HttpConverter>("text", base);
            if (auto base = env_or("SNAPSHOT_MD_URL"); !base.empty())
                fallback = std::make_shared<HttpConverter>("markdown", base);
        }
        return std::make_shared<ResearchPipeline>(rc, std::move(channels), primary, fallback);
    }

    Orchestrator make_orchestrator(ScoreBoard& board) {
        OrchestratorConfig oc;
        oc.bundle = bundle;
        oc.heuristic = cfg.heuristic;
        oc.grader.enabled = cfg.grader_enabled;
        oc.grader.model_id = cfg.grader_model;
        oc.sessions_root = cfg.sessions_root;
        oc.toolbox.crypto_endpoint = cfg.crypto_endpoint;
        Orchestrator orch(*provider, std::move(oc),
                          [&board](const std::string& cid, const std::string& flag,
                                   const std::string& sid) {
                              return board.submit(cid, flag, sid);
                          });
        auto ws = workspace;
        auto dr = research;
        orch.toolbox_customizer = [ws, dr](Toolbox& tb) {
            tb.register_research(dr);
            tb.register_workspace(ws);
            tb.register_crypto_compute([](const std::string& endpoint,
                                          const std::string& body)
                                           -> std::optional<std::string> {
                httplib::Client client(endpoint);
                client.set_connection_timeout(10);
                auto res = client.Post("/compute", body, "application/json");
                if (!res || res->status != 200) return std::nullopt;
                return res->body;
            });
        };
        return orch;
    }
};

void print_bench(const BenchmarkReport& rep) {
    std::cout << std::left << std::setw(16) << "challenge" << std::setw(20) << "outcome"
              << std::setw(8) << "turns" << std::setw(10) << "seconds" << "cost\n";
    for (const auto& row : rep.rows)
        std::cout << std::left << std::setw(16) << row.id << std::setw(20) << row.outcome
                  << std::setw(8) << row.turns << std::setw(10) << row.seconds << row.cost
                  << "\n";
    std::cout << "solve rate: " << rep.solved << "/" << rep.total << "\n";
}

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CTF agent orchestration framework"};
    app.require_subcommand(1);
    std::string config_path = "config.json";
    app.add_option("-c,--config", config_path, "Run configuration (JSON)");
    app.fallthrough();  // allow --config after the subcommand name

    std::string root, challenge_id, profile_name = "intercode30", mode = "auto";
    std::string out_path, report_path, ingest_path;
    std::vector<std::string> topics;
    int workers = 1, iters = 1, budget = 30;

    auto* scan_cmd = app.add_subcommand("scan", "Index a challenge tree");
    scan_cmd->add_option("root", root)->required();

    auto* serve_cmd = app.add_subcommand("serve", "Host challenge services and arbitration");
    serve_cmd->add_option("root", root)->required();

    auto* run_cmd = app.add_subcommand("run", "Run one solving session");
    run_cmd->add_option("challenge", challenge_id)->required();
    run_cmd->add_option("--root", root, "Challenge tree")->default_val("fixtures/challenges");
    run_cmd->add_option("--mode", mode)->check(CLI::IsMember({"auto", "heavythink"}));
    run_cmd->add_option("--workers", workers);
    run_cmd->add_option("--iters", iters);
    run_cmd->add_option("--budget", budget);

    auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark over a challenge tree");
    bench_cmd->add_option("root", root)->required();
    bench_cmd->add_option("--profile", profile_name);
    bench_cmd->add_option("--out", out_path, "Write the JSON report here");

    auto* research_cmd = app.add_subcommand("research", "Run the retrieval pipeline");
    research_cmd->add_option("topics", topics)->required();

    auto* ingest_cmd = app.add_subcommand("ingest", "Ingest a file into the workspace");
    ingest_cmd->add_option("path", ingest_path)->required();

    auto* report_cmd = app.add_subcommand("report", "Render a session or bench report");
    report_cmd->add_option("path", report_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (report_cmd->parsed()) {
            // pure rendering, no config needed
            json j = json::parse(read_text_file(report_path));
            if (j.contains("rows")) {
                BenchmarkReport rep;
                rep.profile = j.value("profile", std::string());
                rep.solved = j.value("solved", 0);
                rep.total = j.value("total", 0);
                for (const auto& r : j.at("rows"))
                    rep.rows.push_back({r.at("id").get<std::string>(),
                                        r.at("outcome").get<std::string>(),
                                        r.value("turns", 0), r.value("seconds", 0.0),
                                        r.value("cost", 0.0)});
                print_bench(rep);
            } else {
                std::cout << std::left << std::setw(14) << "outcome"
                          << j.value("outcome", std::string()) << "\n"
                          << std::setw(14) << "turns" << j.value("turns", 0) << "\n"
                          << std::setw(14) << "wall_ms" << j.value("wall_ms", 0) << "\n"
                          << std::setw(14) << "cost"
                          << static_cast<double>(j.value("cost_micro", 0)) / 1e6 << "\n"
                          << std::setw(14) << "mode" << j.value("mode", std::string())
                          << "\n";
                if (j.contains("flag"))
                    std::cout << std::setw(14) << "flag" << j.at("flag").get<std::string>()
                              << "\n";
            }
            return 0;
        }

        App ctx(config_path);

        if (scan_cmd->parsed()) {
            ChallengeIndex index = scan(root);
            for (const auto& c : index.challenges)
                std::cout << c.id << "\t" << c.category << "\t" << c.files.size()
                          << " file(s)" << (c.service ? "\tservice" : "") << "\n";
            for (const auto& d : index.diagnostics)
                std::cerr << "warning: " << d.path.string() << ": " << d.message << "\n";
            return 0;
        }

        if (serve_cmd->parsed()) {
            ChallengeIndex index = scan(root);
            ScoreBoard board(index);
            ArbitrationServer arb(board);
            std::vector<std::unique_ptr<ChallengeService>> services;
            for (const auto& c : index.challenges)
                if (c.service) {
                    services.push_back(std::make_unique<ChallengeService>(c));
                    std::cout << c.id << " listening on " << services.back()->endpoint()
                              << "\n";
                }
            std::cout << "arbitration on 127.0.0.1:" << arb.port()
                      << " (POST /submit, GET /stats)\n";
            std::signal(SIGINT, [](int) { g_stop = 1; });
            std::signal(SIGTERM, [](int) { g_stop = 1; });
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
            return 0;
        }

        if (run_cmd->parsed()) {
            if (mode == "heavythink" && (workers < 1 || iters < 1))
                throw ConfigError("heavythink requires --workers >= 1 and --iters >= 1");
            if (budget < 1) throw ConfigError("--budget must be >= 1");
            ChallengeIndex index = scan(root);
            const ChallengeDescriptor* c = index.find(challenge_id);
            if (!c) throw ConfigError("unknown challenge: " + challenge_id);
            ScoreBoard board(index);
            Orchestrator orch = ctx.make_orchestrator(board);
            std::unique_ptr<ChallengeService> service;
            std::optional<std::string> endpoint;
            if (c->service) {
                service = std::make_unique<ChallengeService>(*c);
                endpoint = service->endpoint();
            }
            Orchestrator::RunResult r =
                mode == "heavythink"
                    ? orch.run_heavythink(*c, endpoint, {workers, iters}, budget, c->id)
                    : orch.run_autonomous(*c, endpoint, budget, c->id);
            std::cout << "outcome: " << to_string(*r.session.outcome)
                      << "  turns: " << r.session.turn_count
                      << "  cost: " << static_cast<double>(r.cost_micro) / 1e6 << "\n";
            std::cout << "artifacts: " << r.session.session_dir.string() << "\n";
            return r.session.outcome == Outcome::SOLVED ? 0 : 2;
        }

        if (bench_cmd->parsed()) {
            const BenchmarkProfile* profile = ctx.cfg.profile(profile_name);
            if (!profile) throw ConfigError("unknown profile: " + profile_name);
            ChallengeIndex index = scan(root);
            ScoreBoard board(index);
            Orchestrator orch = ctx.make_orchestrator(board);
            BenchmarkReport rep = run_benchmark(index, orch, board, *profile);
            print_bench(rep);
            if (!out_path.empty()) write_text_file(out_path, rep.to_json().dump(2));
            return 0;
        }

        if (research_cmd->parsed()) {
            ResearchQuery q;
            q.topics = topics;
            ResearchReport rep = ctx.research->run(q);
            std::cout << rep.to_json().dump(2) << "\n";
            return 0;
        }

        if (ingest_cmd->parsed()) {
            std::string content = read_text_file(ingest_path);
            DocMetadata md;
            md.title = fs::path(ingest_path).filename().string();
            md.source_channel = "cli";
            std::string id = ctx.workspace->ingest(content, ingest_path, md);
            ctx.workspace->summarize_offline(id);
            std::cout << id << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ';');
        std::cerr << "error: " << msg << "\n";
        return 1;
    }
    return 0;
}
