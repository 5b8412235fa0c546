#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "common.hpp"

namespace ctfagent {

// Ordered solve workflow stages.
enum class SolveStage { RECON, ANALYSIS, KNOWLEDGE, EXPLOIT_BUILD, FLAG_VALIDATE };

inline const char* to_string(SolveStage s) {
    switch (s) {
        case SolveStage::RECON: return "RECON";
        case SolveStage::ANALYSIS: return "ANALYSIS";
        case SolveStage::KNOWLEDGE: return "KNOWLEDGE";
        case SolveStage::EXPLOIT_BUILD: return "EXPLOIT_BUILD";
        case SolveStage::FLAG_VALIDATE: return "FLAG_VALIDATE";
    }
    return "RECON";
}

inline constexpr std::array<SolveStage, 5> kSolveStages{
    SolveStage::RECON, SolveStage::ANALYSIS, SolveStage::KNOWLEDGE,
    SolveStage::EXPLOIT_BUILD, SolveStage::FLAG_VALIDATE};

// Token the SOP instructs the agent to emit when it judges the task unsolvable.
inline constexpr const char* kSurrenderToken = "[[GIVE_UP]]";

struct ReferenceRepo {
    std::string name;
    std::string purpose;
};

struct PromptBundle {
    std::string main_sop;            // ctf_main.md
    std::string solve_workflow;      // solve_challenge.md
    std::string difficulty_rubric;   // router_difficulty.md
    std::string research_instructions;  // deep_research.md
    std::vector<ReferenceRepo> reference_library;  // reference_repos.json

    void validate() const {
        std::vector<std::string> missing;
        if (main_sop.empty()) missing.push_back("main_sop");
        if (solve_workflow.empty()) missing.push_back("solve_workflow");
        if (difficulty_rubric.empty()) missing.push_back("difficulty_rubric");
        if (research_instructions.empty()) missing.push_back("research_instructions");
        if (reference_library.empty()) missing.push_back("reference_library");
        if (!missing.empty()) {
            std::string msg = "prompt bundle incomplete:";
            for (const auto& m : missing) msg += " " + m;
            throw ConfigError(msg);
        }
    }

    static PromptBundle load(const fs::path& prompts_dir) {
        PromptBundle b;
        b.main_sop = read_text_file(prompts_dir / "ctf_main.md");
        b.solve_workflow = read_text_file(prompts_dir / "solve_challenge.md");
        b.difficulty_rubric = read_text_file(prompts_dir / "router_difficulty.md");
        b.research_instructions = read_text_file(prompts_dir / "deep_research.md");
        json repos = json::parse(read_text_file(prompts_dir / "reference_repos.json"));
        for (const auto& r : repos)
            b.reference_library.push_back(
                {r.at("name").get<std::string>(), r.at("purpose").get<std::string>()});
        b.validate();
        return b;
    }
};

struct RoutingBlock {
    Level difficulty = Level::L2;
    std::string rationale;
    std::string next_action;
};

struct RoutingBlockAbsent {};
struct RoutingBlockMalformed {};

using RoutingBlockResult =
    std::variant<RoutingBlock, RoutingBlockAbsent, RoutingBlockMalformed>;

// Returns the content of the LAST ```json fenced block, or nullopt.
inline std::optional<std::string> last_fenced_json_block(std::string_view text) {
    std::optional<std::string> found;
    std::size_t pos = 0;
    while (true) {
        std::size_t open = text.find("```json", pos);
        if (open == std::string_view::npos) break;
        std::size_t body = open + 7;
        // skip to end of the fence line
        std::size_t nl = text.find('\n', body);
        if (nl == std::string_view::npos) break;
        std::size_t close = text.find("```", nl + 1);
        if (close == std::string_view::npos) break;
        found = std::string(text.substr(nl + 1, close - nl - 1));
        pos = close + 3;
    }
    return found;
}

// Total over arbitrary text; never throws.
inline RoutingBlockResult extract_routing_block(std::string_view agent_output) noexcept {
    try {
        auto block = last_fenced_json_block(agent_output);
        if (!block) return RoutingBlockAbsent{};
        json j = json::parse(*block, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded() || !j.is_object()) return RoutingBlockMalformed{};
        if (!j.contains("difficulty") || !j.at("difficulty").is_string())
            return RoutingBlockMalformed{};
        auto level = parse_level(j.at("difficulty").get<std::string>());
        if (!level) return RoutingBlockMalformed{};
        RoutingBlock rb;
        rb.difficulty = *level;
        if (j.contains("rationale") && j.at("rationale").is_string())
            rb.rationale = j.at("rationale").get<std::string>();
        if (j.contains("next_action") && j.at("next_action").is_string())
            rb.next_action = j.at("next_action").get<std::string>();
        return rb;
    } catch (...) {
        return RoutingBlockMalformed{};
    }
}

// Minimal challenge context the prompt assembler needs; the full descriptor
// lives in the harness module.
struct ChallengeContext {
    std::string name;
    std::string category;
    std::vector<std::string> files;
    std::optional<std::string> service_endpoint;  // "host:port" when hosted
};

// Deterministic concatenation: SOP, workflow, tool/library guidance,
// routing-block requirement, then challenge context.
inline std::string assemble_system_prompt(const PromptBundle& bundle,
                                          const ChallengeContext& challenge,
                                          const std::string& workspace_summary) {
    bundle.validate();
    std::string out;
    out += bundle.main_sop;
    out += "\n\n## Solve workflow\n\n";
    out += bundle.solve_workflow;
    out += "\n\n## Reference library\n\n";
    for (const auto& r : bundle.reference_library)
        out += "- " + r.name + ": " + r.purpose + "\n";
    out += "\n## Output contract\n\n";
    out +=
        "End every response with a fenced ```json block containing at least "
        "{\"difficulty\": \"L1\"|\"L2\"|\"L3\"|\"L4\"|\"L5\", \"rationale\": \"...\"} "
        "rating the difficulty of your NEXT step. If you conclude the task is "
        "unsolvable, state it and emit the token ";
    out += kSurrenderToken;
    out += ".\n";
    out += "\n## Challenge\n\n";
    out += "Name: " + challenge.name + "\n";
    out += "Category: " + challenge.category + "\n";
    out += "Files:\n";
    for (const auto& f : challenge.files) out += "- " + f + "\n";
    if (challenge.service_endpoint)
        out += "Service: " + *challenge.service_endpoint + "\n";
    if (!workspace_summary.empty()) {
        out += "\n## Workspace\n\n";
        out += workspace_summary;
        out += "\n";
    }
    return out;
}

struct LayoutViolation {
    std::string path;
    std::string rule;
};

struct LayoutReport {
    std::vector<LayoutViolation> violations;
    std::vector<std::string> warnings;  // unknown extras: tolerated, noted
    bool ok() const { return violations.empty(); }
};

// Prescribed session directory layout. Unknown extra entries warn, not violate.
inline LayoutReport validate_workspace_layout(const fs::path& session_dir) {
    if (!fs::is_directory(session_dir))
        throw StorageError("not a directory: " + session_dir.string());
    LayoutReport rep;
    static const std::vector<std::string> required_dirs = {"sandbox", "notes"};
    static const std::vector<std::string> required_files = {"transcript.jsonl",
                                                            "routing.jsonl", "tools.jsonl"};
    static const std::vector<std::string> known_extras = {"report.json"};
    for (const auto& d : required_dirs)
        if (!fs::is_directory(session_dir / d))
            rep.violations.push_back({d, "required subdirectory missing"});
    for (const auto& f : required_files)
        if (!fs::is_regular_file(session_dir / f))
            rep.violations.push_back({f, "required file missing"});
    for (const auto& entry : fs::directory_iterator(session_dir)) {
        std::string name = entry.path().filename().string();
        auto in = [&](const std::vector<std::string>& v) {
            return std::find(v.begin(), v.end(), name) != v.end();
        };
        if (!in(required_dirs) && !in(required_files) && !in(known_extras))
            rep.warnings.push_back(name);
    }
    return rep;
}

// Creates a session directory satisfying validate_workspace_layout.
inline void init_session_dir(const fs::path& session_dir) {
    fs::create_directories(session_dir / "sandbox");
    fs::create_directories(session_dir / "notes");
    for (const char* f : {"transcript.jsonl", "routing.jsonl", "tools.jsonl"})
        if (!fs::exists(session_dir / f)) write_text_file(session_dir / f, "");
}

}  // namespace ctfagent
