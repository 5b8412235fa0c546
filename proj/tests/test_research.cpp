#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctfagent/research.hpp"

using namespace ctfagent;

TEST_CASE("query sanitization: blocklist removal and minimum token rule") {
    std::vector<std::string> bl{"flag{", "secret phrase"};
    CHECK(sanitize_query("truncated lcg lattice", bl) == "truncated lcg lattice");
    // phrase removed case-insensitively, whitespace renormalized
    CHECK(sanitize_query("lattice SECRET PHRASE attack", bl) == "lattice attack");
    // fewer than two meaningful tokens -> rejected
    CHECK(!sanitize_query("lattice", bl).has_value());
    CHECK(!sanitize_query("secret phrase", bl).has_value());
    CHECK(!sanitize_query("", bl).has_value());
    CHECK(sanitize_query("two words", {}) == "two words");
}

TEST_CASE("url normalization drops fragment and query, lowercases scheme and host") {
    CHECK(normalize_url("https://Example.org/Blog/Post?utm=1#frag") ==
          "https://example.org/Blog/Post");
    CHECK(normalize_url("https://example.org/a/") == normalize_url("https://example.org/a"));
    CHECK(normalize_url("HTTPS://EXAMPLE.ORG") == "https://example.org");
    // path case is significant
    CHECK(normalize_url("https://example.org/A") != normalize_url("https://example.org/a"));
}

static std::shared_ptr<FixtureConverter> text_conv(std::map<std::string, std::string> m) {
    return std::make_shared<FixtureConverter>("text", std::move(m));
}
static std::shared_ptr<FixtureConverter> md_conv(std::map<std::string, std::string> m) {
    return std::make_shared<FixtureConverter>("markdown", std::move(m));
}

static ResearchPipeline three_channel_pipeline(bool fail_academic = false,
                                               std::chrono::milliseconds academic_delay = {}) {
    ResearchConfig cfg;
    cfg.channel_timeout = std::chrono::milliseconds(500);
    std::map<Channel, std::shared_ptr<ChannelClient>> channels;
    channels[Channel::WEB] = std::make_shared<FixtureChannel>(std::vector<RawResult>{
        {"Post A", "https://a.example/post"}, {"Shared", "https://s.example/shared"}});
    channels[Channel::ACADEMIC] = std::make_shared<FixtureChannel>(
        std::vector<RawResult>{{"Paper B", "https://b.example/paper"}}, academic_delay,
        fail_academic);
    channels[Channel::CODE] = std::make_shared<FixtureChannel>(std::vector<RawResult>{
        {"Repo C", "https://c.example/repo"}, {"Shared again", "https://s.example/shared#readme"}});
    std::map<std::string, std::string> bodies{
        {"https://a.example/post", "First point. Second point. Third point. Fourth point."},
        {"https://s.example/shared", "Shared body."},
        {"https://b.example/paper", "Abstract sentence."},
        {"https://c.example/repo", "Readme line."},
    };
    return ResearchPipeline(cfg, std::move(channels), text_conv(bodies), md_conv(bodies));
}

TEST_CASE("fan-out reaches all channels; report always has three groups") {
    auto pipe = three_channel_pipeline();
    ResearchQuery q;
    q.topics = {"lattice attacks"};
    ResearchReport rep = pipe.run(q);
    json j = rep.to_json();
    CHECK(j.at("groups").size() == 3);
    CHECK(j.at("groups").contains("WEB"));
    CHECK(j.at("groups").contains("ACADEMIC"));
    CHECK(j.at("groups").contains("CODE"));
    CHECK(rep.groups.at("WEB").size() == 2);
    CHECK(rep.groups.at("ACADEMIC").size() == 1);
}

TEST_CASE("cross-channel dedup: WEB outranks CODE, fragment ignored") {
    auto pipe = three_channel_pipeline();
    ResearchReport rep = pipe.run({{"lattice attacks"}});
    // shared URL appears once, under WEB
    CHECK(rep.groups.at("WEB").size() == 2);
    CHECK(rep.groups.at("CODE").size() == 1);
    CHECK(rep.groups.at("CODE")[0].origin_url == "https://c.example/repo");
}

TEST_CASE("every item has exactly two snapshot refs and a note citing one") {
    auto pipe = three_channel_pipeline();
    ResearchReport rep = pipe.run({{"lattice attacks"}});
    int items = 0;
    for (const auto& [_, group] : rep.groups)
        for (const auto& item : group) {
            ++items;
            CHECK(item.snapshot_refs.size() == 2);
            CHECK(!item.snapshot_refs[0].failed);
            CHECK(!item.snapshot_refs[1].failed);
            CHECK(!item.note.empty());
            CHECK(item.note.find("[snapshot: ") != std::string::npos);
        }
    CHECK(items == 4);
}

TEST_CASE("note is an extract of at most three sentences") {
    auto pipe = three_channel_pipeline();
    ResearchReport rep = pipe.run({{"lattice attacks"}});
    const auto& a = rep.groups.at("WEB")[0];
    CHECK(a.note.find("Third point.") != std::string::npos);
    CHECK(a.note.find("Fourth point.") == std::string::npos);
}

TEST_CASE("primary converter failure leaves a FAILED ref; both failing drops the item") {
    ResearchConfig cfg;
    std::map<Channel, std::shared_ptr<ChannelClient>> channels;
    channels[Channel::WEB] = std::make_shared<FixtureChannel>(std::vector<RawResult>{
        {"Half", "https://h.example/x"}, {"Gone", "https://g.example/x"}});
    // text route knows neither; markdown route knows only the first
    ResearchPipeline pipe(cfg, std::move(channels), text_conv({}),
                          md_conv({{"https://h.example/x", "# md body"}}));
    ResearchReport rep = pipe.run({{"some topic"}});
    REQUIRE(rep.groups.at("WEB").size() == 1);
    const auto& item = rep.groups.at("WEB")[0];
    CHECK(item.snapshot_refs[0].failed);
    CHECK(item.snapshot_refs[0].ref == "FAILED");
    CHECK(!item.snapshot_refs[1].failed);
    CHECK(!item.note.empty());
    // the dropped item shows up in diagnostics
    bool dropped_noted = false;
    for (const auto& d : rep.diagnostics)
        if (d.failure.find("g.example") != std::string::npos) dropped_noted = true;
    CHECK(dropped_noted);
}

TEST_CASE("fault isolation: one failing channel loses only its own group") {
    auto pipe = three_channel_pipeline(/*fail_academic=*/true);
    ResearchReport rep = pipe.run({{"lattice attacks"}});
    CHECK(rep.groups.at("ACADEMIC").empty());
    CHECK(rep.groups.at("WEB").size() == 2);
    CHECK(rep.groups.at("CODE").size() == 1);
    bool academic_diag = false;
    for (const auto& d : rep.diagnostics)
        if (d.channel == "ACADEMIC" && !d.failure.empty()) academic_diag = true;
    CHECK(academic_diag);
}

TEST_CASE("channel timeout becomes a diagnostic, not a hang") {
    auto pipe = three_channel_pipeline(false, std::chrono::milliseconds(2000));
    auto start = std::chrono::steady_clock::now();
    ResearchReport rep = pipe.run({{"lattice attacks"}});
    auto elapsed = std::chrono::steady_clock::now() - start;
    CHECK(elapsed < std::chrono::seconds(2));
    CHECK(rep.groups.at("ACADEMIC").empty());
    bool timed_out = false;
    for (const auto& d : rep.diagnostics)
        if (d.channel == "ACADEMIC" && d.failure == "timeout") timed_out = true;
    CHECK(timed_out);
}

TEST_CASE("all topics rejected: empty report, no channel traffic") {
    auto pipe = three_channel_pipeline();
    ResearchReport rep = pipe.run({{"x"}});
    CHECK(rep.topics.empty());
    for (const auto& [_, group] : rep.groups) CHECK(group.empty());
}

TEST_CASE("per-channel cap enforced") {
    ResearchConfig cfg;
    std::vector<RawResult> many;
    for (int i = 0; i < 20; ++i)
        many.push_back({"t", "https://m.example/p" + std::to_string(i)});
    std::map<Channel, std::shared_ptr<ChannelClient>> channels;
    channels[Channel::WEB] = std::make_shared<FixtureChannel>(many);
    std::map<std::string, std::string> bodies;
    for (const auto& r : many) bodies[r.origin_url] = "Body.";
    ResearchPipeline pipe(cfg, std::move(channels), text_conv(bodies), md_conv(bodies));
    ResearchQuery q;
    q.topics = {"many results"};
    q.per_channel_cap = 3;
    ResearchReport rep = pipe.run(q);
    CHECK(rep.groups.at("WEB").size() == 3);
}
