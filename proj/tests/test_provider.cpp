#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ctfagent/provider.hpp"

using namespace ctfagent;

static ModelSpec mid_spec() {
    ModelSpec s;
    s.model_id = "mid-default";
    s.tier = Tier::MID;
    s.input_rate = 0.1;
    s.output_rate = 0.4;
    s.context_limit = 128000;
    return s;
}

static ModelSpec top_spec() {
    ModelSpec s;
    s.model_id = "top-reasoner";
    s.tier = Tier::TOP;
    s.input_rate = 2.0;
    s.output_rate = 8.0;
    s.context_limit = 200000;
    return s;
}

TEST_CASE("rate conversion to micro-currency") {
    CHECK(mid_spec().input_rate_micro() == 100000);
    CHECK(mid_spec().output_rate_micro() == 400000);
    CHECK(top_spec().input_rate_micro() == 2000000);
    CHECK(top_spec().output_rate_micro() == 8000000);
}

TEST_CASE("entry cost: round half up on the micro scale") {
    // 100 in @ 0.1/Mtok = 100*100000/1e6 = 10 micro exactly
    CHECK(entry_cost_micro(100, 0, mid_spec()) == 10);
    // 3 in -> 3*100000/1e6 = 0.3 -> rounds to 0
    CHECK(entry_cost_micro(3, 0, mid_spec()) == 0);
    // 5 in -> 0.5 -> half rounds up to 1
    CHECK(entry_cost_micro(5, 0, mid_spec()) == 1);
    // mixed: 7 in + 2 out @ mid = round(0.7) + round(0.8) = 1 + 1
    CHECK(entry_cost_micro(7, 2, mid_spec()) == 2);
    CHECK(entry_cost_micro(0, 0, mid_spec()) == 0);
    // top tier: 1000 in @ 2.0 = 2000 micro, 500 out @ 8.0 = 4000 micro
    CHECK(entry_cost_micro(1000, 500, top_spec()) == 6000);
}

TEST_CASE("word count token approximation") {
    CHECK(word_count("") == 0);
    CHECK(word_count("one") == 1);
    CHECK(word_count("  two  words \n") == 2);
    CHECK(word_count("a\tb\nc d") == 4);
}

TEST_CASE("registry: duplicate rejected, tier resolution is first-registered") {
    ModelRegistry reg;
    reg.register_model(mid_spec());
    reg.register_model(top_spec());
    ModelSpec mid2 = mid_spec();
    mid2.model_id = "mid-second";
    reg.register_model(mid2);
    CHECK_THROWS_AS(reg.register_model(mid_spec()), ConfigError);
    CHECK(reg.resolve_tier(Tier::MID)->model_id == "mid-default");
    CHECK(reg.resolve_tier(Tier::TOP)->model_id == "top-reasoner");
    CHECK(reg.has_both_tiers());
}

static json two_entry_script() {
    return json::parse(R"({
      "s1": [
        {"content": "first reply"},
        {"content": "second reply"}
      ],
      "keyed": [
        {"content": "ordered one"},
        {"content": "triggered", "on": "magic"},
        {"content": "ordered two"}
      ],
      "looping": [
        {"content": "again", "repeat": true}
      ],
      "flaky": [
        {"content": "", "fail": true},
        {"content": "recovered"}
      ]
    })");
}

static ChatRequest req_for(const std::string& label, const std::string& user_text) {
    ChatRequest r;
    r.model_id = "mid-default";
    r.session_label = label;
    r.messages.push_back({Role::User, user_text, {}});
    return r;
}

TEST_CASE("mock backend: ordered playback and exhaustion") {
    auto be = MockBackend::from_json(two_entry_script());
    CHECK(be->complete(req_for("s1", "go")).content == "first reply");
    CHECK(be->complete(req_for("s1", "go")).content == "second reply");
    CHECK_THROWS_AS(be->complete(req_for("s1", "go")), ProviderError);
    try {
        be->complete(req_for("s1", "go"));
        FAIL("expected throw");
    } catch (const ProviderError& e) {
        CHECK(e.kind == ProviderErrorKind::ScriptExhausted);
    }
}

TEST_CASE("mock backend: unknown lane is exhaustion, not a silent default") {
    auto be = MockBackend::from_json(two_entry_script());
    CHECK_THROWS_AS(be->complete(req_for("nope", "x")), ProviderError);
}

TEST_CASE("mock backend: substring-keyed entries win regardless of position") {
    auto be = MockBackend::from_json(two_entry_script());
    // trigger the keyed entry before consuming ordered ones
    CHECK(be->complete(req_for("keyed", "say the magic word")).content == "triggered");
    CHECK(be->complete(req_for("keyed", "anything")).content == "ordered one");
    CHECK(be->complete(req_for("keyed", "anything")).content == "ordered two");
    CHECK_THROWS_AS(be->complete(req_for("keyed", "magic again")), ProviderError);
}

TEST_CASE("mock backend: repeat entries never exhaust") {
    auto be = MockBackend::from_json(two_entry_script());
    for (int i = 0; i < 50; ++i)
        CHECK(be->complete(req_for("looping", "x")).content == "again");
}

TEST_CASE("mock backend: default usage from word counts") {
    auto be = MockBackend::from_json(two_entry_script());
    auto resp = be->complete(req_for("s1", "three input words"));
    CHECK(resp.usage.input_tokens == 3);
    CHECK(resp.usage.output_tokens == 2);  // "first reply"
}

TEST_CASE("mock backend: malformed scripts rejected") {
    CHECK_THROWS_AS(MockBackend::from_json(json::array()), ProviderError);
    CHECK_THROWS_AS(MockBackend::from_json(json::parse(R"({"a": {"not": "array"}})")),
                    ProviderError);
    CHECK_THROWS_AS(MockBackend::from_json(json::parse(R"({"a": [{"no_content": 1}]})")),
                    ProviderError);
}

TEST_CASE("provider: unknown model, empty messages, context overflow") {
    ModelRegistry reg;
    reg.register_model(mid_spec());
    Provider p(std::move(reg), MockBackend::from_json(two_entry_script()));
    ChatRequest r = req_for("s1", "hi");
    r.model_id = "ghost";
    CHECK_THROWS_AS(p.complete(r), ProviderError);

    ChatRequest empty;
    empty.model_id = "mid-default";
    CHECK_THROWS_AS(p.complete(empty), ProviderError);

    ChatRequest big = req_for("s1", "hi");
    std::string huge;
    for (int i = 0; i < 130000; ++i) huge += "w ";
    big.messages[0].content = huge;
    try {
        p.complete(big);
        FAIL("expected overflow");
    } catch (const ProviderError& e) {
        CHECK(e.kind == ProviderErrorKind::ContextOverflow);
    }
}

TEST_CASE("provider: transport failures retried, ledger appended once") {
    ModelRegistry reg;
    reg.register_model(mid_spec());
    RetryPolicy fast{3, std::chrono::milliseconds(1)};
    Provider p(std::move(reg), MockBackend::from_json(two_entry_script()), fast);
    auto resp = p.complete(req_for("flaky", "hello there"));
    CHECK(resp.content == "recovered");
    CHECK(p.attempts_for("mid-default") == 2);
    CHECK(p.ledger().size() == 1);  // only the success billed
}

TEST_CASE("provider: non-transport errors are not retried") {
    ModelRegistry reg;
    reg.register_model(mid_spec());
    RetryPolicy fast{3, std::chrono::milliseconds(1)};
    Provider p(std::move(reg), MockBackend::from_json(two_entry_script()), fast);
    CHECK_THROWS_AS(p.complete(req_for("missing-lane", "x")), ProviderError);
    CHECK(p.attempts_for("mid-default") == 1);
    CHECK(p.ledger().size() == 0);
}

TEST_CASE("ledger: exact additive totals over randomized entries") {
    std::mt19937_64 rng(7);
    CostLedger ledger;
    ModelSpec spec = mid_spec();
    std::int64_t oracle = 0;
    for (int i = 0; i < 500; ++i) {
        std::int64_t in = static_cast<std::int64_t>(rng() % 100000);
        std::int64_t out = static_cast<std::int64_t>(rng() % 50000);
        std::int64_t cost = entry_cost_micro(in, out, spec);
        // independent oracle: decompose n*rate into quotient and remainder
        auto half_up = [](std::int64_t toks, std::int64_t rate) {
            std::int64_t prod = toks * rate;
            std::int64_t q = prod / 1000000, rem = prod % 1000000;
            return q + (rem >= 500000 ? 1 : 0);
        };
        oracle += half_up(in, spec.input_rate_micro()) +
                  half_up(out, spec.output_rate_micro());
        ledger.append({unix_millis(), spec.model_id, in, out, cost});
    }
    CHECK(ledger.running_total_micro() == oracle);
    CHECK(ledger.size() == 500);
}
