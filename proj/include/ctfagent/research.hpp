#pragma once

#include <array>
#include <chrono>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "common.hpp"

namespace ctfagent {

enum class Channel { WEB, ACADEMIC, CODE };

inline const char* to_string(Channel c) {
    switch (c) {
        case Channel::WEB: return "WEB";
        case Channel::ACADEMIC: return "ACADEMIC";
        case Channel::CODE: return "CODE";
    }
    return "WEB";
}

inline constexpr std::array<Channel, 3> kChannelOrder{Channel::WEB, Channel::ACADEMIC,
                                                      Channel::CODE};

struct ResearchQuery {
    std::vector<std::string> topics;
    std::vector<Channel> channels{Channel::WEB, Channel::ACADEMIC, Channel::CODE};
    int per_channel_cap = 5;
};

struct SnapshotRef {
    std::string ref;      // converter-produced reference, or the failure mark
    bool failed = false;

    json to_json() const { return {{"ref", ref}, {"failed", failed}}; }
};

struct SourceItem {
    Channel channel = Channel::WEB;
    std::string title;
    std::string origin_url;
    std::array<SnapshotRef, 2> snapshot_refs;  // primary, fallback — always two
    std::string note;
    std::int64_t retrieved_at_ms = 0;
    std::string text;      // plain-text snapshot body
    std::string markdown;  // markdown snapshot body

    json to_json() const {
        return {{"channel", to_string(channel)},
                {"title", title},
                {"origin_url", origin_url},
                {"snapshot_refs", json::array({snapshot_refs[0].to_json(),
                                               snapshot_refs[1].to_json()})},
                {"note", note},
                {"retrieved_at_ms", retrieved_at_ms}};
    }
};

struct ChannelDiagnostic {
    std::string channel;
    std::int64_t elapsed_ms = 0;
    std::string failure;  // empty when the channel succeeded

    json to_json() const {
        return {{"channel", channel}, {"elapsed_ms", elapsed_ms}, {"failure", failure}};
    }
};

struct ResearchReport {
    std::vector<std::string> topics;
    std::map<std::string, std::vector<SourceItem>> groups;  // channel name -> items
    std::int64_t generated_at_ms = 0;
    std::vector<ChannelDiagnostic> diagnostics;

    json to_json() const {
        json g = json::object();
        for (Channel c : kChannelOrder) {
            json arr = json::array();
            auto it = groups.find(to_string(c));
            if (it != groups.end())
                for (const auto& item : it->second) arr.push_back(item.to_json());
            g[to_string(c)] = std::move(arr);
        }
        json d = json::array();
        for (const auto& diag : diagnostics) d.push_back(diag.to_json());
        return {{"topics", topics},
                {"groups", std::move(g)},
                {"generated_at_ms", generated_at_ms},
                {"diagnostics", std::move(d)}};
    }
};

// ---------------------------------------------------------------------------
// Query sanitization: blocklisted phrases removed; rejected when fewer than
// two meaningful tokens remain.

inline std::optional<std::string> sanitize_query(const std::string& topic,
                                                 const std::vector<std::string>& blocklist) {
    std::string work = topic;
    for (const auto& phrase : blocklist) {
        if (phrase.empty()) continue;
        std::string lw = lowercase(work), lp = lowercase(phrase);
        std::size_t pos;
        while ((pos = lw.find(lp)) != std::string::npos) {
            work.erase(pos, lp.size());
            lw.erase(pos, lp.size());
        }
    }
    auto tokens = split_ws(work);
    if (tokens.size() < 2) return std::nullopt;
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Channel clients. Live adapters and test fixtures implement the same
// search(topic, cap) contract.

struct RawResult {
    std::string title;
    std::string origin_url;
};

class ChannelClient {
public:
    virtual ~ChannelClient() = default;
    virtual std::vector<RawResult> search(const std::string& topic, int cap) = 0;
};

class FixtureChannel : public ChannelClient {
public:
    explicit FixtureChannel(std::vector<RawResult> results,
                            std::chrono::milliseconds delay = {},
                            bool fail = false)
        : results_(std::move(results)), delay_(delay), fail_(fail) {}

    std::vector<RawResult> search(const std::string&, int cap) override {
        if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
        if (fail_) throw std::runtime_error("fixture channel failure");
        std::vector<RawResult> out = results_;
        if (static_cast<int>(out.size()) > cap) out.resize(static_cast<std::size_t>(cap));
        return out;
    }

private:
    std::vector<RawResult> results_;
    std::chrono::milliseconds delay_;
    bool fail_;
};

// Snapshot converters: primary produces the plain-text representation,
// fallback the markdown one. Fixtures map URLs to canned bodies.
class SnapshotConverter {
public:
    virtual ~SnapshotConverter() = default;
    virtual std::optional<std::string> convert(const std::string& url) = 0;
    virtual std::string name() const = 0;
};

class FixtureConverter : public SnapshotConverter {
public:
    FixtureConverter(std::string name, std::map<std::string, std::string> bodies)
        : name_(std::move(name)), bodies_(std::move(bodies)) {}

    std::optional<std::string> convert(const std::string& url) override {
        auto it = bodies_.find(url);
        if (it == bodies_.end()) return std::nullopt;
        return it->second;
    }
    std::string name() const override { return name_; }

private:
    std::string name_;
    std::map<std::string, std::string> bodies_;
};

// Dedup key: scheme + lowercase host + path, fragment and query dropped.
inline std::string normalize_url(const std::string& url) {
    std::string u = url;
    std::size_t frag = u.find('#');
    if (frag != std::string::npos) u.resize(frag);
    std::size_t q = u.find('?');
    if (q != std::string::npos) u.resize(q);
    std::size_t scheme_end = u.find("://");
    if (scheme_end == std::string::npos) return lowercase(u);
    std::size_t host_end = u.find('/', scheme_end + 3);
    std::string scheme_host =
        lowercase(u.substr(0, host_end == std::string::npos ? u.size() : host_end));
    std::string path = host_end == std::string::npos ? "" : u.substr(host_end);
    if (!path.empty() && path.back() == '/') path.pop_back();
    return scheme_host + path;
}

struct ResearchConfig {
    std::chrono::milliseconds channel_timeout{20000};
    int per_channel_cap = 5;
    std::vector<std::string> blocklist;
};

class ResearchPipeline {
public:
    ResearchPipeline(ResearchConfig cfg,
                     std::map<Channel, std::shared_ptr<ChannelClient>> channels,
                     std::shared_ptr<SnapshotConverter> primary,
                     std::shared_ptr<SnapshotConverter> fallback)
        : cfg_(std::move(cfg)),
          channels_(std::move(channels)),
          primary_(std::move(primary)),
          fallback_(std::move(fallback)) {}

    // Concurrent fan-out; one failing channel only loses its own group.
    std::map<Channel, std::vector<RawResult>> fan_out(const ResearchQuery& query,
                                                      std::vector<ChannelDiagnostic>& diags) {
        struct Slot {
            Channel channel;
            std::future<std::vector<RawResult>> fut;
            std::chrono::steady_clock::time_point start;
        };
        std::vector<Slot> slots;
        for (Channel c : query.channels) {
            auto it = channels_.find(c);
            if (it == channels_.end()) {
                diags.push_back({to_string(c), 0, "channel not configured"});
                continue;
            }
            auto client = it->second;
            auto task = std::make_shared<std::packaged_task<std::vector<RawResult>()>>(
                [client, query]() {
                    std::vector<RawResult> all;
                    for (const auto& topic : query.topics) {
                        auto part = client->search(topic, query.per_channel_cap);
                        for (auto& r : part) {
                            if (static_cast<int>(all.size()) >= query.per_channel_cap) break;
                            all.push_back(std::move(r));
                        }
                    }
                    return all;
                });
            Slot s{c, task->get_future(), std::chrono::steady_clock::now()};
            std::thread([task] { (*task)(); }).detach();
            slots.push_back(std::move(s));
        }

        std::map<Channel, std::vector<RawResult>> out;
        for (auto& s : slots) {
            ChannelDiagnostic d{to_string(s.channel), 0, ""};
            auto status = s.fut.wait_for(cfg_.channel_timeout);
            d.elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - s.start)
                               .count();
            if (status != std::future_status::ready) {
                d.failure = "timeout";
            } else {
                try {
                    out[s.channel] = s.fut.get();
                } catch (const std::exception& e) {
                    d.failure = e.what();
                }
            }
            diags.push_back(std::move(d));
        }
        return out;
    }

    // Both representations via their own converter route; primary failure
    // leaves a FAILED-marked ref; both failing drops the item.
    struct Snapshots {
        SnapshotRef primary_ref, fallback_ref;
        std::string text, markdown;
        bool any_live = false;
    };

    Snapshots snapshot(const std::string& origin_url) {
        Snapshots s;
        auto p = primary_ ? primary_->convert(origin_url) : std::nullopt;
        auto f = fallback_ ? fallback_->convert(origin_url) : std::nullopt;
        if (p) {
            s.text = *p;
            s.primary_ref = {primary_->name() + ":" + origin_url, false};
            s.any_live = true;
        } else {
            s.primary_ref = {"FAILED", true};
        }
        if (f) {
            s.markdown = *f;
            s.fallback_ref = {fallback_->name() + ":" + origin_url, false};
            s.any_live = true;
        } else {
            s.fallback_ref = {"FAILED", true};
        }
        return s;
    }

    // Cross-channel dedup (WEB > ACADEMIC > CODE priority) + note filling.
    ResearchReport aggregate(const ResearchQuery& query,
                             const std::map<Channel, std::vector<RawResult>>& raw,
                             std::vector<ChannelDiagnostic> diags) {
        ResearchReport rep;
        rep.topics = query.topics;
        rep.generated_at_ms = unix_millis();
        rep.diagnostics = std::move(diags);
        for (Channel c : kChannelOrder) rep.groups[to_string(c)] = {};

        std::set<std::string> seen;
        for (Channel c : kChannelOrder) {
            auto it = raw.find(c);
            if (it == raw.end()) continue;
            for (const auto& r : it->second) {
                std::string key = normalize_url(r.origin_url);
                if (seen.count(key)) continue;
                auto snaps = snapshot(r.origin_url);
                if (!snaps.any_live) {
                    rep.diagnostics.push_back(
                        {to_string(c), 0, "snapshot failed, dropped: " + r.origin_url});
                    continue;
                }
                seen.insert(key);
                SourceItem item;
                item.channel = c;
                item.title = r.title;
                item.origin_url = r.origin_url;
                item.snapshot_refs = {snaps.primary_ref, snaps.fallback_ref};
                item.text = snaps.text;
                item.markdown = snaps.markdown;
                item.retrieved_at_ms = unix_millis();
                const std::string& body = !snaps.text.empty() ? snaps.text : snaps.markdown;
                std::string summary = first_sentences(body, 3);
                if (summary.empty()) summary = r.title.empty() ? r.origin_url : r.title;
                item.note = summary + " [snapshot: " +
                            (snaps.primary_ref.failed ? snaps.fallback_ref.ref
                                                      : snaps.primary_ref.ref) +
                            "]";
                rep.groups[to_string(c)].push_back(std::move(item));
            }
        }
        return rep;
    }

    ResearchReport run(ResearchQuery query) {
        ResearchQuery sane = query;
        sane.topics.clear();
        for (const auto& t : query.topics)
            if (auto s = sanitize_query(t, cfg_.blocklist)) sane.topics.push_back(*s);
        if (sane.per_channel_cap <= 0) sane.per_channel_cap = cfg_.per_channel_cap;
        std::vector<ChannelDiagnostic> diags;
        auto raw = sane.topics.empty() ? std::map<Channel, std::vector<RawResult>>{}
                                       : fan_out(sane, diags);
        return aggregate(sane, raw, std::move(diags));
    }

private:
    ResearchConfig cfg_;
    std::map<Channel, std::shared_ptr<ChannelClient>> channels_;
    std::shared_ptr<SnapshotConverter> primary_;
    std::shared_ptr<SnapshotConverter> fallback_;
};

}  // namespace ctfagent
