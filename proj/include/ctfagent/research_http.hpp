#pragma once

#include <httplib.h>

#include "research.hpp"

namespace ctfagent {

// Generic HTTP search adapter: GET <base_url><path>?q=<topic>&cap=<cap>,
// optional bearer token from an environment variable, expects a JSON array of
// {title, url} objects. The web/academic/code services are all configured as
// instances of this adapter.
class HttpChannel : public ChannelClient {
public:
    HttpChannel(std::string base_url, std::string path, std::string auth_env = "")
        : base_url_(std::move(base_url)), path_(std::move(path)),
          auth_env_(std::move(auth_env)) {}

    std::vector<RawResult> search(const std::string& topic, int cap) override {
        httplib::Client client(base_url_);
        client.set_connection_timeout(10);
        httplib::Headers headers;
        if (!auth_env_.empty()) {
            const char* token = std::getenv(auth_env_.c_str());
            if (token) headers.emplace("Authorization", std::string("Bearer ") + token);
        }
        httplib::Params params{{"q", topic}, {"cap", std::to_string(cap)}};
        auto res = client.Get(path_, params, headers);
        if (!res || res->status != 200)
            throw std::runtime_error("search request failed against " + base_url_);
        std::vector<RawResult> out;
        json j = json::parse(res->body);
        for (const auto& item : j) {
            if (static_cast<int>(out.size()) >= cap) break;
            out.push_back({item.value("title", std::string()),
                           item.at("url").get<std::string>()});
        }
        return out;
    }

private:
    std::string base_url_;
    std::string path_;
    std::string auth_env_;
};

// Snapshot converter backed by a reader-style HTTP service: GET
// <base_url>/<original url>, body is the converted representation.
class HttpConverter : public SnapshotConverter {
public:
    HttpConverter(std::string name, std::string base_url)
        : name_(std::move(name)), base_url_(std::move(base_url)) {}

    std::optional<std::string> convert(const std::string& url) override {
        httplib::Client client(base_url_);
        client.set_connection_timeout(10);
        auto res = client.Get("/" + url);
        if (!res || res->status != 200) return std::nullopt;
        return res->body;
    }

    std::string name() const override { return name_; }

private:
    std::string name_;
    std::string base_url_;
};

}  // namespace ctfagent
