#pragma once

#include <httplib.h>

#include <cstdlib>

#include "provider.hpp"

namespace ctfagent {

// Live chat-completion backend: POST {model, messages, temperature?, seed?}
// to <base_url><path>, bearer token from the model's auth_env variable.
// Expects {content, tool_calls?, usage:{input_tokens, output_tokens}}.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(ModelRegistry registry) : registry_(std::move(registry)) {}

    ChatResponse complete(const ChatRequest& req) override {
        const ModelSpec* spec = registry_.find(req.model_id);
        if (!spec || spec->base_url.empty())
            throw ProviderError(ProviderErrorKind::Transport,
                                "no endpoint configured for " + req.model_id);
        json messages = json::array();
        for (const auto& m : req.messages) messages.push_back(m.to_json());
        json body{{"model", req.model_id}, {"messages", std::move(messages)}};
        if (req.temperature) body["temperature"] = *req.temperature;
        if (req.sampling_seed) body["seed"] = *req.sampling_seed;

        httplib::Client client(spec->base_url);
        client.set_connection_timeout(10);
        client.set_read_timeout(120);
        httplib::Headers headers;
        if (!spec->auth_env.empty()) {
            const char* token = std::getenv(spec->auth_env.c_str());
            if (token) headers.emplace("Authorization", std::string("Bearer ") + token);
        }
        auto result = client.Post(spec->path, headers, body.dump(), "application/json");
        if (!result || result->status < 200 || result->status >= 300)
            throw ProviderError(ProviderErrorKind::Transport,
                                "backend request failed for " + req.model_id);
        try {
            json j = json::parse(result->body);
            ChatResponse resp;
            resp.content = j.value("content", std::string());
            for (const auto& tc : j.value("tool_calls", json::array())) {
                ToolCallPayload p;
                p.name = tc.at("name").get<std::string>();
                if (tc.contains("arguments")) p.arguments = tc.at("arguments");
                resp.tool_calls.push_back(std::move(p));
            }
            if (j.contains("usage")) {
                resp.usage.input_tokens = j.at("usage").value("input_tokens", std::int64_t{0});
                resp.usage.output_tokens =
                    j.at("usage").value("output_tokens", std::int64_t{0});
            }
            resp.model_id = req.model_id;
            return resp;
        } catch (const json::exception& e) {
            throw ProviderError(ProviderErrorKind::Transport,
                                std::string("malformed backend reply: ") + e.what());
        }
    }

private:
    ModelRegistry registry_;
};

}  // namespace ctfagent
