#pragma once

#include <httplib.h>

#include <memory>
#include <thread>

#include "harness.hpp"

namespace ctfagent {

// HTTP facade over the scoreboard:
//   POST /submit  {challenge_id, flag, session_id} -> {verdict}
//   GET  /stats   -> scoreboard JSON
class ArbitrationServer {
public:
    explicit ArbitrationServer(ScoreBoard& board) : board_(board) {
        server_.Post("/submit", [this](const httplib::Request& req, httplib::Response& res) {
            try {
                json body = json::parse(req.body);
                Verdict v = board_.submit(body.at("challenge_id").get<std::string>(),
                                          body.at("flag").get<std::string>(),
                                          body.at("session_id").get<std::string>());
                res.set_content(json{{"verdict", to_string(v)}}.dump(), "application/json");
            } catch (const json::exception& e) {
                res.status = 400;
                res.set_content(json{{"error", e.what()}}.dump(), "application/json");
            }
        });
        server_.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(board_.to_json().dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~ArbitrationServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return port_; }

private:
    ScoreBoard& board_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace ctfagent
