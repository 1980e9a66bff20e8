#pragma once

#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "json.hpp"
#include "promptloop/adapters.hpp"

namespace testsupport {

/// Local HTTP server that replays scripted responses per path and records
/// every request it receives.
class FakeServer {
public:
    struct Reply {
        int status = 200;
        std::string body;
        std::string content_type = "application/json";
    };
    struct Seen {
        std::string path;
        std::string authorization;
        nlohmann::json body;
    };
    /// Used when a path has no scripted reply left.
    using Handler = std::function<Reply(const std::string& path, const nlohmann::json& body)>;

    FakeServer() {
        auto handle = [this](const httplib::Request& req, httplib::Response& res) {
            Reply reply;
            {
                std::lock_guard lock(mutex_);
                seen_.push_back({req.path, req.get_header_value("Authorization"),
                                 nlohmann::json::parse(req.body, nullptr, false)});
                auto& queue = script_[req.path];
                if (!queue.empty()) {
                    reply = queue.front();
                    queue.pop_front();
                } else if (fallback_) {
                    reply = fallback_(req.path, seen_.back().body);
                } else {
                    reply = {404, R"({"error":"unscripted"})"};
                }
            }
            res.status = reply.status;
            res.set_content(reply.body, reply.content_type);
        };
        server_.Post(R"(/.*)", handle);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~FakeServer() {
        server_.stop();
        thread_.join();
    }

    FakeServer(const FakeServer&) = delete;
    FakeServer& operator=(const FakeServer&) = delete;

    [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    void script(const std::string& path, std::vector<Reply> replies) {
        std::lock_guard lock(mutex_);
        for (auto& r : replies) script_[path].push_back(std::move(r));
    }

    void fallback(Handler h) {
        std::lock_guard lock(mutex_);
        fallback_ = std::move(h);
    }

    [[nodiscard]] std::vector<Seen> seen() const {
        std::lock_guard lock(mutex_);
        return seen_;
    }

    [[nodiscard]] std::size_t count(const std::string& path) const {
        std::lock_guard lock(mutex_);
        std::size_t n = 0;
        for (const auto& s : seen_) n += s.path == path ? 1 : 0;
        return n;
    }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    mutable std::mutex mutex_;
    std::map<std::string, std::deque<Reply>> script_;
    std::vector<Seen> seen_;
    Handler fallback_;
};

/// Sleeper that records requested delays instead of waiting.
struct RecordingSleeper {
    std::shared_ptr<std::vector<std::chrono::milliseconds>> delays =
        std::make_shared<std::vector<std::chrono::milliseconds>>();
    promptloop::http::Sleeper fn() const {
        auto d = delays;
        return [d](std::chrono::milliseconds ms) { d->push_back(ms); };
    }
};

inline promptloop::http::EndpointConfig endpoint(const std::string& url, std::optional<std::string> key = {}) {
    promptloop::http::EndpointConfig c;
    c.base_url = url;
    c.api_key = std::move(key);
    c.timeout_ms = 5000;
    return c;
}

}  // namespace testsupport
