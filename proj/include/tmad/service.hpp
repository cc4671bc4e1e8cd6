#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "tmad/config.hpp"
#include "tmad/image_io.hpp"
#include "tmad/pipeline.hpp"

namespace httplib {
class Server;
}

namespace tmad {

struct InpaintRequest {
    Bytes image;
    Bytes mask;
    std::optional<int> patch_size;
    std::string request_id;
};

struct HttpReply {
    int status = 200;
    std::string content_type;
    std::string body;
};

/// Admits at most `capacity` holders at once; waiters are served in arrival order.
class FifoGate {
public:
    explicit FifoGate(int capacity) : free_(capacity) {}
    void acquire();
    void release();

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::uint64_t next_ticket_ = 0;
    std::uint64_t serving_ = 0;
    int free_;
};

/// Inference over an immutable model snapshot. Handlers never touch parameters;
/// `swap_model` replaces the whole snapshot atomically.
class InferenceService {
public:
    InferenceService(std::shared_ptr<const Model> model, ServiceConfig config);
    ~InferenceService();

    void swap_model(std::shared_ptr<const Model> model);
    [[nodiscard]] std::shared_ptr<const Model> snapshot() const { return std::atomic_load(&model_); }

    /// Transport-free request handling (also used by the HTTP route).
    HttpReply inpaint(const InpaintRequest& request);

    /// Binds to config.port (0 picks a free port) and returns the bound port.
    int bind();
    /// Blocks until stop().
    void serve();
    void stop();

private:
    std::shared_ptr<const Model> model_;
    ServiceConfig config_;
    FifoGate gate_;
    std::unique_ptr<httplib::Server> server_;
    std::atomic<std::uint64_t> counter_{0};

    std::string next_request_id();
};

HttpReply error_reply(int status, const std::string& code, const std::string& message);

}  // namespace tmad
