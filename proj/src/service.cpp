#include "tmad/service.hpp"

#include <httplib.h>

#include <cstring>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace tmad {

void FifoGate::acquire() {
    std::unique_lock lock(mu_);
    const auto ticket = next_ticket_++;
    cv_.wait(lock, [&] { return ticket == serving_ && free_ > 0; });
    ++serving_;
    --free_;
    cv_.notify_all();
}

void FifoGate::release() {
    {
        std::lock_guard lock(mu_);
        ++free_;
    }
    cv_.notify_all();
}

namespace {

class GateHold {
public:
    explicit GateHold(FifoGate& g) : g_(g) { g_.acquire(); }
    ~GateHold() { g_.release(); }
    GateHold(const GateHold&) = delete;
    GateHold& operator=(const GateHold&) = delete;

private:
    FifoGate& g_;
};

/// Width and height from a PNG IHDR chunk, without decoding pixels.
std::optional<std::pair<std::uint32_t, std::uint32_t>> png_size(const Bytes& b) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (b.size() < 24 || std::memcmp(b.data(), sig, 8) != 0) return std::nullopt;
    auto be32 = [&](std::size_t i) {
        return (std::uint32_t{b[i]} << 24) | (std::uint32_t{b[i + 1]} << 16) | (std::uint32_t{b[i + 2]} << 8) |
               std::uint32_t{b[i + 3]};
    };
    return std::make_pair(be32(16), be32(20));
}

std::string as_string(const Bytes& b) { return {b.begin(), b.end()}; }
Bytes as_bytes(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
    return {status, "application/json", nlohmann::json{{"code", code}, {"message", message}}.dump()};
}

InferenceService::InferenceService(std::shared_ptr<const Model> model, ServiceConfig config)
    : model_(std::move(model)), config_(std::move(config)), gate_(config_.workers) {
    if (!model_) throw std::invalid_argument("service needs a model");
}

InferenceService::~InferenceService() { stop(); }

void InferenceService::swap_model(std::shared_ptr<const Model> model) {
    if (!model) throw std::invalid_argument("service needs a model");
    std::atomic_store(&model_, std::move(model));
}

std::string InferenceService::next_request_id() {
    std::ostringstream s;
    s << "req-" << std::hex << std::setw(8) << std::setfill('0') << counter_.fetch_add(1) + 1;
    return s.str();
}

HttpReply InferenceService::inpaint(const InpaintRequest& request) {
    const auto model = snapshot();
    const int limit = config_.max_side;
    for (const auto* part : {&request.image, &request.mask}) {
        if (const auto size = png_size(*part); size && (size->first > static_cast<std::uint32_t>(limit) ||
                                                        size->second > static_cast<std::uint32_t>(limit))) {
            return error_reply(413, "too_large",
                               "image exceeds " + std::to_string(limit) + "x" + std::to_string(limit) + " pixels");
        }
    }
    if (request.patch_size && *request.patch_size != model->spec.patch_size) {
        return error_reply(400, "bad_patch_size",
                           "patch_size " + std::to_string(*request.patch_size) + " is not served; the loaded model uses " +
                               std::to_string(model->spec.patch_size));
    }
    Image image;
    Mask mask;
    try {
        image = decode_image(request.image);
    } catch (const ImageIoError& e) {
        return error_reply(400, "bad_image", e.what());
    }
    try {
        mask = decode_mask(request.mask);
    } catch (const ImageIoError& e) {
        return error_reply(400, "bad_mask", e.what());
    }
    if (image.height() > limit || image.width() > limit) {
        return error_reply(413, "too_large",
                           "image exceeds " + std::to_string(limit) + "x" + std::to_string(limit) + " pixels");
    }
    if (image.height() != mask.height() || image.width() != mask.width()) {
        return error_reply(400, "size_mismatch",
                           "image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                               " but mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()));
    }
    if (mask.empty()) return {200, "image/png", as_string(request.image)};
    try {
        GateHold hold(gate_);
        const auto result = tmad::inpaint(*model, image, mask);
        return {200, "image/png", as_string(encode_png(result.output))};
    } catch (const std::exception& e) {
        return error_reply(500, "internal", e.what());
    }
}

int InferenceService::bind() {
    server_ = std::make_unique<httplib::Server>();
    // Connection threads; inference concurrency is bounded separately by the gate.
    const int threads = config_.workers + 2;
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    server_->set_payload_max_length(256ULL << 20);

    server_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("ok", "text/plain");
    });
    server_->Post("/inpaint", [this](const httplib::Request& req, httplib::Response& res) {
        InpaintRequest r;
        r.request_id = req.has_header("X-Request-Id") ? req.get_header_value("X-Request-Id") : next_request_id();
        HttpReply reply;
        if (!req.is_multipart_form_data() || !req.has_file("image") || !req.has_file("mask")) {
            reply = error_reply(400, "bad_request", "expected multipart form fields 'image' and 'mask'");
        } else {
            r.image = as_bytes(req.get_file_value("image").content);
            r.mask = as_bytes(req.get_file_value("mask").content);
            bool ok = true;
            if (req.has_file("patch_size")) {
                const auto text = req.get_file_value("patch_size").content;
                try {
                    std::size_t used = 0;
                    r.patch_size = std::stoi(text, &used);
                    ok = used == text.size();
                } catch (const std::exception&) {
                    ok = false;
                }
                if (!ok) reply = error_reply(400, "bad_patch_size", "patch_size must be an integer");
            }
            if (ok) reply = inpaint(r);
        }
        res.status = reply.status;
        res.set_header("X-Request-Id", r.request_id);
        res.set_content(reply.body, reply.content_type);
    });
    server_->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string message = "unknown error";
        try {
            if (ep) std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            message = e.what();
        } catch (...) {
        }
        const auto reply = error_reply(500, "internal", message);
        res.status = reply.status;
        res.set_content(reply.body, reply.content_type);
    });

    const int port = config_.port == 0 ? server_->bind_to_any_port(config_.host)
                                       : (server_->bind_to_port(config_.host, config_.port) ? config_.port : -1);
    if (port < 0) throw std::runtime_error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
    return port;
}

void InferenceService::serve() {
    if (!server_) bind();
    server_->listen_after_bind();
}

void InferenceService::stop() {
    if (server_) server_->stop();
}

}  // namespace tmad
