#include "tmad/config.hpp"

#include <fstream>
#include <set>

namespace tmad {

namespace {

std::string join(const std::vector<std::string>& errors) {
    std::string out;
    for (const auto& e : errors) out += (out.empty() ? "" : "; ") + e;
    return out;
}

/// Reads known keys of one JSON object and records every problem instead of throwing.
class Reader {
public:
    Reader(const nlohmann::json& j, std::string prefix, std::vector<std::string>& errors)
        : j_(j), prefix_(std::move(prefix)), errors_(errors) {
        if (!j_.is_object()) errors_.push_back(prefix_ + " must be an object");
    }
    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;

    ~Reader() {
        if (!j_.is_object()) return;
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) errors_.push_back(prefix_ + "." + key + ": unknown key");
        }
    }

    template <class T>
    void get(const std::string& key, T& dst) {
        seen_.insert(key);
        if (!j_.is_object() || !j_.contains(key)) return;
        const auto& v = j_.at(key);
        bool ok = false;
        if constexpr (std::is_same_v<T, bool>) {
            ok = v.is_boolean();
        } else if constexpr (std::is_integral_v<T>) {
            ok = v.is_number_integer() && (std::is_signed_v<T> || v.is_number_unsigned() || v.get<std::int64_t>() >= 0);
        } else if constexpr (std::is_floating_point_v<T>) {
            ok = v.is_number();
        } else {
            ok = v.is_string();
        }
        if (!ok) {
            errors_.push_back(name(key) + ": wrong type");
            return;
        }
        dst = v.get<T>();
    }

    /// Returns the sub-object (or null when absent) and marks the key as known.
    const nlohmann::json& child(const std::string& key) {
        seen_.insert(key);
        static const nlohmann::json empty = nlohmann::json::object();
        return j_.is_object() && j_.contains(key) ? j_.at(key) : empty;
    }

    [[nodiscard]] bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }
    [[nodiscard]] std::string name(const std::string& key) const { return prefix_ + "." + key; }
    void error(const std::string& key, const std::string& message) { errors_.push_back(name(key) + ": " + message); }

private:
    const nlohmann::json& j_;
    std::string prefix_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

template <class Parse, class T>
void get_enum(Reader& r, const std::string& key, T& dst, Parse parse) {
    std::string text;
    const bool present = r.has(key);
    r.get(key, text);
    if (!present || text.empty()) return;
    try {
        dst = parse(text);
    } catch (const std::invalid_argument& e) {
        r.error(key, e.what());
    }
}

void prefixed(std::vector<std::string>& errors, const std::string& prefix, const std::vector<std::string>& found) {
    for (const auto& e : found) errors.push_back(prefix + "." + e);
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::invalid_argument("invalid configuration: " + join(errors)), errors_(std::move(errors)) {}

nlohmann::json to_json(const ModelSpec& s) {
    return {
        {"patch_size", s.patch_size},
        {"pool_size", s.pool_size},
        {"candidates", s.candidates},
        {"coarse_width", s.coarse_widths.base},
        {"psnet_width", s.psnet_widths.base},
        {"critic_width", s.critic_widths.base},
        {"width_cap", s.coarse_widths.cap},
        {"embedding_channels", s.embedding_channels},
        {"mask_mode", to_string(s.mask_mode)},
        {"retrieval", to_string(s.retrieval)},
        {"memory_seed", s.memory_seed},
    };
}

ModelSpec model_spec_from_json(const nlohmann::json& j, std::vector<std::string>& errors, const std::string& prefix) {
    ModelSpec s;
    Reader r(j, prefix, errors);
    r.get("patch_size", s.patch_size);
    r.get("pool_size", s.pool_size);
    r.get("candidates", s.candidates);
    r.get("coarse_width", s.coarse_widths.base);
    r.get("psnet_width", s.psnet_widths.base);
    r.get("critic_width", s.critic_widths.base);
    int cap = s.coarse_widths.cap;
    r.get("width_cap", cap);
    s.coarse_widths.cap = s.psnet_widths.cap = s.critic_widths.cap = cap;
    r.get("embedding_channels", s.embedding_channels);
    get_enum(r, "mask_mode", s.mask_mode, parse_mask_mode);
    get_enum(r, "retrieval", s.retrieval, parse_retrieval_mode);
    r.get("memory_seed", s.memory_seed);
    for (const auto& e : s.validate()) errors.push_back(prefix + "." + e);
    return s;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    std::vector<std::string> errors;
    RunConfig c;
    {
        Reader root(j, "config", errors);
        {
            Reader d(root.child("data"), "data", errors);
            d.get("train_dir", c.train_dir);
            d.get("val_dir", c.val_dir);
            d.get("mask_dir", c.mask_dir);
        }
        root.get("checkpoint", c.checkpoint);
        root.get("deterministic", c.deterministic);
        c.model = model_spec_from_json(root.child("model"), errors, "model");

        {
            Reader t(root.child("train"), "train", errors);
            t.get("images_per_batch", c.train.images_per_batch);
            t.get("patches_per_image", c.train.patches_per_image);
            t.get("lr", c.train.lr);
            t.get("pretrain_epochs", c.train.pretrain_epochs);
            t.get("joint_steps", c.joint_steps);
            t.get("restart_period", c.train.restart_period);
            t.get("min_lr_factor", c.train.min_lr_factor);
            t.get("seed", c.train.seed);
            t.get("image_size", c.train.image_size);
            t.get("memory_draws", c.train.memory_draws);
            t.get("freeze_coarse", c.train.freeze_coarse);
            t.get("flip", c.train.flip);
            t.get("log", c.log);
            t.get("diagnostics_dir", c.diagnostics_dir);
            t.get("checkpoint_every", c.checkpoint_every);
            if (c.joint_steps < 0) t.error("joint_steps", "must be non-negative");
            if (c.checkpoint_every < 0) t.error("checkpoint_every", "must be non-negative");
            prefixed(errors, "train", c.train.validate());
        }

        c.losses = LossConfig::preset(c.model.mask_mode);
        {
            Reader l(root.child("losses"), "losses", errors);
            l.get("lambda_hole", c.losses.hole);
            l.get("lambda_valid", c.losses.valid);
            l.get("lambda_l1", c.losses.l1);
            l.get("lambda_gan_pd", c.losses.gan_pd);
            l.get("lambda_percep", c.losses.percep);
            l.get("lambda_tv", c.losses.tv);
            l.get("lambda_gan_gl", c.losses.gan_gl);
            l.get("gradient_penalty", c.losses.gradient_penalty);
            prefixed(errors, "losses", c.losses.validate());
        }

        {
            auto& m = c.train.mask;
            m.kind = c.model.mask_mode == MaskMode::rectangle ? MaskSpec::Kind::rectangle : MaskSpec::Kind::freeform;
            Reader r(root.child("masks"), "masks", errors);
            get_enum(r, "kind", m.kind, [](const std::string& s) {
                if (s == "rectangle") return MaskSpec::Kind::rectangle;
                if (s == "freeform") return MaskSpec::Kind::freeform;
                throw std::invalid_argument("expected rectangle or freeform");
            });
            r.get("min_height", m.rectangle.min_height);
            r.get("max_height", m.rectangle.max_height);
            r.get("min_width", m.rectangle.min_width);
            r.get("max_width", m.rectangle.max_width);
            r.get("strokes", m.freeform.strokes);
            r.get("max_vertices", m.freeform.max_vertices);
            r.get("min_length", m.freeform.min_length);
            r.get("max_length", m.freeform.max_length);
            r.get("min_stroke_width", m.freeform.min_width);
            r.get("max_stroke_width", m.freeform.max_width);
            r.get("seed", m.seed);
            if (m.rectangle.min_height < 1 || m.rectangle.min_height > m.rectangle.max_height)
                r.error("min_height", "must satisfy 1 <= min_height <= max_height");
            if (m.rectangle.min_width < 1 || m.rectangle.min_width > m.rectangle.max_width)
                r.error("min_width", "must satisfy 1 <= min_width <= max_width");
            if (m.freeform.strokes < 0) r.error("strokes", "must be non-negative");
            if (m.freeform.max_vertices < 1) r.error("max_vertices", "must be at least 1");
            if (m.freeform.min_length < 0 || m.freeform.min_length > m.freeform.max_length)
                r.error("min_length", "must satisfy 0 <= min_length <= max_length");
            if (m.freeform.min_width <= 0 || m.freeform.min_width > m.freeform.max_width)
                r.error("min_stroke_width", "must satisfy 0 < min_stroke_width <= max_stroke_width");
        }

        {
            Reader s(root.child("service"), "service", errors);
            s.get("host", c.service.host);
            s.get("port", c.service.port);
            s.get("workers", c.service.workers);
            s.get("max_side", c.service.max_side);
            if (c.service.port < 0 || c.service.port > 65535) s.error("port", "must lie in [0, 65535]");
            if (c.service.workers < 1) s.error("workers", "must be at least 1");
            if (c.service.max_side < 1) s.error("max_side", "must be at least 1");
        }
    }
    if (!errors.empty()) throw ConfigError(std::move(errors));
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file " + path.string()});
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError({path.string() + ": " + e.what()});
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    const auto& m = train.mask;
    return {
        {"data", {{"train_dir", train_dir}, {"val_dir", val_dir}, {"mask_dir", mask_dir}}},
        {"checkpoint", checkpoint},
        {"deterministic", deterministic},
        {"model", tmad::to_json(model)},
        {"train",
         {{"images_per_batch", train.images_per_batch},
          {"patches_per_image", train.patches_per_image},
          {"lr", train.lr},
          {"pretrain_epochs", train.pretrain_epochs},
          {"joint_steps", joint_steps},
          {"restart_period", train.restart_period},
          {"min_lr_factor", train.min_lr_factor},
          {"seed", train.seed},
          {"image_size", train.image_size},
          {"memory_draws", train.memory_draws},
          {"freeze_coarse", train.freeze_coarse},
          {"flip", train.flip},
          {"log", log},
          {"diagnostics_dir", diagnostics_dir},
          {"checkpoint_every", checkpoint_every}}},
        {"losses",
         {{"lambda_hole", losses.hole},
          {"lambda_valid", losses.valid},
          {"lambda_l1", losses.l1},
          {"lambda_gan_pd", losses.gan_pd},
          {"lambda_percep", losses.percep},
          {"lambda_tv", losses.tv},
          {"lambda_gan_gl", losses.gan_gl},
          {"gradient_penalty", losses.gradient_penalty}}},
        {"masks",
         {{"kind", m.kind == MaskSpec::Kind::rectangle ? "rectangle" : "freeform"},
          {"min_height", m.rectangle.min_height},
          {"max_height", m.rectangle.max_height},
          {"min_width", m.rectangle.min_width},
          {"max_width", m.rectangle.max_width},
          {"strokes", m.freeform.strokes},
          {"max_vertices", m.freeform.max_vertices},
          {"min_length", m.freeform.min_length},
          {"max_length", m.freeform.max_length},
          {"min_stroke_width", m.freeform.min_width},
          {"max_stroke_width", m.freeform.max_width},
          {"seed", m.seed}}},
        {"service",
         {{"host", service.host}, {"port", service.port}, {"workers", service.workers}, {"max_side", service.max_side}}},
    };
}

}  // namespace tmad
