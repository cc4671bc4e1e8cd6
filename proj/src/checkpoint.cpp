#include "tmad/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "tmad/config.hpp"

namespace tmad {

namespace {

constexpr char kMagic[8] = {'T', 'M', 'A', 'D', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

nlohmann::json blocks_json(const BlockStack& b) {
    return {b.input_conv, b.down_blocks, b.res_blocks, b.up_blocks, b.out_conv};
}

struct Entry {
    std::string name;
    const Tensor* tensor;
};

void add_optimizer(std::vector<Entry>& entries, nlohmann::json& header, const std::string& key, const AdamState& s) {
    header[key] = {{"t", s.t}, {"names", s.names}};
    for (std::size_t i = 0; i < s.names.size(); ++i) {
        entries.push_back({"optimizer." + key + ".m." + s.names[i], &s.m[i]});
        entries.push_back({"optimizer." + key + ".v." + s.names[i], &s.v[i]});
    }
}

struct Parsed {
    nlohmann::json header;
    std::string payload;
};

Parsed read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    constexpr std::size_t fixed = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(path.string() + " is not a checkpoint file");
    }
    std::uint32_t version;
    std::uint64_t header_len;
    std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
    std::memcpy(&header_len, bytes.data() + sizeof(kMagic) + sizeof(version), sizeof(header_len));
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    if (header_len > bytes.size() - fixed) throw CheckpointError("checkpoint header is truncated");
    Parsed p;
    try {
        p.header = nlohmann::json::parse(bytes.substr(fixed, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    p.payload = bytes.substr(fixed + header_len);
    try {
        const auto expected = p.header.at("payload_bytes").get<std::uint64_t>();
        if (p.payload.size() != expected) throw CheckpointError("checkpoint payload is truncated");
        if (fnv1a(p.payload) != p.header.at("checksum").get<std::uint64_t>()) {
            throw CheckpointError("checkpoint checksum mismatch (file is corrupt)");
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    return p;
}

ModelSpec spec_of(const nlohmann::json& header) {
    std::vector<std::string> errors;
    auto spec = model_spec_from_json(header.at("model"), errors, "model");
    if (!errors.empty()) throw CheckpointError("checkpoint model spec is invalid: " + errors.front());
    return spec;
}

void describe_mismatch(const ModelSpec& stored, const ModelSpec& wanted) {
    const auto a = to_json(stored);
    const auto b = to_json(wanted);
    std::string diff;
    for (const auto& [key, value] : a.items()) {
        if (b.at(key) != value) diff += (diff.empty() ? "" : ", ") + key + " " + value.dump() + " vs " + b.at(key).dump();
    }
    throw CheckpointError("checkpoint spec does not match the model: " + (diff.empty() ? "width groups differ" : diff));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, const TrainState* state) {
    nlohmann::json header;
    header["model"] = to_json(model.spec);
    header["blocks"] = {{"coarse", blocks_json(model.coarse.blocks())},
                        {"psnet_backbone", blocks_json(model.psnet.backbone_blocks())},
                        {"psnet_texture", blocks_json(model.psnet.texture_blocks())}};
    header["value_range"] = {-1.0, 1.0};

    std::vector<Entry> entries;
    const auto params = model.parameters();
    for (const auto& p : params) entries.push_back({p.name, &p.var.value()});
    const auto buffers = model.buffers();
    for (const auto& b : buffers) entries.push_back({b.name, b.tensor});
    if (state) {
        std::ostringstream rng;
        rng << state->rng;
        header["train_state"] = {{"step", state->step}, {"rng", rng.str()}};
        add_optimizer(entries, header["train_state"], "coarse", state->coarse);
        add_optimizer(entries, header["train_state"], "generator", state->generator);
        add_optimizer(entries, header["train_state"], "critic", state->critic);
    }

    std::string payload;
    auto& arrays = header["arrays"] = nlohmann::json::array();
    for (const auto& e : entries) {
        const auto& s = e.tensor->shape();
        arrays.push_back({{"name", e.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", payload.size()}});
        payload.append(reinterpret_cast<const char*>(e.tensor->data()), e.tensor->size() * sizeof(double));
    }
    header["payload_bytes"] = payload.size();
    header["checksum"] = fnv1a(payload);

    const std::string text = header.dump();
    const std::uint64_t header_len = text.size();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("write failed for " + path.string());
}

std::optional<TrainState> load_checkpoint(const std::filesystem::path& path, Model& model) {
    const auto raw = read_raw(path);
    const auto& h = raw.header;
    try {
        const ModelSpec stored = spec_of(h);
        if (!(stored == model.spec)) describe_mismatch(stored, model.spec);

        std::map<std::string, Tensor> arrays;
        for (const auto& a : h.at("arrays")) {
            const auto dims = a.at("shape").get<std::vector<int>>();
            if (dims.size() != 4) throw CheckpointError("array shape must have 4 dimensions");
            const Shape s{dims[0], dims[1], dims[2], dims[3]};
            const auto offset = a.at("offset").get<std::size_t>();
            const std::size_t bytes = s.numel() * sizeof(double);
            if (offset + bytes > raw.payload.size()) throw CheckpointError("array outside payload");
            Tensor t(s);
            std::memcpy(t.data(), raw.payload.data() + offset, bytes);
            arrays.emplace(a.at("name").get<std::string>(), std::move(t));
        }
        auto take = [&](const std::string& name, const Shape& shape) -> Tensor& {
            auto it = arrays.find(name);
            if (it == arrays.end()) throw CheckpointError("checkpoint lacks array " + name);
            if (it->second.shape() != shape) {
                throw CheckpointError("array " + name + " has shape " + to_string(it->second.shape()) + ", expected " +
                                      to_string(shape));
            }
            return it->second;
        };
        // Validate everything before mutating the model.
        auto params = model.parameters();
        auto buffers = model.buffers();
        for (auto& p : params) take(p.name, p.var.shape());
        for (auto& b : buffers) take(b.name, b.tensor->shape());

        std::optional<TrainState> state;
        if (h.contains("train_state")) {
            const auto& ts = h.at("train_state");
            TrainState st;
            st.step = ts.at("step").get<std::int64_t>();
            std::istringstream rng(ts.at("rng").get<std::string>());
            rng >> st.rng;
            if (!rng) throw CheckpointError("corrupt rng state");
            for (const auto& [key, dst] : {std::pair<const char*, AdamState*>{"coarse", &st.coarse},
                                           std::pair<const char*, AdamState*>{"generator", &st.generator},
                                           std::pair<const char*, AdamState*>{"critic", &st.critic}}) {
                const auto& o = ts.at(key);
                dst->t = o.at("t").get<std::int64_t>();
                dst->names = o.at("names").get<std::vector<std::string>>();
                for (const auto& name : dst->names) {
                    const auto m = arrays.find("optimizer." + std::string(key) + ".m." + name);
                    const auto v = arrays.find("optimizer." + std::string(key) + ".v." + name);
                    if (m == arrays.end() || v == arrays.end()) throw CheckpointError("missing optimizer moments for " + name);
                    dst->m.push_back(m->second);
                    dst->v.push_back(v->second);
                }
            }
            state = std::move(st);
        }

        for (auto& p : params) p.var.mutable_value() = take(p.name, p.var.shape());
        for (auto& b : buffers) *b.tensor = take(b.name, b.tensor->shape());
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
}

ModelSpec read_checkpoint_spec(const std::filesystem::path& path) {
    const auto raw = read_raw(path);
    try {
        return spec_of(raw.header);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
    auto model = std::make_unique<Model>(read_checkpoint_spec(path), 0);
    load_checkpoint(path, *model);
    return model;
}

}  // namespace tmad
