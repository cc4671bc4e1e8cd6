#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmad/losses.hpp"
#include "tmad/pipeline.hpp"
#include "tmad/training.hpp"

namespace tmad {

/// Carries every validation message found in one pass.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(std::vector<std::string> errors);
    [[nodiscard]] const std::vector<std::string>& errors() const { return errors_; }

private:
    std::vector<std::string> errors_;
};

struct ServiceConfig {
    std::string host = "0.0.0.0";
    int port = 8080;
    int workers = 2;
    int max_side = 2048;
};

struct RunConfig {
    std::string train_dir;
    std::string val_dir;
    std::string mask_dir;  // optional fixed evaluation masks
    std::string checkpoint;
    std::string log;
    std::string diagnostics_dir;
    int joint_steps = 0;
    int checkpoint_every = 0;
    bool deterministic = false;
    ModelSpec model{};
    TrainConfig train{};
    LossConfig losses{};
    ServiceConfig service{};

    /// Unknown keys and invalid values are all reported together in one ConfigError.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    [[nodiscard]] nlohmann::json to_json() const;
};

nlohmann::json to_json(const ModelSpec& spec);
/// Strict: unknown keys and type errors are appended to `errors` under `prefix`.
ModelSpec model_spec_from_json(const nlohmann::json& j, std::vector<std::string>& errors, const std::string& prefix = "model");

}  // namespace tmad
