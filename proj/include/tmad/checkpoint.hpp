#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>

#include "tmad/pipeline.hpp"
#include "tmad/training.hpp"

namespace tmad {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "TMADCKPT", u32 version, u64 header length, JSON header, raw doubles.
/// The header records the model spec, block stacks, value range, array table,
/// payload checksum and (optionally) the training state scalars.
void save_checkpoint(const std::filesystem::path& path, Model& model, const TrainState* state = nullptr);

/// Loads into an existing model; refuses on spec mismatch, corruption or a
/// foreign version. Returns the training state when one was saved.
std::optional<TrainState> load_checkpoint(const std::filesystem::path& path, Model& model);

/// Spec stored in a checkpoint header.
ModelSpec read_checkpoint_spec(const std::filesystem::path& path);

/// Builds a model from the checkpoint's own spec and loads it.
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

}  // namespace tmad
