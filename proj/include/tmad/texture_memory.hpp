#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tmad/image.hpp"
#include "tmad/nn.hpp"

namespace tmad {

enum class MaskMode { rectangle, irregular };

MaskMode parse_mask_mode(const std::string& name);
std::string to_string(MaskMode mode);

inline constexpr int kDefaultPoolSize = 100;
inline constexpr int kEmbeddingChannels = 32;
inline constexpr double kCorrespondenceEps = 1e-8;

/// Pool of valid k x k patches cut from the unmasked region of one image.
struct TextureMemory {
    int patch_size = 0;
    Tensor patches;  // (N_pool, 3, k, k)
    std::vector<Cell> coords;
    std::vector<double> masked_fraction;

    [[nodiscard]] int size() const { return static_cast<int>(coords.size()); }
};

/// Window stride used by each mode: k/2 for rectangles, k/4 for irregular holes.
int pool_stride(int patch_size, MaskMode mode);

/// rectangle: fully valid windows, `pool_size` drawn uniformly under `seed`.
/// irregular: all windows ranked by masked fraction (ties in scan order), first `pool_size` kept.
/// Fewer candidates than `pool_size` are repeated cyclically.
TextureMemory build_memory(const Image& masked_input, const Mask& mask, int patch_size, MaskMode mode,
                           std::uint64_t seed, int pool_size = kDefaultPoolSize);

/// The two retrieval embeddings: 3x3 conv, leaky ReLU, 1x1 conv, over raw patch pixels.
class RetrievalEmbedding : public Module {
public:
    RetrievalEmbedding() = default;
    RetrievalEmbedding(int channels, Rng& rng);

    [[nodiscard]] Var theta(const Var& patches) const;
    [[nodiscard]] Var phi(const Var& patches) const;

    void collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) override;
    [[nodiscard]] std::vector<LayerInfo> layers() const override;

private:
    Conv2d theta1_, theta2_, phi1_, phi2_;
};

/// c(i, j) = <vec theta_i, vec phi_j / max(||vec phi_j||, eps)>, shaped (N_ps, N_pool, 1, 1).
Var correspondence(const Var& theta_features, const Var& phi_features);
/// Row softmax over memory entries.
Var correspondence_softmax(const Var& c);

/// Indices of the `count` largest entries, descending, ties to the lower index.
std::vector<int> top_candidates(std::span<const double> row, int count);

/// Forward value is memory[index[i]] exactly; the gradient is that of S ⊗ T.
/// S is (n, N_pool, 1, 1), memory (N_pool, 3, k, k); one index per row.
Var straight_through_select(const Var& similarity, std::span<const int> index, const Var& memory);

/// Soft weighted sum S ⊗ T, (n, 3, k, k).
Var weighted_sum(const Var& similarity, const Var& memory);

enum class RetrievalMode { top_n, weighted_sum };

RetrievalMode parse_retrieval_mode(const std::string& name);
std::string to_string(RetrievalMode mode);

struct CandidateSet {
    int count = 0;
    std::vector<std::vector<int>> indices;
    std::vector<std::vector<double>> scores;
    /// (n, 3 * N_c, k, k); slot j occupies channels [3j, 3j + 3).
    Var patches;
};

/// top_n: N_c straight-through selections per row. weighted_sum: S ⊗ T in every slot
/// (indices and scores still report the top-N_c ranking).
CandidateSet select_candidates(const Var& similarity, const Var& memory, int count,
                               RetrievalMode mode = RetrievalMode::top_n);

}  // namespace tmad
