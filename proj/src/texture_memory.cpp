#include "tmad/texture_memory.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace tmad {

MaskMode parse_mask_mode(const std::string& name) {
    if (name == "rectangle") return MaskMode::rectangle;
    if (name == "irregular") return MaskMode::irregular;
    throw std::invalid_argument("unknown mask mode '" + name + "' (expected rectangle or irregular)");
}

std::string to_string(MaskMode mode) { return mode == MaskMode::rectangle ? "rectangle" : "irregular"; }

RetrievalMode parse_retrieval_mode(const std::string& name) {
    if (name == "top_n") return RetrievalMode::top_n;
    if (name == "weighted_sum") return RetrievalMode::weighted_sum;
    throw std::invalid_argument("unknown retrieval mode '" + name + "' (expected top_n or weighted_sum)");
}

std::string to_string(RetrievalMode mode) { return mode == RetrievalMode::top_n ? "top_n" : "weighted_sum"; }

int pool_stride(int patch_size, MaskMode mode) {
    return std::max(1, patch_size / (mode == MaskMode::rectangle ? 2 : 4));
}

TextureMemory build_memory(const Image& masked_input, const Mask& mask, int patch_size, MaskMode mode,
                           std::uint64_t seed, int pool_size) {
    require_same_size(masked_input, mask);
    const int h = mask.height();
    const int w = mask.width();
    const int k = patch_size;
    if (k <= 0 || k > std::min(h, w)) {
        throw std::invalid_argument("memory patch size " + std::to_string(k) + " exceeds image " + std::to_string(h) +
                                    "x" + std::to_string(w));
    }
    if (pool_size <= 0) throw std::invalid_argument("memory pool size must be positive");

    // Summed-area table of hole pixels.
    std::vector<long> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0);
    auto s = [&](int y, int x) -> long& { return sat[static_cast<std::size_t>(y) * (w + 1) + x]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) s(y + 1, x + 1) = s(y, x + 1) + s(y + 1, x) - s(y, x) + (mask.hole(y, x) ? 1 : 0);

    struct Window {
        Cell cell;
        long holes;
    };
    std::vector<Window> windows;
    const int stride = pool_stride(k, mode);
    for (int y = 0; y + k <= h; y += stride)
        for (int x = 0; x + k <= w; x += stride) {
            const long holes = s(y + k, x + k) - s(y, x + k) - s(y + k, x) + s(y, x);
            windows.push_back({{y, x}, holes});
        }

    std::vector<Window> chosen;
    if (mode == MaskMode::rectangle) {
        std::vector<Window> valid;
        std::copy_if(windows.begin(), windows.end(), std::back_inserter(valid), [](const Window& wd) { return wd.holes == 0; });
        if (valid.empty()) throw std::runtime_error("no fully valid window of size " + std::to_string(k) + " for the texture memory");
        if (static_cast<int>(valid.size()) > pool_size) {
            Rng rng(seed);
            std::vector<std::size_t> order(valid.size());
            std::iota(order.begin(), order.end(), 0);
            for (int i = 0; i < pool_size; ++i) {
                std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), order.size() - 1);
                std::swap(order[static_cast<std::size_t>(i)], order[pick(rng)]);
            }
            order.resize(static_cast<std::size_t>(pool_size));
            std::sort(order.begin(), order.end());
            for (auto i : order) chosen.push_back(valid[i]);
        } else {
            chosen = std::move(valid);
        }
    } else {
        std::stable_sort(windows.begin(), windows.end(), [](const Window& a, const Window& b) { return a.holes < b.holes; });
        windows.resize(std::min(windows.size(), static_cast<std::size_t>(pool_size)));
        chosen = std::move(windows);
    }

    TextureMemory mem;
    mem.patch_size = k;
    mem.patches = Tensor(Shape{pool_size, 3, k, k});
    const double area = static_cast<double>(k) * k;
    for (int i = 0; i < pool_size; ++i) {
        const auto& wd = chosen[static_cast<std::size_t>(i) % chosen.size()];
        mem.coords.push_back(wd.cell);
        mem.masked_fraction.push_back(static_cast<double>(wd.holes) / area);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < k; ++y)
                for (int x = 0; x < k; ++x) mem.patches.at(i, c, y, x) = masked_input.at(c, wd.cell.row + y, wd.cell.col + x);
    }
    return mem;
}

RetrievalEmbedding::RetrievalEmbedding(int channels, Rng& rng)
    : theta1_(ConvSpec{.in = 3, .out = channels, .kernel = 3}, rng),
      theta2_(ConvSpec{.in = channels, .out = channels, .kernel = 1}, rng),
      phi1_(ConvSpec{.in = 3, .out = channels, .kernel = 3}, rng),
      phi2_(ConvSpec{.in = channels, .out = channels, .kernel = 1}, rng) {}

Var RetrievalEmbedding::theta(const Var& patches) const {
    return theta2_.forward(leaky_relu(theta1_.forward(patches), kLeakySlope));
}

Var RetrievalEmbedding::phi(const Var& patches) const {
    return phi2_.forward(leaky_relu(phi1_.forward(patches), kLeakySlope));
}

void RetrievalEmbedding::collect_parameters(const std::string& prefix, std::vector<NamedParam>& out) {
    theta1_.collect(prefix + "theta.conv1", out);
    theta2_.collect(prefix + "theta.conv2", out);
    phi1_.collect(prefix + "phi.conv1", out);
    phi2_.collect(prefix + "phi.conv2", out);
}

std::vector<LayerInfo> RetrievalEmbedding::layers() const {
    return {theta1_.info("theta.conv1"), theta2_.info("theta.conv2"), phi1_.info("phi.conv1"), phi2_.info("phi.conv2")};
}

Var correspondence(const Var& theta_features, const Var& phi_features) {
    return matmul_nt(theta_features, l2_normalize_rows(phi_features, kCorrespondenceEps));
}

Var correspondence_softmax(const Var& c) { return softmax_channels(c); }

std::vector<int> top_candidates(std::span<const double> row, int count) {
    if (count < 1 || count > static_cast<int>(row.size())) {
        throw std::invalid_argument("candidate count " + std::to_string(count) + " outside [1, " +
                                    std::to_string(row.size()) + "]");
    }
    std::vector<int> idx(row.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), [&](int a, int b) {
        return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)] ||
               (row[static_cast<std::size_t>(a)] == row[static_cast<std::size_t>(b)] && a < b);
    });
    idx.resize(static_cast<std::size_t>(count));
    return idx;
}

Var straight_through_select(const Var& similarity, std::span<const int> index, const Var& memory) {
    const auto& s = similarity.shape();
    if (s.h != 1 || s.w != 1 || s.c != memory.shape().n) {
        throw ShapeError("similarity " + to_string(s) + " does not match memory " + to_string(memory.shape()));
    }
    if (static_cast<int>(index.size()) != s.n) throw ShapeError("one index per similarity row required");
    Tensor onehot(s);
    for (int i = 0; i < s.n; ++i) {
        if (index[i] < 0 || index[i] >= s.c) throw std::out_of_range("candidate index out of range");
        onehot.at(i, index[i], 0, 0) = 1.0;
    }
    const Var hard = sub(constant(std::move(onehot)), detach(similarity));
    return matmul(add(hard, similarity), memory);
}

Var weighted_sum(const Var& similarity, const Var& memory) { return matmul(similarity, memory); }

CandidateSet select_candidates(const Var& similarity, const Var& memory, int count, RetrievalMode mode) {
    const auto& s = similarity.shape();
    const int n = s.n;
    const int pool = s.c;
    const auto& ms = memory.shape();
    CandidateSet out;
    out.count = count;
    const auto& sv = similarity.value();
    std::vector<int> flat;
    for (int i = 0; i < n; ++i) {
        std::span<const double> row(sv.data() + static_cast<std::size_t>(i) * pool, static_cast<std::size_t>(pool));
        auto idx = top_candidates(row, count);
        std::vector<double> sc;
        for (int j : idx) sc.push_back(row[static_cast<std::size_t>(j)]);
        flat.insert(flat.end(), idx.begin(), idx.end());
        out.indices.push_back(std::move(idx));
        out.scores.push_back(std::move(sc));
    }

    if (mode == RetrievalMode::weighted_sum) {
        const Var soft = weighted_sum(similarity, memory);
        std::vector<Var> slots(static_cast<std::size_t>(count), soft);
        out.patches = concat(slots, 1);
        return out;
    }

    // Row i * count + j repeats similarity row i so every slot gets its own indicator.
    auto rep = std::make_shared<std::vector<std::int64_t>>();
    rep->reserve(static_cast<std::size_t>(n) * count * pool);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < count; ++j)
            for (int p = 0; p < pool; ++p) rep->push_back(static_cast<std::int64_t>(i) * pool + p);
    const Var repeated = gather(similarity, Shape{n * count, pool, 1, 1}, rep);
    const Var picked = straight_through_select(repeated, flat, memory);
    out.patches = reshape(picked, Shape{n, 3 * count, ms.h, ms.w});
    return out;
}

}  // namespace tmad
