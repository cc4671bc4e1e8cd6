#include <gtest/gtest.h>

#include <array>

#include "test_util.hpp"

namespace tmad {
namespace {

using testing::random_tensor;

// Reference product on explicitly transposed row-major buffers.
std::vector<double> naive_gemm(bool ta, bool tb, int m, int n, int k, double alpha, const std::vector<double>& a,
                               const std::vector<double>& b, double beta, std::vector<double> c) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) {
                const double av = ta ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
                const double bv = tb ? b[static_cast<std::size_t>(j) * k + p] : b[static_cast<std::size_t>(p) * n + j];
                s += av * bv;
            }
            auto& out = c[static_cast<std::size_t>(i) * n + j];
            out = alpha * s + beta * out;
        }
    }
    return c;
}

TEST(Gemm, MatchesNaiveProductInEveryTransposeMode) {
    const std::array<std::array<int, 3>, 6> sizes{{{1, 1, 1}, {3, 5, 7}, {43, 370, 115}, {32, 288, 64}, {17, 1, 33}, {64, 9, 200}}};
    std::uint64_t seed = 1;
    for (const auto& [m, n, k] : sizes) {
        for (int mode = 0; mode < 4; ++mode) {
            const bool ta = mode & 1;
            const bool tb = mode & 2;
            const auto a = random_tensor({m * k, 1, 1, 1}, seed++).vector();
            const auto b = random_tensor({k * n, 1, 1, 1}, seed++).vector();
            const auto c0 = random_tensor({m * n, 1, 1, 1}, seed++).vector();
            for (const double beta : {0.0, 1.0, 0.5}) {
                const auto expected = naive_gemm(ta, tb, m, n, k, 1.5, a, b, beta, c0);
                auto c = c0;
                gemm(ta, tb, m, n, k, 1.5, a.data(), ta ? m : k, b.data(), tb ? k : n, beta, c.data(), n);
                double worst = 0.0;
                for (std::size_t i = 0; i < c.size(); ++i) worst = std::max(worst, std::abs(c[i] - expected[i]));
                EXPECT_LT(worst, 1e-10) << m << "x" << n << "x" << k << " mode " << mode << " beta " << beta;
            }
        }
    }
}

TEST(Gemm, ZeroInnerDimensionOnlyScales) {
    std::vector<double> c{1.0, 2.0, 3.0, 4.0};
    gemm(false, false, 2, 2, 0, 1.0, nullptr, 1, nullptr, 2, 0.5, c.data(), 2);
    EXPECT_EQ(c, (std::vector<double>{0.5, 1.0, 1.5, 2.0}));
}

TEST(Tensor, ShapeErrors) {
    EXPECT_THROW(Tensor(Shape{1, 2, 2, 2}, std::vector<double>(7)), ShapeError);
    Tensor t({2, 1, 2, 2}, 1.0);
    EXPECT_THROW((void)t.reshaped({3, 1, 1, 1}), ShapeError);
    EXPECT_THROW((void)t.slice(1, 2), ShapeError);
    EXPECT_THROW((void)t.item(), ShapeError);
    EXPECT_EQ(t.slice(1, 1).shape(), (Shape{1, 1, 2, 2}));
}

TEST(Autograd, BackwardAgreesWithGradients) {
    const Var a = Var::parameter(random_tensor({2, 3, 1, 1}, 4));
    const Var b = Var::parameter(random_tensor({3, 2, 1, 1}, 5));
    const Var loss = sum(square(matmul(a, b))) + sum(scale(a, 2.0) * a);
    const std::vector<Var> wrt{a, b};
    const auto g = gradients(loss, wrt);
    backward(loss);
    EXPECT_LT(max_abs_diff(a.grad(), g[0]), 1e-12);
    EXPECT_LT(max_abs_diff(b.grad(), g[1]), 1e-12);
}

TEST(Autograd, GradientsOfUnreachableInputAreZero) {
    const Var a = Var::parameter(random_tensor({1, 2, 1, 1}, 6));
    const Var b = Var::parameter(random_tensor({1, 2, 1, 1}, 7));
    const std::vector<Var> wrt{b};
    const auto g = gradients(sum(a), wrt);
    EXPECT_EQ(g[0].max_abs(), 0.0);
}

TEST(Autograd, BackwardAccumulatesAcrossCalls) {
    const Var a = Var::parameter(Tensor({1, 1, 1, 1}, 2.0));
    backward(square(a));
    backward(square(a));
    EXPECT_DOUBLE_EQ(a.grad()[0], 8.0);
    const_cast<Var&>(a).zero_grad();
    EXPECT_FALSE(a.has_grad());
}

}  // namespace
}  // namespace tmad
