#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tmad {

/// 4-d NCHW shape. Matrices are stored as (rows, cols, 1, 1); scalars as (1, 1, 1, 1).
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    [[nodiscard]] std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    /// Elements per sample (everything but n).
    [[nodiscard]] std::size_t sample_size() const {
        return static_cast<std::size_t>(c) * h * w;
    }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense double tensor with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    [[nodiscard]] const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    [[nodiscard]] std::span<const double> values() const { return data_; }
    [[nodiscard]] const std::vector<double>& vector() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    [[nodiscard]] double at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

    [[nodiscard]] double item() const;

    /// Same data, new shape of equal element count.
    [[nodiscard]] Tensor reshaped(Shape s) const;
    /// Copy of samples [begin, begin + count).
    [[nodiscard]] Tensor slice(int begin, int count) const;

    void fill(double v);
    Tensor& operator+=(const Tensor& o);
    Tensor& operator*=(double s);

    [[nodiscard]] bool all_finite() const;
    [[nodiscard]] double sum() const;
    [[nodiscard]] double max_abs() const;

private:
    [[nodiscard]] std::size_t offset(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    Shape shape_{};
    std::vector<double> data_;
};

[[nodiscard]] double max_abs_diff(const Tensor& a, const Tensor& b);

/// Stack samples along n. All parts must share c, h, w.
[[nodiscard]] Tensor concat_batch(std::span<const Tensor> parts);

/// Row-major dense GEMM: C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

/// Pins the matrix backend to a single thread (deterministic execution mode).
void set_single_threaded_blas();

}  // namespace tmad
