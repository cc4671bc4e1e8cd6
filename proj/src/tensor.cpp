#include "tmad/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>


namespace tmad {

std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << "(" << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ")";
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.numel()) {
        throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                         to_string(shape_));
    }
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape s) const {
    if (s.numel() != data_.size()) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    }
    Tensor t;
    t.shape_ = s;
    t.data_ = data_;
    return t;
}

Tensor Tensor::slice(int begin, int count) const {
    if (begin < 0 || count < 0 || begin + count > shape_.n) {
        throw ShapeError("slice out of range for " + to_string(shape_));
    }
    Shape s = shape_;
    s.n = count;
    const auto per = shape_.sample_size();
    std::vector<double> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * per),
                          data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * per));
    return Tensor(s, std::move(v));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
    if (o.shape_ != shape_) throw ShapeError("+= shape mismatch " + to_string(shape_) + " vs " + to_string(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor concat_batch(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_batch of nothing");
    Shape s = parts.front().shape();
    s.n = 0;
    for (const auto& p : parts) {
        if (p.shape().c != s.c || p.shape().h != s.h || p.shape().w != s.w) {
            throw ShapeError("concat_batch sample shape mismatch");
        }
        s.n += p.shape().n;
    }
    std::vector<double> v;
    v.reserve(s.numel());
    for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
    return Tensor(s, std::move(v));
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    if (m == 0 || n == 0) return;
    using Stride = Eigen::OuterStride<>;
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using ColMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
    Eigen::Map<RowMajor, 0, Stride> out(c, m, n, Stride(ldc));
    if (beta == 0.0) {
        out.setZero();
    } else if (beta != 1.0) {
        out *= beta;
    }
    if (k == 0) return;
    // A transposed row-major buffer is the same memory read column-major.
    auto run = [&](const auto& lhs) {
        if (trans_b) {
            out.noalias() += alpha * (lhs * Eigen::Map<const ColMajor, 0, Stride>(b, k, n, Stride(ldb)));
        } else {
            out.noalias() += alpha * (lhs * Eigen::Map<const RowMajor, 0, Stride>(b, k, n, Stride(ldb)));
        }
    };
    if (trans_a) {
        run(Eigen::Map<const ColMajor, 0, Stride>(a, m, k, Stride(lda)));
    } else {
        run(Eigen::Map<const RowMajor, 0, Stride>(a, m, k, Stride(lda)));
    }
}

void set_single_threaded_blas() { Eigen::setNbThreads(1); }

}  // namespace tmad
