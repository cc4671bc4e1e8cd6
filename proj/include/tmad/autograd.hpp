#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tmad/tensor.hpp"

namespace tmad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Receives the gradient of the op output and one accumulator per parent
/// (nullptr for parents that do not require a gradient).
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

struct Node {
    Tensor value;
    Tensor grad;  // accumulated only on leaves by backward()
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backward;
};

/// Handle to a node of the reverse-mode tape. Copies alias the same node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    static Var parameter(Tensor value) { return Var(std::move(value), true); }

    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    [[nodiscard]] const Tensor& value() const { return node_->value; }
    /// Direct write access; only for optimizers and parameter loading.
    Tensor& mutable_value() { return node_->value; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool r) { node_->requires_grad = r; }

    [[nodiscard]] const Tensor& grad() const { return node_->grad; }
    [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad = Tensor(); }

    [[nodiscard]] const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }

/// Records an op on the tape. In no-grad mode, or when no parent requires a
/// gradient, the result is a plain constant.
Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward);

/// Accumulates d(root)/d(leaf) into every reachable leaf that requires a gradient.
/// `root` must be a scalar.
void backward(const Var& root);

/// Returns d(root . seed)/d(x) for each requested var without touching leaf
/// accumulators. A zero tensor is returned for unreachable inputs.
std::vector<Tensor> gradients(const Var& root, std::span<const Var> wrt, const Tensor* seed = nullptr);

bool grad_enabled();

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace tmad
