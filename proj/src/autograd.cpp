#include "tmad/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

namespace tmad {

namespace {

thread_local bool g_grad_enabled = true;

std::vector<Node*> topological_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

// Runs the reverse sweep. `keep` nodes retain their gradient in the returned map.
std::unordered_map<Node*, Tensor> run_backward(Node* root, Tensor seed, const std::unordered_set<Node*>& keep) {
    std::unordered_map<Node*, Tensor> grads;
    if (!root->requires_grad) return grads;
    grads.emplace(root, std::move(seed));
    const auto order = topological_order(root);
    std::vector<Tensor*> parent_grads;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        auto found = grads.find(node);
        if (found == grads.end()) continue;
        if (node->backward) {
            parent_grads.assign(node->parents.size(), nullptr);
            for (std::size_t i = 0; i < node->parents.size(); ++i) {
                Node* p = node->parents[i].get();
                if (!p->requires_grad) continue;
                auto [slot, inserted] = grads.try_emplace(p);
                if (inserted) slot->second = Tensor(p->value.shape());
                parent_grads[i] = &slot->second;
            }
            node->backward(found->second, parent_grads);
            if (!keep.contains(node)) grads.erase(node);
        }
    }
    return grads;
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (!g_grad_enabled) return Var(std::move(node));
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return Var(std::move(node));
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (root.value().size() != 1) throw ShapeError("backward() requires a scalar root");
    auto grads = run_backward(root.node().get(), Tensor(root.shape(), 1.0), {});
    for (auto& [node, g] : grads) {
        if (node->backward || !node->requires_grad) continue;
        if (node->grad.empty()) {
            node->grad = std::move(g);
        } else {
            node->grad += g;
        }
    }
}

std::vector<Tensor> gradients(const Var& root, std::span<const Var> wrt, const Tensor* seed) {
    Tensor s = seed ? *seed : Tensor(root.shape(), 1.0);
    if (s.shape() != root.shape()) throw ShapeError("gradient seed shape mismatch");
    std::unordered_set<Node*> keep;
    for (const auto& v : wrt) keep.insert(v.node().get());
    auto grads = run_backward(root.node().get(), std::move(s), keep);
    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const auto& v : wrt) {
        auto it = grads.find(v.node().get());
        out.push_back(it != grads.end() ? it->second : Tensor(v.shape()));
    }
    return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace tmad
