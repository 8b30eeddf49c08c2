#pragma once

// Dense n-d tensor with reverse-mode autodiff. A Tensor is a cheap handle
// onto a node; non-leaf nodes carry the record of the op that produced
// them (name, parents, backward closure). backward() walks the graph once
// per call and adds each pass's contribution into leaf .grad exactly once,
// so two identical passes double the stored gradient bit-for-bit.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "common.hpp"

namespace dosecast {

// Graph recording switch. Disabled inside finite-difference probes and
// inference so ops produce plain tensors.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
private:
    bool prev_;
};

template <typename T>
struct TensorNode;

// Scratch gradient buffers for one backward pass, keyed by node.
template <typename T>
using GradMap = std::unordered_map<const TensorNode<T>*, std::vector<T>>;

template <typename T>
using BackwardFn = std::function<void(const std::vector<T>& out_grad, GradMap<T>& grads)>;

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // persistent; leaves only, lazily sized

    // Op record; leaves keep op empty and no parents.
    std::string op;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    BackwardFn<T> backward;
    bool on_grad_path = false;  // reaches a requires_grad leaf
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& s) {
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = s;
        n->data.assign(static_cast<std::size_t>(numel(s)), T(0));
        return Tensor(std::move(n));
    }

    static Tensor full(const Shape& s, T v) {
        Tensor t = zeros(s);
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor from_data(const Shape& s, std::vector<T> v) {
        if (static_cast<std::int64_t>(v.size()) != numel(s))
            throw ShapeError("from_data: " + std::to_string(v.size()) +
                             " values for shape " + shape_str(s));
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = s;
        n->data = std::move(v);
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v) { return from_data({1}, {v}); }

    static Tensor randn(const Shape& s, Rng& rng, double sigma = 1.0) {
        Tensor t = zeros(s);
        for (auto& x : t.data()) x = static_cast<T>(sigma * rng.normal());
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }

    // Persistent gradient; empty until the first backward pass touches it.
    std::vector<T>& grad() { return node_->grad; }
    const std::vector<T>& grad() const { return node_->grad; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        if (v && !node_->op.empty())
            throw ContractError("set_requires_grad: only leaves can require grad");
        node_->requires_grad = v;
        return *this;
    }

    void zero_grad() {
        node_->grad.assign(node_->data.size(), T(0));
    }

    bool is_leaf() const { return node_->op.empty(); }
    const std::string& op() const { return node_->op; }

    T item() const {
        if (node_->data.size() != 1)
            throw ShapeError("item: tensor of shape " + shape_str(node_->shape) + " is not scalar");
        return node_->data[0];
    }

    std::shared_ptr<TensorNode<T>> node() const { return node_; }
    TensorNode<T>* raw() const { return node_.get(); }

    // Detached copy of the values (no graph).
    Tensor detach() const {
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = node_->shape;
        n->data = node_->data;
        return Tensor(std::move(n));
    }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

// Builds a graph node if recording is on and some parent leads to a
// gradient; otherwise returns a plain value tensor.
template <typename T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& parents, BackwardFn<T> backward) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    if (grad_mode()) {
        bool path = false;
        for (const auto& p : parents)
            path = path || p.raw()->requires_grad || p.raw()->on_grad_path;
        if (path) {
            n->op = std::move(op);
            n->parents.reserve(parents.size());
            for (const auto& p : parents) n->parents.push_back(p.node());
            n->backward = std::move(backward);
            n->on_grad_path = true;
        }
    }
    return Tensor<T>(std::move(n));
}

// Accumulate src into the scratch slot for node, creating it zeroed.
template <typename T>
std::vector<T>& grad_slot(GradMap<T>& grads, const TensorNode<T>* node) {
    auto it = grads.find(node);
    if (it == grads.end())
        it = grads.emplace(node, std::vector<T>(node->data.size(), T(0))).first;
    return it->second;
}

}  // namespace detail

// Reverse pass from a scalar root. Contributions for one call are summed
// in per-node scratch buffers; each requires_grad leaf then receives a
// single += into its persistent grad.
template <typename T>
void backward(const Tensor<T>& root) {
    if (root.size() != 1)
        throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
    TensorNode<T>* rn = root.raw();
    if (rn->op.empty() && !rn->requires_grad) return;

    // Iterative post-order over parent edges; parents precede consumers.
    std::vector<const TensorNode<T>*> order;
    std::unordered_set<const TensorNode<T>*> visited;
    std::vector<std::pair<const TensorNode<T>*, bool>> stack;
    stack.emplace_back(rn, false);
    while (!stack.empty()) {
        auto [n, expanded] = stack.back();
        stack.pop_back();
        if (expanded) {
            order.push_back(n);
            continue;
        }
        if (!visited.insert(n).second) continue;
        stack.emplace_back(n, true);
        for (const auto& p : n->parents)
            if ((p->on_grad_path || p->requires_grad) && !visited.count(p.get()))
                stack.emplace_back(p.get(), false);
    }

    GradMap<T> grads;
    grads[rn] = std::vector<T>{T(1)};

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const TensorNode<T>* n = *it;
        if (!n->backward) continue;
        auto found = grads.find(n);
        if (found == grads.end()) continue;
        n->backward(found->second, grads);
    }

    for (const TensorNode<T>* n : order) {
        if (!n->requires_grad) continue;
        auto found = grads.find(n);
        if (found == grads.end()) continue;
        auto* leaf = const_cast<TensorNode<T>*>(n);
        if (leaf->grad.empty()) leaf->grad.assign(leaf->data.size(), T(0));
        const std::vector<T>& g = found->second;
        for (std::size_t i = 0; i < g.size(); ++i) leaf->grad[i] += g[i];
    }
}

}  // namespace dosecast
