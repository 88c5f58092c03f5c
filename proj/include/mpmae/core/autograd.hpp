#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mpmae/core/tensor.hpp"

namespace mpmae {

// Define-by-run autograd. Nodes form a DAG through `parents`; backward
// replays creation order in reverse, which fixes the gradient accumulation
// order and keeps runs reproducible.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first use
    bool requires_grad = false;
    std::int64_t id = 0;
    std::string name;  // set for parameters
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    Tensor<T>& ensure_grad() {
        if (!grad.defined()) grad = Tensor<T>::zeros(value.shape());
        return grad;
    }
};

template <typename T>
using NodeRef = std::shared_ptr<Node<T>>;

inline std::int64_t next_node_id() {
    static std::atomic<std::int64_t> counter{0};
    return ++counter;
}

template <typename T>
NodeRef<T> make_node(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->id = next_node_id();
    return n;
}

template <typename T>
NodeRef<T> make_param(Tensor<T> value, std::string name) {
    auto n = make_node<T>(std::move(value), true);
    n->name = std::move(name);
    return n;
}

template <typename T>
bool any_requires_grad(std::initializer_list<const NodeRef<T>*> nodes) {
    for (const auto* n : nodes)
        if (*n && (*n)->requires_grad) return true;
    return false;
}

// Runs reverse-mode accumulation from `root` (a scalar). Gradients
// accumulate into every reachable node with requires_grad set.
template <typename T>
void backward(const NodeRef<T>& root) {
    if (!root->requires_grad) return;
    if (root->value.numel() != 1) throw std::invalid_argument("backward root must be scalar");

    std::vector<Node<T>*> order;
    std::vector<Node<T>*> stack{root.get()};
    // DFS over the DAG; `visited` keyed by node id.
    std::vector<std::int64_t> seen;
    auto mark = [&seen](std::int64_t id) {
        auto it = std::lower_bound(seen.begin(), seen.end(), id);
        if (it != seen.end() && *it == id) return false;
        seen.insert(it, id);
        return true;
    };
    mark(root->id);
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && mark(p->id)) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

    root->ensure_grad().fill(T(1));
    for (Node<T>* n : order) {
        if (n->backward_fn && n->grad.defined()) n->backward_fn(*n);
    }
}

template <typename T>
void zero_grads(const std::vector<NodeRef<T>>& params) {
    for (auto& p : params)
        if (p->grad.defined()) p->grad.fill(T(0));
}

}  // namespace mpmae
