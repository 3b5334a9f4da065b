#include "gage/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace gage {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

template <class T>
Graph<T> Graph<T>::build(Tens<T>& root) {
    Graph<T> g;
    // Iterative post-order DFS; the graph can be deep (one node per op per layer).
    std::unordered_set<const Tens<T>*> visited;
    std::vector<std::pair<Tens<T>*, size_t>> stack;
    stack.push_back({&root, 0});
    visited.insert(&root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tens<T>* p = node->parents[idx++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            g.order.push_back(node);
            stack.pop_back();
        }
    }
    return g;
}

template <class T>
void backward(const TensPtr<T>& loss) {
    if (!loss) throw ShapeError("backward: null loss tensor");
    if (loss->numel() != 1)
        throw ShapeError("backward requires a scalar loss, got " +
                         std::to_string(loss->numel()) + " elements");
    Graph<T> g = Graph<T>::build(*loss);
    for (Tens<T>* n : g.order) n->ensure_grad();
    loss->grad[0] = T(1);
    // order has parents before children; reverse it so gradients flow
    // from the loss down to the leaves, each node visited exactly once.
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
        Tens<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

template struct Graph<float>;
template struct Graph<double>;
template void backward<float>(const TensPtr<float>&);
template void backward<double>(const TensPtr<double>&);

}  // namespace gage
