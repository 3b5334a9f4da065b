#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gage/errors.hpp"

namespace gage {

// Allocator that default-initializes (i.e. leaves uninitialized) trivial
// element types on resize. Activation tensors are written in full by every
// op, and the redundant zero-fill is measurable at this data scale.
template <class T>
struct DefaultInitAlloc {
    using value_type = T;
    DefaultInitAlloc() = default;
    template <class U>
    DefaultInitAlloc(const DefaultInitAlloc<U>&) {}
    T* allocate(size_t n) { return std::allocator<T>{}.allocate(n); }
    void deallocate(T* p, size_t n) { std::allocator<T>{}.deallocate(p, n); }
    template <class U>
    void construct(U* p) {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
    bool operator==(const DefaultInitAlloc&) const { return true; }
    bool operator!=(const DefaultInitAlloc&) const { return false; }
};

template <class T>
using Buf = std::vector<T, DefaultInitAlloc<T>>;

// Thread-local switch: when disabled, ops build no graph linkage and
// outputs never require grad (inference mode).
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major tensor with optional reverse-mode linkage.
// float is the training scalar; double instantiation exists for
// finite-difference gradient checking.
template <class T>
struct Tens : std::enable_shared_from_this<Tens<T>> {
    std::vector<int> dims;
    Buf<T> data;
    Buf<T> grad;  // allocated lazily; same length as data when in use
    bool requires_grad = false;

    // Reverse-mode linkage, set by the op that produced this tensor.
    // backprop reads this->grad and accumulates into parents' grads.
    std::vector<std::shared_ptr<Tens<T>>> parents;
    std::function<void(Tens<T>&)> backprop;

    Tens() = default;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : dims) n *= d;
        return n;
    }
    int rank() const { return int(dims.size()); }
    int dim(int i) const { return dims[size_t(i)]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    static std::shared_ptr<Tens<T>> zeros(std::vector<int> d, bool rg = false) {
        auto t = uninit(std::move(d), rg);
        std::fill(t->data.begin(), t->data.end(), T(0));
        return t;
    }
    // Allocated but not filled; for op outputs that are written in full.
    static std::shared_ptr<Tens<T>> uninit(std::vector<int> d, bool rg = false) {
        auto t = std::make_shared<Tens<T>>();
        t->dims = std::move(d);
        for (int e : t->dims)
            if (e <= 0) throw ShapeError("tensor extent must be positive, got " + std::to_string(e));
        t->data.resize(size_t(t->numel()));
        t->requires_grad = rg;
        return t;
    }
    static std::shared_ptr<Tens<T>> full(std::vector<int> d, T v, bool rg = false) {
        auto t = zeros(std::move(d), rg);
        std::fill(t->data.begin(), t->data.end(), v);
        return t;
    }
    static std::shared_ptr<Tens<T>> from(std::vector<int> d, const std::vector<T>& vals,
                                         bool rg = false) {
        auto t = std::make_shared<Tens<T>>();
        t->dims = std::move(d);
        if (int64_t(vals.size()) != t->numel())
            throw ShapeError("value count " + std::to_string(vals.size()) +
                             " does not match product of dims " + std::to_string(t->numel()));
        t->data.assign(vals.begin(), vals.end());
        t->requires_grad = rg;
        return t;
    }
    static std::shared_ptr<Tens<T>> scalar(T v, bool rg = false) {
        return from({1}, {v}, rg);
    }
};

template <class T>
using TensPtr = std::shared_ptr<Tens<T>>;

using Tensor = Tens<float>;
using TensorPtr = std::shared_ptr<Tensor>;

// Topologically ordered view of the op DAG reachable from a root
// (parents appear before the tensors they feed). Acyclic by construction:
// ops only ever link to already-existing tensors.
template <class T>
struct Graph {
    std::vector<Tens<T>*> order;
    static Graph build(Tens<T>& root);
};

// Reverse-mode sweep from a scalar loss. Seeds dLoss/dLoss = 1, then runs
// each recorded backward rule exactly once in reverse topological order.
// Fan-out accumulates additively. Throws if loss is not a scalar.
template <class T>
void backward(const TensPtr<T>& loss);

extern template struct Graph<float>;
extern template struct Graph<double>;
extern template void backward<float>(const TensPtr<float>&);
extern template void backward<double>(const TensPtr<double>&);

}  // namespace gage
