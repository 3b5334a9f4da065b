#pragma once

#include "gage/tensor.hpp"

namespace gage {

// Forward ops with reverse-mode rules. All take/return shared tensors and
// record graph linkage when grad mode is on and any input participates.
//
// conv2d: cross-correlation (no kernel flip), zero padding.
//   x[N,C,H,W], w[K,C,kh,kw], b[K] or null -> [N,K,H',W'],
//   H' = floor((H+2p-kh)/s)+1.
template <class T>
TensPtr<T> conv2d(const TensPtr<T>& x, const TensPtr<T>& w, const TensPtr<T>& b,
                  int stride, int padding);

// Window max; gradient routes to the first row-major argmax per window.
template <class T>
TensPtr<T> max_pool2d(const TensPtr<T>& x, int k, int stride);

// [N,C,H,W] -> [N,C], mean over the spatial dims.
template <class T>
TensPtr<T> global_avg_pool(const TensPtr<T>& x);

// Train mode normalizes by biased batch statistics and updates the running
// buffers in place (EMA, unbiased variance); eval mode reads them.
// Batch of 1 in train mode is an error.
template <class T>
TensPtr<T> batch_norm2d(const TensPtr<T>& x, const TensPtr<T>& gamma, const TensPtr<T>& beta,
                        const TensPtr<T>& running_mean, const TensPtr<T>& running_var,
                        bool training, T eps = T(1e-5), T momentum = T(0.1));

// x[N,D], w[M,D], b[M] -> x·wᵀ + b.
template <class T>
TensPtr<T> linear(const TensPtr<T>& x, const TensPtr<T>& w, const TensPtr<T>& b);

// Elementwise max(0,x); subgradient at 0 is 0.
template <class T>
TensPtr<T> relu(const TensPtr<T>& x);

// Mean of squared differences over all elements (scalar output).
template <class T>
TensPtr<T> mse_loss(const TensPtr<T>& pred, const TensPtr<T>& target);

// Elementwise and structural helpers.
template <class T>
TensPtr<T> add(const TensPtr<T>& a, const TensPtr<T>& b);
template <class T>
TensPtr<T> mul(const TensPtr<T>& a, const TensPtr<T>& b);
template <class T>
TensPtr<T> scale(const TensPtr<T>& a, T s);
template <class T>
TensPtr<T> sum_all(const TensPtr<T>& a);
// [N,Da] ++ [N,Db] -> [N,Da+Db] along columns.
template <class T>
TensPtr<T> concat_cols(const TensPtr<T>& a, const TensPtr<T>& b);
// Same element count, new dims; backward is the inverse reshape.
template <class T>
TensPtr<T> reshape(const TensPtr<T>& a, std::vector<int> dims);

#define GAGE_EXTERN_OPS(T)                                                                        \
    extern template TensPtr<T> conv2d<T>(const TensPtr<T>&, const TensPtr<T>&, const TensPtr<T>&, \
                                         int, int);                                              \
    extern template TensPtr<T> max_pool2d<T>(const TensPtr<T>&, int, int);                        \
    extern template TensPtr<T> global_avg_pool<T>(const TensPtr<T>&);                             \
    extern template TensPtr<T> batch_norm2d<T>(const TensPtr<T>&, const TensPtr<T>&,              \
                                               const TensPtr<T>&, const TensPtr<T>&,              \
                                               const TensPtr<T>&, bool, T, T);                    \
    extern template TensPtr<T> linear<T>(const TensPtr<T>&, const TensPtr<T>&, const TensPtr<T>&);\
    extern template TensPtr<T> relu<T>(const TensPtr<T>&);                                        \
    extern template TensPtr<T> mse_loss<T>(const TensPtr<T>&, const TensPtr<T>&);                 \
    extern template TensPtr<T> add<T>(const TensPtr<T>&, const TensPtr<T>&);                      \
    extern template TensPtr<T> mul<T>(const TensPtr<T>&, const TensPtr<T>&);                      \
    extern template TensPtr<T> scale<T>(const TensPtr<T>&, T);                                    \
    extern template TensPtr<T> sum_all<T>(const TensPtr<T>&);                                     \
    extern template TensPtr<T> concat_cols<T>(const TensPtr<T>&, const TensPtr<T>&);              \
    extern template TensPtr<T> reshape<T>(const TensPtr<T>&, std::vector<int>);

GAGE_EXTERN_OPS(float)
GAGE_EXTERN_OPS(double)
#undef GAGE_EXTERN_OPS

}  // namespace gage
