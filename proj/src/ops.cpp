#include "gage/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gemm.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gage {

namespace {

template <class T>
bool tracked(const TensPtr<T>& t) {
    return t && t->requires_grad;
}

template <class T>
void check_rank(const TensPtr<T>& t, int rank, const char* op, const char* name) {
    if (!t) throw ShapeError(std::string(op) + ": " + name + " is null");
    if (t->rank() != rank)
        throw ShapeError(std::string(op) + ": " + name + " must have rank " +
                         std::to_string(rank) + ", got " + std::to_string(t->rank()));
}

struct ConvDims {
    int N, C, H, W, K, kh, kw, Ho, Wo;
};

template <class T>
ConvDims conv_dims(const TensPtr<T>& x, const TensPtr<T>& w, const TensPtr<T>& b,
                   int stride, int padding) {
    check_rank(x, 4, "conv2d", "input");
    check_rank(w, 4, "conv2d", "weight");
    ConvDims d;
    d.N = x->dim(0);
    d.C = x->dim(1);
    d.H = x->dim(2);
    d.W = x->dim(3);
    d.K = w->dim(0);
    d.kh = w->dim(2);
    d.kw = w->dim(3);
    if (w->dim(1) != d.C)
        throw ShapeError("conv2d: weight channel axis (dim 1) is " + std::to_string(w->dim(1)) +
                         " but input has C=" + std::to_string(d.C));
    if (b) {
        check_rank(b, 1, "conv2d", "bias");
        if (b->dim(0) != d.K)
            throw ShapeError("conv2d: bias axis 0 is " + std::to_string(b->dim(0)) +
                             " but weight has K=" + std::to_string(d.K));
    }
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
    if (d.kh > d.H + 2 * padding || d.kw > d.W + 2 * padding)
        throw ShapeError("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                         " exceeds padded input " + std::to_string(d.H + 2 * padding) + "x" +
                         std::to_string(d.W + 2 * padding));
    d.Ho = (d.H + 2 * padding - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * padding - d.kw) / stride + 1;
    return d;
}

// Valid output-row range for kernel row i: 0 <= oy*s - p + i < H.
inline std::pair<int, int> conv_range(int extent, int out_extent, int s, int p, int i) {
    const int lo = (p - i) <= 0 ? 0 : (p - i + s - 1) / s;
    const int hi_num = extent - 1 + p - i;
    const int hi = hi_num < 0 ? -1 : std::min(out_extent - 1, hi_num / s);
    return {lo, hi};
}


// Row buffer of zeros standing in for out-of-bounds rows, so the 3x3 stencil
// needs no per-row branching.
template <class T>
const T* zero_row(int w) {
    thread_local std::vector<T> z;
    if (int(z.size()) < w) z.assign(size_t(w), T(0));
    return z.data();
}

// 9-tap stencil over one output row (interior columns vectorize; the two
// border columns are handled explicitly). Accumulates into orow.
template <class T>
void stencil3_row(const T* __restrict ra, const T* __restrict rb, const T* __restrict rc,
                  const T* __restrict wk, T* __restrict orow, int w) {
    if (w == 1) {
        orow[0] += wk[1] * ra[0] + wk[4] * rb[0] + wk[7] * rc[0];
        return;
    }
    orow[0] += wk[1] * ra[0] + wk[2] * ra[1] + wk[4] * rb[0] + wk[5] * rb[1] + wk[7] * rc[0] +
               wk[8] * rc[1];
    for (int x = 1; x < w - 1; ++x) {
        orow[x] += wk[0] * ra[x - 1] + wk[1] * ra[x] + wk[2] * ra[x + 1] + wk[3] * rb[x - 1] +
                   wk[4] * rb[x] + wk[5] * rb[x + 1] + wk[6] * rc[x - 1] + wk[7] * rc[x] +
                   wk[8] * rc[x + 1];
    }
    orow[w - 1] += wk[0] * ra[w - 2] + wk[1] * ra[w - 1] + wk[3] * rb[w - 2] + wk[4] * rb[w - 1] +
                   wk[6] * rc[w - 2] + wk[7] * rc[w - 1];
}

inline bool is_3x3s1p1(int kh, int kw, int s, int p) { return kh == 3 && kw == 3 && s == 1 && p == 1; }

// Channels are processed in blocks so each input plane read from DRAM is
// reused across the whole block from cache; this machine is TLB/bandwidth
// bound long before it is FLOP bound.
constexpr int kChanBlock = 8;

// Fast path: 3x3, stride 1, padding 1 (the dominant shape in every profile).
template <class T>
void conv3x3s1_forward(const T* __restrict x, const T* __restrict w, const T* __restrict bias,
                       T* __restrict out, const ConvDims& d) {
    const int kblocks = (d.K + kChanBlock - 1) / kChanBlock;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int nb = 0; nb < d.N * kblocks; ++nb) {
        const int n = nb / kblocks;
        const int k0 = (nb % kblocks) * kChanBlock;
        const int k1 = std::min(k0 + kChanBlock, d.K);
        const int64_t plane = int64_t(d.H) * d.W;
        for (int k = k0; k < k1; ++k) {
            T* op = out + (int64_t(n) * d.K + k) * plane;
            std::fill(op, op + plane, bias ? bias[k] : T(0));
        }
        const T* zr = zero_row<T>(d.W);
        for (int c = 0; c < d.C; ++c) {
            const T* xc = x + (int64_t(n) * d.C + c) * plane;
            for (int y = 0; y < d.H; ++y) {
                const T* ra = y > 0 ? xc + int64_t(y - 1) * d.W : zr;
                const T* rb = xc + int64_t(y) * d.W;
                const T* rc = y < d.H - 1 ? xc + int64_t(y + 1) * d.W : zr;
                for (int k = k0; k < k1; ++k) {
                    stencil3_row(ra, rb, rc, w + (int64_t(k) * d.C + c) * 9,
                                 out + (int64_t(n) * d.K + k) * plane + int64_t(y) * d.W, d.W);
                }
            }
        }
    }
}

// dX: correlation with the flipped kernel; a block of (n,c) gradient planes
// shares each pass over the dout planes.
template <class T>
void conv3x3s1_backward_input(const T* __restrict dout, const T* __restrict w, T* __restrict dx,
                              const ConvDims& d) {
    const int cblocks = (d.C + kChanBlock - 1) / kChanBlock;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int nb = 0; nb < d.N * cblocks; ++nb) {
        const int n = nb / cblocks;
        const int c0 = (nb % cblocks) * kChanBlock;
        const int c1 = std::min(c0 + kChanBlock, d.C);
        const int64_t plane = int64_t(d.H) * d.W;
        const T* zr = zero_row<T>(d.W);
        for (int k = 0; k < d.K; ++k) {
            const T* gp = dout + (int64_t(n) * d.K + k) * plane;
            T wf[kChanBlock][9];
            for (int c = c0; c < c1; ++c) {
                const T* wk = w + (int64_t(k) * d.C + c) * 9;
                for (int t = 0; t < 9; ++t) wf[c - c0][t] = wk[8 - t];
            }
            for (int y = 0; y < d.H; ++y) {
                const T* ra = y > 0 ? gp + int64_t(y - 1) * d.W : zr;
                const T* rb = gp + int64_t(y) * d.W;
                const T* rc = y < d.H - 1 ? gp + int64_t(y + 1) * d.W : zr;
                for (int c = c0; c < c1; ++c) {
                    stencil3_row(ra, rb, rc, wf[c - c0],
                                 dx + (int64_t(n) * d.C + c) * plane + int64_t(y) * d.W, d.W);
                }
            }
        }
    }
}

// dW: one pass per (k,c,n) plane pair with nine running accumulators; tiles
// of output/input channels keep the planes cache-resident across the pairs.
template <class T>
void conv3x3s1_backward_weight(const T* __restrict dout, const T* __restrict x,
                               T* __restrict dw, const ConvDims& d) {
    const int kblocks = (d.K + kChanBlock - 1) / kChanBlock;
    const int cblocks = (d.C + kChanBlock - 1) / kChanBlock;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int tile = 0; tile < kblocks * cblocks; ++tile) {
        const int k0 = (tile / cblocks) * kChanBlock;
        const int k1 = std::min(k0 + kChanBlock, d.K);
        const int c0 = (tile % cblocks) * kChanBlock;
        const int c1 = std::min(c0 + kChanBlock, d.C);
        const int64_t plane = int64_t(d.H) * d.W;
        const T* zr = zero_row<T>(d.W);
        T acc[kChanBlock][kChanBlock][9] = {};
        for (int n = 0; n < d.N; ++n) {
            for (int k = k0; k < k1; ++k) {
                const T* gp = dout + (int64_t(n) * d.K + k) * plane;
                for (int c = c0; c < c1; ++c) {
                    const T* xc = x + (int64_t(n) * d.C + c) * plane;
                    T a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0, a8 = 0;
                    for (int y = 0; y < d.H; ++y) {
                        const T* __restrict g = gp + int64_t(y) * d.W;
                        const T* __restrict ra = y > 0 ? xc + int64_t(y - 1) * d.W : zr;
                        const T* __restrict rb = xc + int64_t(y) * d.W;
                        const T* __restrict rc = y < d.H - 1 ? xc + int64_t(y + 1) * d.W : zr;
                        const int W = d.W;
                        // interior columns
                        for (int v = 1; v < W - 1; ++v) {
                            const T gv = g[v];
                            a0 += gv * ra[v - 1];
                            a1 += gv * ra[v];
                            a2 += gv * ra[v + 1];
                            a3 += gv * rb[v - 1];
                            a4 += gv * rb[v];
                            a5 += gv * rb[v + 1];
                            a6 += gv * rc[v - 1];
                            a7 += gv * rc[v];
                            a8 += gv * rc[v + 1];
                        }
                        // border columns
                        const T gl = g[0];
                        a1 += gl * ra[0];
                        a4 += gl * rb[0];
                        a7 += gl * rc[0];
                        if (W > 1) {
                            a2 += gl * ra[1];
                            a5 += gl * rb[1];
                            a8 += gl * rc[1];
                            const T gr = g[W - 1];
                            a0 += gr * ra[W - 2];
                            a1 += gr * ra[W - 1];
                            a3 += gr * rb[W - 2];
                            a4 += gr * rb[W - 1];
                            a6 += gr * rc[W - 2];
                            a7 += gr * rc[W - 1];
                        }
                        (void)0;
                    }
                    T* av = acc[k - k0][c - c0];
                    av[0] += a0; av[1] += a1; av[2] += a2;
                    av[3] += a3; av[4] += a4; av[5] += a5;
                    av[6] += a6; av[7] += a7; av[8] += a8;
                }
            }
        }
        for (int k = k0; k < k1; ++k)
            for (int c = c0; c < c1; ++c) {
                T* dwk = dw + (int64_t(k) * d.C + c) * 9;
                for (int t = 0; t < 9; ++t) dwk[t] += acc[k - k0][c - c0][t];
            }
    }
}

// im2col layout for the generic path: col[L][M], L = C*kh*kw (over c,i,j),
// M = N*Ho*Wo (over n,oy,ox). Used where the 3x3/s1 stencil does not apply;
// at those shapes the buffer is small and the GEMM does the heavy lifting.
template <class T>
void im2col(const T* __restrict x, const ConvDims& d, int stride, int padding,
            T* __restrict col) {
    const int L = d.C * d.kh * d.kw;
    const int64_t M = int64_t(d.N) * d.Ho * d.Wo;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int l = 0; l < L; ++l) {
        const int c = l / (d.kh * d.kw);
        const int i = (l / d.kw) % d.kh;
        const int j = l % d.kw;
        T* row = col + int64_t(l) * M;
        for (int n = 0; n < d.N; ++n) {
            const T* xc = x + (int64_t(n) * d.C + c) * d.H * d.W;
            for (int oy = 0; oy < d.Ho; ++oy) {
                const int y = oy * stride - padding + i;
                T* dst = row + (int64_t(n) * d.Ho + oy) * d.Wo;
                if (y < 0 || y >= d.H) {
                    std::fill(dst, dst + d.Wo, T(0));
                    continue;
                }
                const T* src = xc + int64_t(y) * d.W;
                for (int ox = 0; ox < d.Wo; ++ox) {
                    const int xcol = ox * stride - padding + j;
                    dst[ox] = (xcol >= 0 && xcol < d.W) ? src[xcol] : T(0);
                }
            }
        }
    }
}

template <class T>
void col2im_acc(const T* __restrict dcol, const ConvDims& d, int stride, int padding,
                T* __restrict dx) {
    const int L = d.C * d.kh * d.kw;
    const int64_t M = int64_t(d.N) * d.Ho * d.Wo;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int n = 0; n < d.N; ++n) {
        for (int l = 0; l < L; ++l) {
            const int c = l / (d.kh * d.kw);
            const int i = (l / d.kw) % d.kh;
            const int j = l % d.kw;
            const T* row = dcol + int64_t(l) * M;
            T* xc = dx + (int64_t(n) * d.C + c) * d.H * d.W;
            for (int oy = 0; oy < d.Ho; ++oy) {
                const int y = oy * stride - padding + i;
                if (y < 0 || y >= d.H) continue;
                const T* src = row + (int64_t(n) * d.Ho + oy) * d.Wo;
                T* dst = xc + int64_t(y) * d.W;
                for (int ox = 0; ox < d.Wo; ++ox) {
                    const int xcol = ox * stride - padding + j;
                    if (xcol >= 0 && xcol < d.W) dst[xcol] += src[ox];
                }
            }
        }
    }
}

// dOut reshaped to [K][M] for the GEMM forms.
template <class T>
std::vector<T> gather_dout(const T* __restrict g, const ConvDims& d) {
    const int64_t M = int64_t(d.N) * d.Ho * d.Wo;
    std::vector<T> dout_mat(size_t(d.K) * M);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int k = 0; k < d.K; ++k) {
        for (int n = 0; n < d.N; ++n) {
            const T* src = g + (int64_t(n) * d.K + k) * d.Ho * d.Wo;
            T* dst = dout_mat.data() + (int64_t(k) * d.N + n) * d.Ho * d.Wo;
            std::memcpy(dst, src, sizeof(T) * size_t(d.Ho) * d.Wo);
        }
    }
    return dout_mat;
}

// Direct convolution: shifted fused-multiply-add rows, no im2col buffer.
// Each output plane is owned by one (n,k) loop iteration and accumulated in
// a fixed (c,i,j) order, so results do not depend on the thread count.
template <class T>
void conv_forward(const T* __restrict x, const T* __restrict w, const T* __restrict bias,
                  T* __restrict out, const ConvDims& d, int s, int p) {
    if (is_3x3s1p1(d.kh, d.kw, s, p)) {
        conv3x3s1_forward(x, w, bias, out, d);
        return;
    }
    const int L = d.C * d.kh * d.kw;
    const int64_t M = int64_t(d.N) * d.Ho * d.Wo;
    std::vector<T> col(size_t(L) * M);
    im2col(x, d, s, p, col.data());
    std::vector<T> out_mat(size_t(d.K) * M);
    detail::gemm_nn(d.K, int(M), L, w, col.data(), out_mat.data(), false);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int n = 0; n < d.N; ++n) {
        for (int k = 0; k < d.K; ++k) {
            const T bv = bias ? bias[k] : T(0);
            const T* src = out_mat.data() + (int64_t(k) * d.N + n) * d.Ho * d.Wo;
            T* dst = out + (int64_t(n) * d.K + k) * d.Ho * d.Wo;
            for (int m = 0; m < d.Ho * d.Wo; ++m) dst[m] = src[m] + bv;
        }
    }
}

// dX: transposed form of the forward kernel; each image's gradient slice is
// owned by one outer iteration.
template <class T>
void conv_backward_input(const T* __restrict dout, const T* __restrict w, T* __restrict dx,
                         const ConvDims& d, int s, int p) {
    if (is_3x3s1p1(d.kh, d.kw, s, p)) {
        conv3x3s1_backward_input(dout, w, dx, d);
        return;
    }
    const int L = d.C * d.kh * d.kw;
    const int64_t M = int64_t(d.N) * d.Ho * d.Wo;
    std::vector<T> dout_mat = gather_dout(dout, d);
    std::vector<T> dcol(size_t(L) * M);
    detail::gemm_tn(L, int(M), d.K, w, dout_mat.data(), dcol.data(), false);
    col2im_acc(dcol.data(), d, s, p, dx);
}

// dW: each (k,c) filter slice is owned by one iteration; the reduction over
// (n,oy,ox) runs in four fixed lanes so it vectorizes without reordering.
template <class T>
void conv_backward_weight(const T* __restrict dout, const T* __restrict x, T* __restrict dw,
                          const ConvDims& d, int s, int p) {
    if (is_3x3s1p1(d.kh, d.kw, s, p)) {
        conv3x3s1_backward_weight(dout, x, dw, d);
        return;
    }
    const int L = d.C * d.kh * d.kw;
    const int64_t M = int64_t(d.N) * d.Ho * d.Wo;
    std::vector<T> dout_mat = gather_dout(dout, d);
    std::vector<T> col(size_t(L) * M);
    im2col(x, d, s, p, col.data());
    detail::gemm_nt(d.K, L, int(M), dout_mat.data(), col.data(), dw, true);
}

}  // namespace

template <class T>
TensPtr<T> conv2d(const TensPtr<T>& x, const TensPtr<T>& w, const TensPtr<T>& b,
                  int stride, int padding) {
    const ConvDims d = conv_dims(x, w, b, stride, padding);
    auto out = Tens<T>::uninit({d.N, d.K, d.Ho, d.Wo});
    conv_forward(x->data.data(), w->data.data(), b ? b->data.data() : nullptr, out->data.data(),
                 d, stride, padding);

    const bool track = grad_enabled() && (tracked(x) || tracked(w) || tracked(b));
    if (track) {
        out->requires_grad = true;
        out->parents = {x, w};
        if (b) out->parents.push_back(b);
        auto xp = x;
        auto wp = w;
        auto bp = b;
        out->backprop = [xp, wp, bp, d, stride, padding](Tens<T>& self) {
            if (bp && bp->requires_grad) {
                bp->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (int k = 0; k < d.K; ++k) {
                    T s = 0;
                    for (int n = 0; n < d.N; ++n) {
                        const T* row = self.grad.data() + (int64_t(n) * d.K + k) * d.Ho * d.Wo;
                        for (int m = 0; m < d.Ho * d.Wo; ++m) s += row[m];
                    }
                    bp->grad[size_t(k)] += s;
                }
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                conv_backward_weight(self.grad.data(), xp->data.data(), wp->grad.data(), d,
                                     stride, padding);
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                conv_backward_input(self.grad.data(), wp->data.data(), xp->grad.data(), d,
                                    stride, padding);
            }
        };
    }
    return out;
}

template <class T>
TensPtr<T> max_pool2d(const TensPtr<T>& x, int k, int stride) {
    check_rank(x, 4, "max_pool2d", "input");
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    if (k < 1 || stride < 1) throw ShapeError("max_pool2d: k and stride must be >= 1");
    if (k > H || k > W)
        throw ShapeError("max_pool2d: window " + std::to_string(k) + " exceeds spatial extent " +
                         std::to_string(H) + "x" + std::to_string(W));
    const int Ho = (H - k) / stride + 1;
    const int Wo = (W - k) / stride + 1;
    auto out = Tens<T>::uninit({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(size_t(N) * C * Ho * Wo);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int nc = 0; nc < N * C; ++nc) {
        const T* plane = x->data.data() + int64_t(nc) * H * W;
        T* oplane = out->data.data() + int64_t(nc) * Ho * Wo;
        int64_t* aplane = argmax->data() + int64_t(nc) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                const int y0 = oy * stride, x0 = ox * stride;
                T best = plane[int64_t(y0) * W + x0];
                int64_t arg = int64_t(y0) * W + x0;
                for (int i = 0; i < k; ++i) {
                    for (int j = 0; j < k; ++j) {
                        const int64_t idx = int64_t(y0 + i) * W + (x0 + j);
                        // strict '>' keeps the first row-major occurrence on ties
                        if (plane[idx] > best) {
                            best = plane[idx];
                            arg = idx;
                        }
                    }
                }
                oplane[int64_t(oy) * Wo + ox] = best;
                aplane[int64_t(oy) * Wo + ox] = int64_t(nc) * H * W + arg;
            }
        }
    }

    if (grad_enabled() && tracked(x)) {
        out->requires_grad = true;
        out->parents = {x};
        auto xp = x;
        out->backprop = [xp, argmax](Tens<T>& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                xp->grad[size_t((*argmax)[i])] += self.grad[i];
        };
    }
    return out;
}

template <class T>
TensPtr<T> global_avg_pool(const TensPtr<T>& x) {
    check_rank(x, 4, "global_avg_pool", "input");
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    const T inv = T(1) / (T(H) * T(W));
    auto out = Tens<T>::uninit({N, C});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int nc = 0; nc < N * C; ++nc) {
        const T* plane = x->data.data() + int64_t(nc) * H * W;
        T s = 0;
        for (int i = 0; i < H * W; ++i) s += plane[i];
        out->data[size_t(nc)] = s * inv;
    }
    if (grad_enabled() && tracked(x)) {
        out->requires_grad = true;
        out->parents = {x};
        auto xp = x;
        out->backprop = [xp, N, C, H, W, inv](Tens<T>& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            for (int nc = 0; nc < N * C; ++nc) {
                const T g = self.grad[size_t(nc)] * inv;
                T* plane = xp->grad.data() + int64_t(nc) * H * W;
                for (int i = 0; i < H * W; ++i) plane[i] += g;
            }
        };
    }
    return out;
}

template <class T>
TensPtr<T> batch_norm2d(const TensPtr<T>& x, const TensPtr<T>& gamma, const TensPtr<T>& beta,
                        const TensPtr<T>& running_mean, const TensPtr<T>& running_var,
                        bool training, T eps, T momentum) {
    check_rank(x, 4, "batch_norm2d", "input");
    const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
    for (auto [t, name] : {std::pair{gamma, "gamma"}, {beta, "beta"},
                           {running_mean, "running_mean"}, {running_var, "running_var"}}) {
        check_rank(t, 1, "batch_norm2d", name);
        if (t->dim(0) != C)
            throw ShapeError(std::string("batch_norm2d: ") + name + " has length " +
                             std::to_string(t->dim(0)) + " but input has C=" + std::to_string(C));
    }
    if (training && N < 2)
        throw NumericError("batch_norm2d: train mode requires batch size >= 2, got " +
                           std::to_string(N));

    const int64_t plane = int64_t(H) * W;
    const int64_t m = int64_t(N) * plane;
    auto out = Tens<T>::uninit({N, C, H, W});
    std::vector<T> mean(size_t(C), T(0));
    std::vector<T> inv_std(size_t(C), T(0));

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int c = 0; c < C; ++c) {
        T mu, is;
        if (training) {
            // single pass, double accumulators in two fixed lanes
            double s0 = 0, s1 = 0, q0 = 0, q1 = 0;
            for (int n = 0; n < N; ++n) {
                const T* p = x->data.data() + (int64_t(n) * C + c) * plane;
                int64_t i = 0;
                for (; i + 2 <= plane; i += 2) {
                    s0 += double(p[i]);
                    s1 += double(p[i + 1]);
                    q0 += double(p[i]) * double(p[i]);
                    q1 += double(p[i + 1]) * double(p[i + 1]);
                }
                for (; i < plane; ++i) {
                    s0 += double(p[i]);
                    q0 += double(p[i]) * double(p[i]);
                }
            }
            const double dmu = (s0 + s1) / double(m);
            double dvar = (q0 + q1) / double(m) - dmu * dmu;
            if (dvar < 0) dvar = 0;
            mu = T(dmu);
            const T v = T(dvar);
            is = T(1) / std::sqrt(v + eps);
            running_mean->data[size_t(c)] =
                (T(1) - momentum) * running_mean->data[size_t(c)] + momentum * mu;
            const T unbiased = (m > 1) ? v * T(m) / T(m - 1) : v;
            running_var->data[size_t(c)] =
                (T(1) - momentum) * running_var->data[size_t(c)] + momentum * unbiased;
        } else {
            mu = running_mean->data[size_t(c)];
            is = T(1) / std::sqrt(running_var->data[size_t(c)] + eps);
        }
        mean[size_t(c)] = mu;
        inv_std[size_t(c)] = is;
        const T g = gamma->data[size_t(c)], bt = beta->data[size_t(c)];
        for (int n = 0; n < N; ++n) {
            const T* p = x->data.data() + (int64_t(n) * C + c) * plane;
            T* q = out->data.data() + (int64_t(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + bt;
        }
    }

    const bool track = grad_enabled() && (tracked(x) || tracked(gamma) || tracked(beta));
    if (track) {
        out->requires_grad = true;
        out->parents = {x, gamma, beta};
        auto xp = x;
        auto gp = gamma;
        auto bp = beta;
        auto mu_s = std::make_shared<std::vector<T>>(std::move(mean));
        auto is_s = std::make_shared<std::vector<T>>(std::move(inv_std));
        out->backprop = [xp, gp, bp, mu_s, is_s, N, C, plane, m, training](Tens<T>& self) {
            if (xp->requires_grad) xp->ensure_grad();
            if (gp->requires_grad) gp->ensure_grad();
            if (bp->requires_grad) bp->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (int c = 0; c < C; ++c) {
                const T mu = (*mu_s)[size_t(c)], is = (*is_s)[size_t(c)];
                const T g = gp->data[size_t(c)];
                double dsum_dy = 0, dsum_dy_xhat = 0;
                for (int n = 0; n < N; ++n) {
                    const T* xr = xp->data.data() + (int64_t(n) * C + c) * plane;
                    const T* gr = self.grad.data() + (int64_t(n) * C + c) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        dsum_dy += double(gr[i]);
                        dsum_dy_xhat += double(gr[i]) * double((xr[i] - mu) * is);
                    }
                }
                const T sum_dy = T(dsum_dy), sum_dy_xhat = T(dsum_dy_xhat);
                if (gp->requires_grad) gp->grad[size_t(c)] += sum_dy_xhat;
                if (bp->requires_grad) bp->grad[size_t(c)] += sum_dy;
                if (!xp->requires_grad) continue;
                if (training) {
                    // d/dx flows through the batch statistics as well.
                    const T k1 = sum_dy / T(m);
                    const T k2 = sum_dy_xhat / T(m);
                    for (int n = 0; n < N; ++n) {
                        const T* xr = xp->data.data() + (int64_t(n) * C + c) * plane;
                        const T* gr = self.grad.data() + (int64_t(n) * C + c) * plane;
                        T* dr = xp->grad.data() + (int64_t(n) * C + c) * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            const T xhat = (xr[i] - mu) * is;
                            dr[i] += g * is * (gr[i] - k1 - xhat * k2);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const T* gr = self.grad.data() + (int64_t(n) * C + c) * plane;
                        T* dr = xp->grad.data() + (int64_t(n) * C + c) * plane;
                        for (int64_t i = 0; i < plane; ++i) dr[i] += gr[i] * g * is;
                    }
                }
            }
        };
    }
    return out;
}

template <class T>
TensPtr<T> linear(const TensPtr<T>& x, const TensPtr<T>& w, const TensPtr<T>& b) {
    check_rank(x, 2, "linear", "input");
    check_rank(w, 2, "linear", "weight");
    check_rank(b, 1, "linear", "bias");
    const int N = x->dim(0), D = x->dim(1), M = w->dim(0);
    if (w->dim(1) != D)
        throw ShapeError("linear: weight inner axis (dim 1) is " + std::to_string(w->dim(1)) +
                         " but input has D=" + std::to_string(D));
    if (b->dim(0) != M)
        throw ShapeError("linear: bias length " + std::to_string(b->dim(0)) +
                         " but weight has M=" + std::to_string(M));
    auto out = Tens<T>::uninit({N, M});
    detail::gemm_nt(N, M, D, x->data.data(), w->data.data(), out->data.data(), false);
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < M; ++j) out->data[size_t(n) * M + j] += b->data[size_t(j)];

    const bool track = grad_enabled() && (tracked(x) || tracked(w) || tracked(b));
    if (track) {
        out->requires_grad = true;
        out->parents = {x, w, b};
        auto xp = x;
        auto wp = w;
        auto bp = b;
        out->backprop = [xp, wp, bp, N, D, M](Tens<T>& self) {
            if (xp->requires_grad) {
                xp->ensure_grad();
                detail::gemm_nn(N, D, M, self.grad.data(), wp->data.data(), xp->grad.data(), true);
            }
            if (wp->requires_grad) {
                wp->ensure_grad();
                detail::gemm_tn(M, D, N, self.grad.data(), xp->data.data(), wp->grad.data(), true);
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int j = 0; j < M; ++j) bp->grad[size_t(j)] += self.grad[size_t(n) * M + j];
            }
        };
    }
    return out;
}

template <class T>
TensPtr<T> relu(const TensPtr<T>& x) {
    if (!x) throw ShapeError("relu: input is null");
    auto out = Tens<T>::uninit(x->dims);
    const size_t n = x->data.size();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < int64_t(n); ++i)
        out->data[size_t(i)] = x->data[size_t(i)] > T(0) ? x->data[size_t(i)] : T(0);
    if (grad_enabled() && tracked(x)) {
        out->requires_grad = true;
        out->parents = {x};
        auto xp = x;
        out->backprop = [xp](Tens<T>& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            const int64_t n = int64_t(self.grad.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (int64_t i = 0; i < n; ++i)
                if (xp->data[size_t(i)] > T(0)) xp->grad[size_t(i)] += self.grad[size_t(i)];
        };
    }
    return out;
}

template <class T>
TensPtr<T> mse_loss(const TensPtr<T>& pred, const TensPtr<T>& target) {
    if (!pred || !target) throw ShapeError("mse_loss: null input");
    if (pred->dims != target->dims)
        throw ShapeError("mse_loss: prediction and target shapes differ (" +
                         std::to_string(pred->numel()) + " vs " + std::to_string(target->numel()) +
                         " elements)");
    const int64_t n = pred->numel();
    T s = 0;
    for (int64_t i = 0; i < n; ++i) {
        const T d = pred->data[size_t(i)] - target->data[size_t(i)];
        s += d * d;
    }
    auto out = Tens<T>::scalar(s / T(n));
    if (grad_enabled() && (tracked(pred) || tracked(target))) {
        out->requires_grad = true;
        out->parents = {pred, target};
        auto pp = pred;
        auto tp = target;
        out->backprop = [pp, tp, n](Tens<T>& self) {
            const T g = self.grad[0] * T(2) / T(n);
            if (pp->requires_grad) {
                pp->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    pp->grad[size_t(i)] += g * (pp->data[size_t(i)] - tp->data[size_t(i)]);
            }
            if (tp->requires_grad) {
                tp->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    tp->grad[size_t(i)] -= g * (pp->data[size_t(i)] - tp->data[size_t(i)]);
            }
        };
    }
    return out;
}

template <class T>
TensPtr<T> add(const TensPtr<T>& a, const TensPtr<T>& b) {
    if (!a || !b) throw ShapeError("add: null input");
    if (a->dims != b->dims) throw ShapeError("add: operand shapes differ");
    auto out = Tens<T>::uninit(a->dims);
    const size_t n = a->data.size();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < int64_t(n); ++i)
        out->data[size_t(i)] = a->data[size_t(i)] + b->data[size_t(i)];
    if (grad_enabled() && (tracked(a) || tracked(b))) {
        out->requires_grad = true;
        out->parents = {a, b};
        auto ap = a;
        auto bp = b;
        out->backprop = [ap, bp](Tens<T>& self) {
            const int64_t n = int64_t(self.grad.size());
            for (auto& p : {ap, bp}) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (int64_t i = 0; i < n; ++i) p->grad[size_t(i)] += self.grad[size_t(i)];
            }
        };
    }
    return out;
}

template <class T>
TensPtr<T> mul(const TensPtr<T>& a, const TensPtr<T>& b) {
    if (!a || !b) throw ShapeError("mul: null input");
    if (a->dims != b->dims) throw ShapeError("mul: operand shapes differ");
    auto out = Tens<T>::uninit(a->dims);
    for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (grad_enabled() && (tracked(a) || tracked(b))) {
        out->requires_grad = true;
        out->parents = {a, b};
        auto ap = a;
        auto bp = b;
        out->backprop = [ap, bp](Tens<T>& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    ap->grad[i] += self.grad[i] * bp->data[i];
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    bp->grad[i] += self.grad[i] * ap->data[i];
            }
        };
    }
    return out;
}

template <class T>
TensPtr<T> scale(const TensPtr<T>& a, T s) {
    if (!a) throw ShapeError("scale: null input");
    auto out = Tens<T>::uninit(a->dims);
    for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * s;
    if (grad_enabled() && tracked(a)) {
        out->requires_grad = true;
        out->parents = {a};
        auto ap = a;
        out->backprop = [ap, s](Tens<T>& self) {
            if (!ap->requires_grad) return;
            ap->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i] * s;
        };
    }
    return out;
}

template <class T>
TensPtr<T> sum_all(const TensPtr<T>& a) {
    if (!a) throw ShapeError("sum_all: null input");
    T s = 0;
    for (const T v : a->data) s += v;
    auto out = Tens<T>::scalar(s);
    if (grad_enabled() && tracked(a)) {
        out->requires_grad = true;
        out->parents = {a};
        auto ap = a;
        out->backprop = [ap](Tens<T>& self) {
            if (!ap->requires_grad) return;
            ap->ensure_grad();
            for (size_t i = 0; i < ap->grad.size(); ++i) ap->grad[i] += self.grad[0];
        };
    }
    return out;
}

template <class T>
TensPtr<T> concat_cols(const TensPtr<T>& a, const TensPtr<T>& b) {
    check_rank(a, 2, "concat_cols", "lhs");
    check_rank(b, 2, "concat_cols", "rhs");
    if (a->dim(0) != b->dim(0))
        throw ShapeError("concat_cols: row counts differ (" + std::to_string(a->dim(0)) + " vs " +
                         std::to_string(b->dim(0)) + ")");
    const int N = a->dim(0), Da = a->dim(1), Db = b->dim(1);
    auto out = Tens<T>::uninit({N, Da + Db});
    for (int n = 0; n < N; ++n) {
        std::memcpy(out->data.data() + size_t(n) * (Da + Db), a->data.data() + size_t(n) * Da,
                    sizeof(T) * size_t(Da));
        std::memcpy(out->data.data() + size_t(n) * (Da + Db) + Da, b->data.data() + size_t(n) * Db,
                    sizeof(T) * size_t(Db));
    }
    if (grad_enabled() && (tracked(a) || tracked(b))) {
        out->requires_grad = true;
        out->parents = {a, b};
        auto ap = a;
        auto bp = b;
        out->backprop = [ap, bp, N, Da, Db](Tens<T>& self) {
            for (int n = 0; n < N; ++n) {
                const T* g = self.grad.data() + size_t(n) * (Da + Db);
                if (ap->requires_grad) {
                    ap->ensure_grad();
                    for (int j = 0; j < Da; ++j) ap->grad[size_t(n) * Da + j] += g[j];
                }
                if (bp->requires_grad) {
                    bp->ensure_grad();
                    for (int j = 0; j < Db; ++j) bp->grad[size_t(n) * Db + j] += g[Da + j];
                }
            }
        };
    }
    return out;
}

template <class T>
TensPtr<T> reshape(const TensPtr<T>& a, std::vector<int> dims) {
    if (!a) throw ShapeError("reshape: null input");
    auto out = Tens<T>::uninit(dims);
    if (out->numel() != a->numel())
        throw ShapeError("reshape: element count changes from " + std::to_string(a->numel()) +
                         " to " + std::to_string(out->numel()));
    out->data = a->data;
    if (grad_enabled() && tracked(a)) {
        out->requires_grad = true;
        out->parents = {a};
        auto ap = a;
        out->backprop = [ap](Tens<T>& self) {
            if (!ap->requires_grad) return;
            ap->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
        };
    }
    return out;
}

#define GAGE_INSTANTIATE_OPS(T)                                                            \
    template TensPtr<T> conv2d<T>(const TensPtr<T>&, const TensPtr<T>&, const TensPtr<T>&, \
                                  int, int);                                               \
    template TensPtr<T> max_pool2d<T>(const TensPtr<T>&, int, int);                        \
    template TensPtr<T> global_avg_pool<T>(const TensPtr<T>&);                             \
    template TensPtr<T> batch_norm2d<T>(const TensPtr<T>&, const TensPtr<T>&,              \
                                        const TensPtr<T>&, const TensPtr<T>&,              \
                                        const TensPtr<T>&, bool, T, T);                    \
    template TensPtr<T> linear<T>(const TensPtr<T>&, const TensPtr<T>&, const TensPtr<T>&);\
    template TensPtr<T> relu<T>(const TensPtr<T>&);                                        \
    template TensPtr<T> mse_loss<T>(const TensPtr<T>&, const TensPtr<T>&);                 \
    template TensPtr<T> add<T>(const TensPtr<T>&, const TensPtr<T>&);                      \
    template TensPtr<T> mul<T>(const TensPtr<T>&, const TensPtr<T>&);                      \
    template TensPtr<T> scale<T>(const TensPtr<T>&, T);                                    \
    template TensPtr<T> sum_all<T>(const TensPtr<T>&);                                     \
    template TensPtr<T> concat_cols<T>(const TensPtr<T>&, const TensPtr<T>&);              \
    template TensPtr<T> reshape<T>(const TensPtr<T>&, std::vector<int>);

GAGE_INSTANTIATE_OPS(float)
GAGE_INSTANTIATE_OPS(double)
#undef GAGE_INSTANTIATE_OPS

}  // namespace gage
