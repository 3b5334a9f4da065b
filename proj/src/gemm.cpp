#include "gemm.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>
#include <thread>
#include <vector>

#ifdef GAGE_WITH_OPENBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gage::detail {

namespace {

void fix_threads() {
#ifdef GAGE_WITH_OPENBLAS
    static std::once_flag once;
    std::call_once(once, [] {
        int n = int(std::thread::hardware_concurrency());
        openblas_set_num_threads(n > 0 ? n : 1);
    });
#endif
}

#ifndef GAGE_WITH_OPENBLAS

constexpr int kBlockN = 512;

// jb-blocked ikj loop: inner j has no cross-iteration dependence, so it
// vectorizes without reordering the per-element k accumulation.
template <class T, bool ATrans>
void gemm_nn_tn_impl(int M, int N, int K, const T* A, const T* B, T* C, bool acc) {
    if (!acc)
        for (int i = 0; i < M; ++i) std::fill(C + int64_t(i) * N, C + int64_t(i + 1) * N, T(0));
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int jb = 0; jb < N; jb += kBlockN) {
        const int je = std::min(jb + kBlockN, N);
        for (int i = 0; i < M; ++i) {
            T* c = C + int64_t(i) * N;
            for (int k = 0; k < K; ++k) {
                const T a = ATrans ? A[int64_t(k) * M + i] : A[int64_t(i) * K + k];
                const T* brow = B + int64_t(k) * N;
                for (int j = jb; j < je; ++j) c[j] += a * brow[j];
            }
        }
    }
}

// Dot-product form with four explicit accumulators; the lane split is fixed
// in source, so the summation order never depends on the optimizer.
template <class T>
void gemm_nt_impl(int M, int N, int K, const T* A, const T* B, T* C, bool acc) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < M; ++i) {
        const T* arow = A + int64_t(i) * K;
        for (int j = 0; j < N; ++j) {
            const T* brow = B + int64_t(j) * K;
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            int k = 0;
            for (; k + 4 <= K; k += 4) {
                s0 += arow[k] * brow[k];
                s1 += arow[k + 1] * brow[k + 1];
                s2 += arow[k + 2] * brow[k + 2];
                s3 += arow[k + 3] * brow[k + 3];
            }
            T s = ((s0 + s1) + (s2 + s3));
            for (; k < K; ++k) s += arow[k] * brow[k];
            C[int64_t(i) * N + j] = acc ? C[int64_t(i) * N + j] + s : s;
        }
    }
}

#endif  // !GAGE_WITH_OPENBLAS

}  // namespace

#ifdef GAGE_WITH_OPENBLAS

void gemm_nn(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    fix_threads();
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, M, N, K, 1.0f, A, K, B, N,
                acc ? 1.0f : 0.0f, C, N);
}
void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
    fix_threads();
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, M, N, K, 1.0, A, K, B, N,
                acc ? 1.0 : 0.0, C, N);
}
void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    fix_threads();
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, M, N, K, 1.0f, A, K, B, K,
                acc ? 1.0f : 0.0f, C, N);
}
void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
    fix_threads();
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, M, N, K, 1.0, A, K, B, K,
                acc ? 1.0 : 0.0, C, N);
}
void gemm_tn(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    fix_threads();
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, M, N, K, 1.0f, A, M, B, N,
                acc ? 1.0f : 0.0f, C, N);
}
void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
    fix_threads();
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, M, N, K, 1.0, A, M, B, N,
                acc ? 1.0 : 0.0, C, N);
}

#else

void gemm_nn(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    gemm_nn_tn_impl<float, false>(M, N, K, A, B, C, acc);
}
void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
    gemm_nn_tn_impl<double, false>(M, N, K, A, B, C, acc);
}
void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    gemm_nt_impl(M, N, K, A, B, C, acc);
}
void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
    gemm_nt_impl(M, N, K, A, B, C, acc);
}
void gemm_tn(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    gemm_nn_tn_impl<float, true>(M, N, K, A, B, C, acc);
}
void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool acc) {
    gemm_nn_tn_impl<double, true>(M, N, K, A, B, C, acc);
}

#endif

}  // namespace gage::detail
