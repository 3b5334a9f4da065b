#pragma once

// Row-major GEMM kernels behind conv2d/linear. When GAGE_WITH_OPENBLAS is
// defined the calls forward to OpenBLAS with a fixed thread count; otherwise
// a portable blocked fallback is used. Both paths accumulate each output
// element over k in a fixed order, so results are deterministic per build.

namespace gage::detail {

// C[M,N] = A[M,K] * B[K,N]            (+= when acc)
void gemm_nn(int M, int N, int K, const float* A, const float* B, float* C, bool acc);
void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool acc);

// C[M,N] = A[M,K] * B[N,K]^T
void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C, bool acc);
void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool acc);

// C[M,N] = A[K,M]^T * B[K,N]
void gemm_tn(int M, int N, int K, const float* A, const float* B, float* C, bool acc);
void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool acc);

}  // namespace gage::detail
