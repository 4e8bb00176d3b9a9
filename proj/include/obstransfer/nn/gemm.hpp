#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

// Fixed-order matrix products for the autodiff kernels. Every output element
// accumulates its k terms in ascending order, starting from its current
// value, independent of data alignment or batch size, so identical inputs
// always give identical bits. Row-major.
namespace obstransfer::nn::gemm {

namespace detail {

// GCC/Clang vector extension; lanes are independent so blocking does not
// change any element's summation order.
typedef double v8 __attribute__((vector_size(64)));
inline constexpr std::size_t kCols = 16;

inline v8 load(const double* p)
{
    v8 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store(double* p, v8 v) { std::memcpy(p, &v, sizeof v); }

// R rows x 16 columns held in registers for the whole k loop.
template <std::size_t R>
inline void block(const double* __restrict A, const double* __restrict B, double* __restrict C, std::size_t i,
                  std::size_t j, std::size_t k, std::size_t m)
{
    v8 acc[R][2];
    for (std::size_t r = 0; r < R; ++r) {
        acc[r][0] = load(C + (i + r) * m + j);
        acc[r][1] = load(C + (i + r) * m + j + 8);
    }
    for (std::size_t p = 0; p < k; ++p) {
        const double* b = B + p * m + j;
        const v8 b0 = load(b), b1 = load(b + 8);
        for (std::size_t r = 0; r < R; ++r) {
            const double av = A[(i + r) * k + p];
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
        }
    }
    for (std::size_t r = 0; r < R; ++r) {
        store(C + (i + r) * m + j, acc[r][0]);
        store(C + (i + r) * m + j + 8, acc[r][1]);
    }
}

inline void scalar_cols(const double* A, const double* B, double* C, std::size_t i0, std::size_t i1, std::size_t j0,
                        std::size_t k, std::size_t m)
{
    for (std::size_t i = i0; i < i1; ++i) {
        double* c = C + i * m;
        const double* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + p * m;
            for (std::size_t j = j0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace detail

// C[n, m] += A[n, k] * B[k, m]. Column strips outermost so a k x 16 panel of
// B stays in L1 across all row blocks.
inline void nn_acc(const double* A, const double* B, double* C, std::size_t n, std::size_t k, std::size_t m)
{
    using detail::block;
    const std::size_t mj = m - m % detail::kCols;
    for (std::size_t j = 0; j < mj; j += detail::kCols) {
        std::size_t i = 0;
        for (; i + 8 <= n; i += 8) block<8>(A, B, C, i, j, k, m);
        for (; i + 4 <= n; i += 4) block<4>(A, B, C, i, j, k, m);
        for (; i < n; ++i) block<1>(A, B, C, i, j, k, m);
    }
    if (mj < m) detail::scalar_cols(A, B, C, 0, n, mj, k, m);
}

// C[k, m] += A[n, k]^T * B[n, m]
inline void tn_acc(const double* A, const double* B, double* C, std::size_t n, std::size_t k, std::size_t m)
{
    std::vector<double> at(k * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) at[p * n + i] = A[i * k + p];
    nn_acc(at.data(), B, C, k, n, m);
}

// C[n, k] += A[n, m] * B[k, m]^T
inline void nt_acc(const double* A, const double* B, double* C, std::size_t n, std::size_t m, std::size_t k)
{
    std::vector<double> bt(m * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = B[p * m + j];
    nn_acc(A, bt.data(), C, n, m, k);
}

}  // namespace obstransfer::nn::gemm
