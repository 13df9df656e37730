#pragma once

// Dense row-major compute kernels.
//
// Every kernel exists twice: `serial` is the plain reference used by the tests,
// `parallel` is the OpenMP version the autograd ops call. Both evaluate each
// output element with the same sequence of floating point operations, so their
// results are bit-identical regardless of thread count.

#include <cstddef>
#include <span>

namespace endovid::kernels {

namespace serial {

// c[m,n] (+)= a[m,k] * b[k,n]
template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
// c[m,n] (+)= a[m,k] * b[n,k]^T
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
// c[k,n] (+)= a[m,k]^T * b[m,n]
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);

template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols,
                  T inv_tau);
template <typename T>
void log_softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols,
                      T inv_tau);
template <typename T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t cols, T eps);
template <typename T>
void gelu(std::span<const T> x, std::span<T> y);

}  // namespace serial

namespace parallel {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate);

template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols,
                  T inv_tau);
template <typename T>
void log_softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols,
                      T inv_tau);
template <typename T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t cols, T eps);
template <typename T>
void gelu(std::span<const T> x, std::span<T> y);

}  // namespace parallel

/// Threads OpenMP will use for the parallel kernels (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace endovid::kernels
