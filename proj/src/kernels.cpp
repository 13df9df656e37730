#include "endovid/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace endovid::kernels {

namespace {

using Index = std::ptrdiff_t;

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 14;

template <typename T>
T gelu_scalar(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

}  // namespace

// ---------------------------------------------------------------------------
// serial reference
// ---------------------------------------------------------------------------
namespace serial {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T s = 0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
    }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T s = 0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
    }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) {
            T s = 0;
            for (std::size_t i = 0; i < m; ++i) s += a[i * k + p] * b[i * n + j];
            c[p * n + j] = accumulate ? c[p * n + j] + s : s;
        }
    }
}

template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols,
                  T inv_tau) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * cols;
        T* out = y.data() + r * cols;
        T mx = in[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            out[j] = std::exp((in[j] - mx) * inv_tau);
            sum += out[j];
        }
        for (std::size_t j = 0; j < cols; ++j) out[j] /= sum;
    }
}

template <typename T>
void log_softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols,
                      T inv_tau) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * cols;
        T* out = y.data() + r * cols;
        T mx = in[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (std::size_t j = 0; j < cols; ++j) sum += std::exp((in[j] - mx) * inv_tau);
        const T lse = std::log(sum);
        for (std::size_t j = 0; j < cols; ++j) out[j] = (in[j] - mx) * inv_tau - lse;
    }
}

template <typename T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t cols, T eps) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * cols;
        T mu = 0;
        for (std::size_t j = 0; j < cols; ++j) mu += in[j];
        mu /= T(cols);
        T var = 0;
        for (std::size_t j = 0; j < cols; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= T(cols);
        const T rs = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        for (std::size_t j = 0; j < cols; ++j)
            y[r * cols + j] = gamma[j] * ((in[j] - mu) * rs) + beta[j];
    }
}

template <typename T>
void gelu(std::span<const T> x, std::span<T> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP
// ---------------------------------------------------------------------------
namespace parallel {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
    const bool go_parallel = m * k * n > kParallelWork && m > 1;
#pragma omp parallel if (go_parallel)
    {
        std::vector<T> row(n);
#pragma omp for schedule(static)
        for (Index i = 0; i < Index(m); ++i) {
            std::fill(row.begin(), row.end(), T(0));
            const T* ai = a.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = ai[p];
                const T* bp = b.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) row[j] += av * bp[j];
            }
            T* ci = c.data() + i * n;
            if (accumulate) {
                for (std::size_t j = 0; j < n; ++j) ci[j] += row[j];
            } else {
                std::copy(row.begin(), row.end(), ci);
            }
        }
    }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
    const bool go_parallel = m * k * n > kParallelWork && m > 1;
#pragma omp parallel for schedule(static) if (go_parallel)
    for (Index i = 0; i < Index(m); ++i) {
        const T* ai = a.data() + i * k;
        T* ci = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b.data() + j * k;
            T s = 0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + s : s;
        }
    }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
    const bool go_parallel = m * k * n > kParallelWork && k > 1;
#pragma omp parallel if (go_parallel)
    {
        std::vector<T> row(n);
#pragma omp for schedule(static)
        for (Index p = 0; p < Index(k); ++p) {
            std::fill(row.begin(), row.end(), T(0));
            for (std::size_t i = 0; i < m; ++i) {
                const T av = a[i * k + p];
                const T* bi = b.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) row[j] += av * bi[j];
            }
            T* cp = c.data() + p * n;
            if (accumulate) {
                for (std::size_t j = 0; j < n; ++j) cp[j] += row[j];
            } else {
                std::copy(row.begin(), row.end(), cp);
            }
        }
    }
}

template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols,
                  T inv_tau) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
    for (Index r = 0; r < Index(rows); ++r) {
        serial::softmax_rows(x.subspan(r * cols, cols), y.subspan(r * cols, cols), 1, cols,
                             inv_tau);
    }
}

template <typename T>
void log_softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols,
                      T inv_tau) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
    for (Index r = 0; r < Index(rows); ++r) {
        serial::log_softmax_rows(x.subspan(r * cols, cols), y.subspan(r * cols, cols), 1, cols,
                                 inv_tau);
    }
}

template <typename T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t cols, T eps) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
    for (Index r = 0; r < Index(rows); ++r) {
        serial::layer_norm_rows(x.subspan(r * cols, cols), gamma, beta,
                                y.subspan(r * cols, cols), mean.subspan(r, 1), rstd.subspan(r, 1),
                                1, cols, eps);
    }
}

template <typename T>
void gelu(std::span<const T> x, std::span<T> y) {
#pragma omp parallel for schedule(static) if (x.size() > kParallelWork)
    for (Index i = 0; i < Index(x.size()); ++i) y[i] = gelu_scalar(x[i]);
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(std::max(1, n));
#else
    (void)n;
#endif
}

#define ENDOVID_INSTANTIATE_KERNELS(NS, T)                                                      \
    template void NS::matmul_nn<T>(std::span<const T>, std::span<const T>, std::span<T>,         \
                                   std::size_t, std::size_t, std::size_t, bool);                 \
    template void NS::matmul_nt<T>(std::span<const T>, std::span<const T>, std::span<T>,         \
                                   std::size_t, std::size_t, std::size_t, bool);                 \
    template void NS::matmul_tn<T>(std::span<const T>, std::span<const T>, std::span<T>,         \
                                   std::size_t, std::size_t, std::size_t, bool);                 \
    template void NS::softmax_rows<T>(std::span<const T>, std::span<T>, std::size_t,             \
                                      std::size_t, T);                                           \
    template void NS::log_softmax_rows<T>(std::span<const T>, std::span<T>, std::size_t,         \
                                          std::size_t, T);                                       \
    template void NS::layer_norm_rows<T>(std::span<const T>, std::span<const T>,                 \
                                         std::span<const T>, std::span<T>, std::span<T>,         \
                                         std::span<T>, std::size_t, std::size_t, T);             \
    template void NS::gelu<T>(std::span<const T>, std::span<T>);

ENDOVID_INSTANTIATE_KERNELS(serial, float)
ENDOVID_INSTANTIATE_KERNELS(serial, double)
ENDOVID_INSTANTIATE_KERNELS(parallel, float)
ENDOVID_INSTANTIATE_KERNELS(parallel, double)

}  // namespace endovid::kernels
