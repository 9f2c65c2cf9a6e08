#pragma once

// Dense row-major tensors of 64-bit reals plus the small set of GEMM kernels
// everything else is built on. Rank-1 tensors behave as row vectors in matrix
// operations; rank-0 tensors are scalars.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace sig {

// Keeps large tensor buffers on the heap instead of fresh mmap regions, which
// otherwise page-fault on every forward pass. Idempotent; no-op off glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        mallopt(M_TOP_PAD, 64 << 20);
        return true;
    }();
    (void)done;
#endif
}

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
public:
    Tensor() : shape_{}, values_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        check_dims();
        values_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        check_dims();
        if (shape_size(shape_) != values_.size()) {
            throw DimensionError("tensor: shape " + shape_str(shape_) + " needs " +
                                 std::to_string(shape_size(shape_)) + " values, got " +
                                 std::to_string(values_.size()));
        }
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> v) {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor(Shape{rows, cols}, fill);
    }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> v;
        v.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("from_rows: ragged rows");
            v.insert(v.end(), row.begin(), row.end());
        }
        return Tensor(Shape{r, c}, std::move(v));
    }
    static Tensor identity(std::size_t n) {
        Tensor t = matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }

    // Matrix view: rank-2 is (r, c); rank-1 is a single row; rank-0 is 1x1.
    std::size_t rows() const noexcept { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const noexcept {
        if (rank() == 2) return shape_[1];
        return rank() == 1 ? shape_[0] : 1;
    }

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols() + c]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * cols(), cols()};
    }

    double item() const {
        if (size() != 1) throw DimensionError("item: tensor " + shape_str(shape_) + " is not a scalar");
        return values_[0];
    }

    Tensor reshaped(Shape s) const {
        Tensor t = *this;
        if (shape_size(s) != size()) {
            throw DimensionError("reshape: " + shape_str(shape_) + " -> " + shape_str(s));
        }
        t.shape_ = std::move(s);
        return t;
    }

    bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

    bool all_finite() const noexcept {
        return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
    }

    void fill(double v) noexcept { std::fill(values_.begin(), values_.end(), v); }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    void check_dims() const {
        for (std::size_t d : shape_) {
            if (d == 0) throw DimensionError("tensor: zero dimension in shape " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<double> values_;
};

namespace kernel {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

// At least three quarters zeros: worth skipping zeros instead of a dense product.
inline bool mostly_zero(const double* a, std::size_t count) {
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < count; ++i) zeros += a[i] == 0.0;
    return zeros * 4 >= count * 3;
}

// C[m x n] += A[m x k] * B[k x n], skipping zero entries of A.
inline void gemm_nn_sparse(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                           double* C) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* __restrict c0 = C + (i + 0) * n;
        double* __restrict c1 = C + (i + 1) * n;
        double* __restrict c2 = C + (i + 2) * n;
        double* __restrict c3 = C + (i + 3) * n;
        const double* a0 = A + (i + 0) * k;
        const double* a1 = A + (i + 1) * k;
        const double* a2 = A + (i + 2) * k;
        const double* a3 = A + (i + 3) * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
            if (x0 == 0.0 && x1 == 0.0 && x2 == 0.0 && x3 == 0.0) continue;
            const double* __restrict b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double bj = b[j];
                c0[j] += x0 * bj;
                c1[j] += x1 * bj;
                c2[j] += x2 * bj;
                c3[j] += x3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        double* __restrict c = C + i * n;
        const double* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double x = a[p];
            if (x == 0.0) continue;
            const double* __restrict b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += x * b[j];
        }
    }
}

// Out-of-place transpose of a rows x cols block.
inline void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
    constexpr std::size_t tile = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += tile) {
        const std::size_t r1 = std::min(rows, r0 + tile);
        for (std::size_t c0 = 0; c0 < cols; c0 += tile) {
            const std::size_t c1 = std::min(cols, c0 + tile);
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
        }
    }
}

// C[m x n] (+)= A[m x k] * B[k x n].
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                    double* C, bool accumulate) {
    const auto M = Eigen::Index(m), K = Eigen::Index(k), N = Eigen::Index(n);
    MatrixMap c(C, M, N);
    if (!accumulate) c.setZero();
    if (mostly_zero(A, m * k)) {
        gemm_nn_sparse(m, k, n, A, B, C);
        return;
    }
    c.noalias() += ConstMatrixMap(A, M, K) * ConstMatrixMap(B, K, N);
}

// C[m x n] (+)= A[m x k] * B^T where B is [n x k].
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                    double* C, bool accumulate) {
    const auto M = Eigen::Index(m), K = Eigen::Index(k), N = Eigen::Index(n);
    MatrixMap c(C, M, N);
    if (!accumulate) c.setZero();
    c.noalias() += ConstMatrixMap(A, M, K) * ConstMatrixMap(B, N, K).transpose();
}

// C[k x n] (+)= A^T * G where A is [m x k], G is [m x n].
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* G,
                    double* C, bool accumulate) {
    const auto M = Eigen::Index(m), K = Eigen::Index(k), N = Eigen::Index(n);
    MatrixMap c(C, K, N);
    if (!accumulate) c.setZero();
    if (mostly_zero(A, m * k)) {
        std::vector<double> at(m * k);
        transpose(m, k, A, at.data());
        gemm_nn_sparse(k, m, n, at.data(), G, C);
        return;
    }
    c.noalias() += ConstMatrixMap(A, M, K).transpose() * ConstMatrixMap(G, M, N);
}

}  // namespace kernel

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    Tensor c = Tensor::matrix(a.rows(), b.cols());
    kernel::gemm_nn(a.rows(), a.cols(), b.cols(), a.data(), b.data(), c.data(), false);
    return c;
}

inline Tensor transpose(const Tensor& a) {
    Tensor t = Tensor::matrix(a.cols(), a.rows());
    kernel::transpose(a.rows(), a.cols(), a.data(), t.data());
    return t;
}

}  // namespace sig
