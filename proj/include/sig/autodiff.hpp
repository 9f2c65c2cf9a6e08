#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Tape owns every intermediate produced during one forward pass. Nodes are
// appended in evaluation order, so walking them backwards is a valid
// topological order. Parameters enter the tape without copying; their
// gradients are added into the owning ParameterSet slot when backward runs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sig/tensor.hpp"

namespace sig::ad {

class Tape;

class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;
    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() { tune_allocator(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor v) { return push(std::move(v), nullptr, false, nullptr, nullptr); }

    // Leaf whose gradient is read back with grad() after backward().
    Var variable(Tensor v) { return push(std::move(v), nullptr, true, nullptr, nullptr); }

    // Leaf aliasing an externally owned tensor; gradient is added to `sink`.
    Var parameter(const Tensor& value, Tensor& sink) {
        if (!value.same_shape(sink)) {
            throw DimensionError("parameter: gradient shape " + shape_str(sink.shape()) +
                                 " differs from value " + shape_str(value.shape()));
        }
        return push(Tensor{}, &value, true, &sink, nullptr);
    }

    Var record(Tensor value, std::initializer_list<Var> parents, Backward fn) {
        bool rg = false;
        for (const Var& p : parents) {
            if (p.tape_ != this) throw std::logic_error("record: operand from a different tape");
            rg = rg || nodes_[p.id_].requires_grad;
        }
        return push(std::move(value), nullptr, rg, nullptr, rg ? std::move(fn) : Backward{});
    }

    Var record(Tensor value, const std::vector<Var>& parents, Backward fn) {
        bool rg = false;
        for (const Var& p : parents) {
            if (p.tape_ != this) throw std::logic_error("record: operand from a different tape");
            rg = rg || nodes_[p.id_].requires_grad;
        }
        return push(std::move(value), nullptr, rg, nullptr, rg ? std::move(fn) : Backward{});
    }

    void backward(const Var& loss) {
        if (loss.tape_ != this) throw std::logic_error("backward: loss from a different tape");
        const Tensor& lv = value(loss.id_);
        if (lv.size() != 1) {
            throw DimensionError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
        }
        for (Node& n : nodes_) {
            n.has_grad = false;
            n.grad = Tensor{};
        }
        if (!nodes_[loss.id_].requires_grad) return;
        grad_ref(loss.id_).fill(1.0);
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.has_grad) continue;
            if (n.backward) n.backward(*this, i);
            if (n.sink) {
                double* dst = n.sink->data();
                const double* src = n.grad.data();
                for (std::size_t j = 0; j < n.grad.size(); ++j) dst[j] += src[j];
            }
        }
    }

    const Tensor& value(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.external ? *n.external : n.value;
    }

    // Gradient of node `id` from the last backward(); zeros if it received none.
    Tensor grad(std::size_t id) const {
        const Node& n = nodes_[id];
        if (n.has_grad) return n.grad;
        return Tensor(value(id).shape(), 0.0);
    }

    const Tensor& grad_of_self(std::size_t id) const { return nodes_[id].grad; }

    Tensor& grad_ref(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            n.grad = Tensor(value(id).shape(), 0.0);
            n.has_grad = true;
        }
        return n.grad;
    }

    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Tensor* sink = nullptr;
        Backward backward;
    };

    Var push(Tensor v, const Tensor* external, bool rg, Tensor* sink, Backward fn) {
        Node n;
        n.value = std::move(v);
        n.external = external;
        n.requires_grad = rg;
        n.sink = sink;
        n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline Tape& tape_of(const Var& a, const Var& b) {
    if (&a.tape() != &b.tape()) throw std::logic_error("operands live on different tapes");
    return a.tape();
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

inline void axpy(double s, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

}  // namespace detail

inline constexpr double kLayerNormVarianceFloor = 1e-6;
inline constexpr double kProbabilityClamp = 1e-7;

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    Tape& t = detail::tape_of(a, b);
    Tensor out = sig::matmul(a.value(), b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        const Tensor& A = t.value(ia);
        const Tensor& B = t.value(ib);
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        if (t.requires_grad(ia)) kernel::gemm_nt(m, n, k, g.data(), B.data(), t.grad_ref(ia).data(), true);
        if (t.requires_grad(ib)) kernel::gemm_tn(m, k, n, A.data(), g.data(), t.grad_ref(ib).data(), true);
    });
}

inline Var transpose(const Var& a) {
    Tensor out = sig::transpose(a.value());
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        Tensor& ga = t.grad_ref(ia);
        const std::size_t r = t.value(ia).rows(), c = t.value(ia).cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
}

inline Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        detail::axpy(1.0, t.grad_of_self(self).values(), t.grad_ref(ia).values());
    });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    Tape& t = detail::tape_of(a, b);
    detail::require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    detail::axpy(1.0, b.value().values(), out.values());
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        if (t.requires_grad(ia)) detail::axpy(1.0, g.values(), t.grad_ref(ia).values());
        if (t.requires_grad(ib)) detail::axpy(1.0, g.values(), t.grad_ref(ib).values());
    });
}

inline Var sub(const Var& a, const Var& b) {
    Tape& t = detail::tape_of(a, b);
    detail::require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    detail::axpy(-1.0, b.value().values(), out.values());
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        if (t.requires_grad(ia)) detail::axpy(1.0, g.values(), t.grad_ref(ia).values());
        if (t.requires_grad(ib)) detail::axpy(-1.0, g.values(), t.grad_ref(ib).values());
    });
}

inline Var mul(const Var& a, const Var& b) {
    Tape& t = detail::tape_of(a, b);
    detail::require_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        if (t.requires_grad(ia)) {
            Tensor& ga = t.grad_ref(ia);
            const Tensor& B = t.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (t.requires_grad(ib)) {
            Tensor& gb = t.grad_ref(ib);
            const Tensor& A = t.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
        }
    });
}

// Elementwise product with a constant tensor (masks).
inline Var mul_const(const Var& a, const Tensor& m) {
    if (m.size() != a.value().size()) {
        throw DimensionError("mul_const: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(m.shape()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, m](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        Tensor& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m[i];
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (double& x : out.values()) x *= s;
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
        detail::axpy(s, t.grad_of_self(self).values(), t.grad_ref(ia).values());
    });
}

// a[i, :] + r for every row i.
inline Var add_row(const Var& a, const Var& r) {
    Tape& t = detail::tape_of(a, r);
    const std::size_t rows = a.rows(), cols = a.cols();
    if (r.value().size() != cols) {
        throw DimensionError("add_row: row " + shape_str(r.shape()) + " does not match " + shape_str(a.shape()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < rows; ++i) detail::axpy(1.0, r.value().values(), out.row(i));
    const std::size_t ia = a.id(), ir = r.id();
    return t.record(std::move(out), {a, r}, [ia, ir, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        if (t.requires_grad(ia)) detail::axpy(1.0, g.values(), t.grad_ref(ia).values());
        if (t.requires_grad(ir)) {
            Tensor& gr = t.grad_ref(ir);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) gr[j] += g[i * cols + j];
        }
    });
}

// a[i, j] * r[j].
inline Var mul_row(const Var& a, const Var& r) {
    Tape& t = detail::tape_of(a, r);
    const std::size_t rows = a.rows(), cols = a.cols();
    if (r.value().size() != cols) {
        throw DimensionError("mul_row: row " + shape_str(r.shape()) + " does not match " + shape_str(a.shape()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] *= r.value()[j];
    const std::size_t ia = a.id(), ir = r.id();
    return t.record(std::move(out), {a, r}, [ia, ir, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        if (t.requires_grad(ia)) {
            Tensor& ga = t.grad_ref(ia);
            const Tensor& R = t.value(ir);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[i * cols + j] * R[j];
        }
        if (t.requires_grad(ir)) {
            Tensor& gr = t.grad_ref(ir);
            const Tensor& A = t.value(ia);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) gr[j] += g[i * cols + j] * A[i * cols + j];
        }
    });
}

inline double sigmoid_scalar(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (double& x : out.values()) x = sigmoid_scalar(x);
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

// Exact (erf) form.
inline Var gelu(const Var& a) {
    Tensor out = a.value();
    for (double& x : out.values()) x = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        const Tensor& x = t.value(ia);
        Tensor& ga = t.grad_ref(ia);
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double xi = x[i];
            const double cdf = 0.5 * (1.0 + std::erf(xi * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
            ga[i] += g[i] * (cdf + xi * pdf);
        }
    });
}

// ---------------------------------------------------------------------------
// Shape plumbing and reductions
// ---------------------------------------------------------------------------

// Concatenation. All rank<=1 inputs concatenate into a vector; otherwise
// rank-2 operands are joined along `axis` (0 = rows, 1 = columns).
inline Var concat(const std::vector<Var>& parts, int axis = 1) {
    if (parts.empty()) throw DimensionError("concat: no operands");
    Tape& t = parts.front().tape();
    bool all_vectors = true;
    for (const Var& p : parts) all_vectors = all_vectors && p.value().rank() <= 1;

    std::vector<std::size_t> ids;
    for (const Var& p : parts) ids.push_back(p.id());

    if (all_vectors || axis == 0) {
        const std::size_t cols = parts.front().cols();
        std::size_t total = 0;
        std::vector<double> v;
        for (const Var& p : parts) {
            if (!all_vectors && p.cols() != cols) {
                throw DimensionError("concat(axis=0): column mismatch " + shape_str(parts.front().shape()) +
                                     " vs " + shape_str(p.shape()));
            }
            total += all_vectors ? p.value().size() : p.rows();
            v.insert(v.end(), p.value().values().begin(), p.value().values().end());
        }
        Tensor out = all_vectors ? Tensor::vector(std::move(v)) : Tensor(Shape{total, cols}, std::move(v));
        return t.record(std::move(out), parts, [ids](Tape& t, std::size_t self) {
            const Tensor& g = t.grad_of_self(self);
            std::size_t off = 0;
            for (std::size_t id : ids) {
                const std::size_t n = t.value(id).size();
                if (t.requires_grad(id)) {
                    Tensor& gi = t.grad_ref(id);
                    for (std::size_t j = 0; j < n; ++j) gi[j] += g[off + j];
                }
                off += n;
            }
        });
    }

    const std::size_t rows = parts.front().rows();
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) {
            throw DimensionError("concat(axis=1): row mismatch " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(p.shape()));
        }
        total += p.cols();
    }
    Tensor out = Tensor::matrix(rows, total);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const std::size_t c = p.cols();
        for (std::size_t i = 0; i < rows; ++i)
            std::copy_n(p.value().data() + i * c, c, out.data() + i * total + off);
        off += c;
    }
    return t.record(std::move(out), parts, [ids, rows, total](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        std::size_t off = 0;
        for (std::size_t id : ids) {
            const std::size_t c = t.value(id).cols();
            if (t.requires_grad(id)) {
                Tensor& gi = t.grad_ref(id);
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += g[i * total + off + j];
            }
            off += c;
        }
    });
}

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double x : a.value().values()) s += x;
    const std::size_t ia = a.id();
    return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
        const double g = t.grad_of_self(self)[0];
        for (double& x : t.grad_ref(ia).values()) x += g;
    });
}

// Mean along an axis of a matrix (axis 0 averages rows into one row, axis 1
// averages each row). The reduced axis is dropped from the shape.
inline Var mean(const Var& a, int axis) {
    const Tensor& v = a.value();
    const std::size_t rows = v.rows(), cols = v.cols();
    if (v.rank() < 1 || (axis != 0 && axis != 1) || (v.rank() == 1 && axis != 0)) {
        throw DimensionError("mean: invalid axis " + std::to_string(axis) + " for " + shape_str(v.shape()));
    }
    const std::size_t ia = a.id();
    if (v.rank() == 1) {
        double s = 0.0;
        for (double x : v.values()) s += x;
        return a.tape().record(Tensor::scalar(s / double(cols)), {a}, [ia, cols](Tape& t, std::size_t self) {
            const double g = t.grad_of_self(self)[0] / double(cols);
            for (double& x : t.grad_ref(ia).values()) x += g;
        });
    }
    if (axis == 0) {
        std::vector<double> out(cols, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out[j] += v(i, j);
        for (double& x : out) x /= double(rows);
        return a.tape().record(Tensor::vector(std::move(out)), {a}, [ia, rows, cols](Tape& t, std::size_t self) {
            const Tensor& g = t.grad_of_self(self);
            Tensor& ga = t.grad_ref(ia);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[j] / double(rows);
        });
    }
    std::vector<double> out(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out[i] += v(i, j);
        out[i] /= double(cols);
    }
    return a.tape().record(Tensor::vector(std::move(out)), {a}, [ia, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        Tensor& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[i] / double(cols);
    });
}

// Row-wise normalization to zero mean / unit variance (no affine part).
inline Var layer_norm(const Var& a) {
    const Tensor& x = a.value();
    const std::size_t rows = x.rows(), cols = x.cols();
    Tensor out(x.shape(), 0.0);
    std::vector<double> inv_std(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto r = x.row(i);
        double mu = 0.0;
        for (double v : r) mu += v;
        mu /= double(cols);
        double var = 0.0;
        for (double v : r) var += (v - mu) * (v - mu);
        var /= double(cols);
        inv_std[i] = 1.0 / std::sqrt(var + kLayerNormVarianceFloor);
        auto o = out.row(i);
        for (std::size_t j = 0; j < cols; ++j) o[j] = (r[j] - mu) * inv_std[i];
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia, rows, cols, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad_of_self(self);
                               const Tensor& y = t.value(self);
                               Tensor& ga = t.grad_ref(ia);
                               for (std::size_t i = 0; i < rows; ++i) {
                                   const double* gi = g.data() + i * cols;
                                   const double* yi = y.data() + i * cols;
                                   double mg = 0.0, mgy = 0.0;
                                   for (std::size_t j = 0; j < cols; ++j) {
                                       mg += gi[j];
                                       mgy += gi[j] * yi[j];
                                   }
                                   mg /= double(cols);
                                   mgy /= double(cols);
                                   double* o = ga.data() + i * cols;
                                   for (std::size_t j = 0; j < cols; ++j)
                                       o[j] += inv_std[i] * (gi[j] - mg - yi[j] * mgy);
                               }
                           });
}

// Row-wise softmax; positions with mask==0 get probability exactly 0. A row
// with no live positions yields all zeros. `mask` may be empty (all live).
inline Var masked_softmax(const Var& a, const std::vector<std::uint8_t>& mask) {
    const Tensor& x = a.value();
    const std::size_t rows = x.rows(), cols = x.cols();
    if (!mask.empty() && mask.size() != x.size()) {
        throw DimensionError("masked_softmax: mask size " + std::to_string(mask.size()) + " vs " +
                             shape_str(x.shape()));
    }
    Tensor out(x.shape(), 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cols; ++j)
            if (mask.empty() || mask[i * cols + j]) mx = std::max(mx, x(i, j));
        if (!std::isfinite(mx)) continue;
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            if (!mask.empty() && !mask[i * cols + j]) continue;
            const double e = std::exp(x(i, j) - mx);
            out(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < cols; ++j) out(i, j) /= z;
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * y[i * cols + j];
            for (std::size_t j = 0; j < cols; ++j)
                ga[i * cols + j] += y[i * cols + j] * (g[i * cols + j] - dot);
        }
    });
}

// Softmax along `axis` (last axis for vectors; 0 or 1 for matrices).
inline Var softmax(const Var& a, int axis = -1) {
    const std::size_t rank = a.value().rank();
    if (rank == 0) throw DimensionError("softmax: scalar has no axis");
    if (axis < 0) axis += int(rank);
    if (axis < 0 || axis >= int(rank)) {
        throw DimensionError("softmax: invalid axis for " + shape_str(a.shape()));
    }
    if (rank == 2 && axis == 0) return transpose(masked_softmax(transpose(a), {}));
    return masked_softmax(a, {});
}

// Per-row renormalisation of a nonnegative matrix restricted to a 0/1 mask:
// out = a*m / sum(a*m). Rows whose masked sum is zero become zeros.
inline Var masked_renormalize(const Var& a, const std::vector<std::uint8_t>& mask) {
    const Tensor& x = a.value();
    const std::size_t rows = x.rows(), cols = x.cols();
    if (mask.size() != x.size()) throw DimensionError("masked_renormalize: mask size mismatch");
    Tensor out(x.shape(), 0.0);
    std::vector<double> totals(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
            if (mask[i * cols + j]) s += x(i, j);
        totals[i] = s;
        if (s == 0.0) continue;
        for (std::size_t j = 0; j < cols; ++j)
            if (mask[i * cols + j]) out(i, j) = x(i, j) / s;
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a},
                           [ia, rows, cols, mask, totals = std::move(totals)](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad_of_self(self);
                               const Tensor& y = t.value(self);
                               Tensor& ga = t.grad_ref(ia);
                               for (std::size_t i = 0; i < rows; ++i) {
                                   if (totals[i] == 0.0) continue;
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * y[i * cols + j];
                                   for (std::size_t j = 0; j < cols; ++j) {
                                       if (!mask[i * cols + j]) continue;
                                       ga[i * cols + j] += (g[i * cols + j] - dot) / totals[i];
                                   }
                               }
                           });
}

// Mean binary cross-entropy of probabilities `p` (any shape) against 0/1
// labels. Probabilities are clamped to [eps, 1-eps]; the clamp has zero slope.
inline Var binary_cross_entropy(const Var& p, const std::vector<double>& labels) {
    const Tensor& x = p.value();
    if (labels.size() != x.size()) {
        throw DimensionError("binary_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             shape_str(x.shape()));
    }
    const double n = double(x.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double q = std::clamp(x[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
        loss -= labels[i] * std::log(q) + (1.0 - labels[i]) * std::log(1.0 - q);
    }
    const std::size_t ip = p.id();
    return p.tape().record(Tensor::scalar(loss / n), {p}, [ip, labels, n](Tape& t, std::size_t self) {
        const double g = t.grad_of_self(self)[0];
        const Tensor& x = t.value(ip);
        Tensor& gp = t.grad_ref(ip);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double q = x[i];
            if (q <= kProbabilityClamp || q >= 1.0 - kProbabilityClamp) continue;
            gp[i] -= g / n * (labels[i] / q - (1.0 - labels[i]) / (1.0 - q));
        }
    });
}

// ---------------------------------------------------------------------------
// Block operations over stacked fixed-length sequences. A "block" is `len`
// consecutive rows of a matrix holding many sequences end to end.
// ---------------------------------------------------------------------------

// [S*r x c] -> [S*c x r], transposing each r x c block independently.
inline Var block_transpose(const Var& a, std::size_t r) {
    const Tensor& x = a.value();
    const std::size_t c = x.cols();
    if (r == 0 || x.rows() % r != 0) {
        throw DimensionError("block_transpose: " + std::to_string(x.rows()) + " rows not divisible by " +
                             std::to_string(r));
    }
    const std::size_t blocks = x.rows() / r;
    Tensor out = Tensor::matrix(blocks * c, r);
    for (std::size_t b = 0; b < blocks; ++b) kernel::transpose(r, c, x.data() + b * r * c, out.data() + b * r * c);
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, r, c, blocks](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        Tensor& ga = t.grad_ref(ia);
        for (std::size_t b = 0; b < blocks; ++b) {
            const double* gb = g.data() + b * r * c;
            double* o = ga.data() + b * r * c;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) o[i * c + j] += gb[j * r + i];
        }
    });
}

inline Var gather_rows(const Var& a, const std::vector<std::size_t>& idx) {
    const Tensor& x = a.value();
    const std::size_t c = x.cols();
    if (idx.empty()) throw DimensionError("gather_rows: empty index");
    Tensor out = Tensor::matrix(idx.size(), c);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.rows()) throw DimensionError("gather_rows: index out of range");
        std::copy_n(x.data() + idx[i] * c, c, out.data() + i * c);
    }
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, idx, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        Tensor& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) ga[idx[i] * c + j] += g[i * c + j];
    });
}

// out[p, :] = sum_n w[p, n] * x[block[p]*len + n, :]
inline Var block_weighted_sum(const Var& x, const Var& w, const std::vector<std::size_t>& block, std::size_t len) {
    Tape& t = detail::tape_of(x, w);
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    const std::size_t h = X.cols(), p = W.rows();
    if (W.cols() != len || block.size() != p || X.rows() % len != 0) {
        throw DimensionError("block_weighted_sum: weights " + shape_str(W.shape()) + " / rows " +
                             shape_str(X.shape()) + " / len " + std::to_string(len));
    }
    Tensor out = Tensor::matrix(p, h);
    for (std::size_t i = 0; i < p; ++i) {
        if ((block[i] + 1) * len > X.rows()) throw DimensionError("block_weighted_sum: block out of range");
        auto o = out.row(i);
        for (std::size_t n = 0; n < len; ++n) {
            const double wn = W(i, n);
            if (wn == 0.0) continue;
            detail::axpy(wn, X.row(block[i] * len + n), o);
        }
    }
    const std::size_t ix = x.id(), iw = w.id();
    return t.record(std::move(out), {x, w}, [ix, iw, block, len, h, p](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        const Tensor& X = t.value(ix);
        const Tensor& W = t.value(iw);
        if (t.requires_grad(ix)) {
            Tensor& gx = t.grad_ref(ix);
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t n = 0; n < len; ++n) {
                    const double wn = W(i, n);
                    if (wn == 0.0) continue;
                    detail::axpy(wn, g.row(i), gx.row(block[i] * len + n));
                }
        }
        if (t.requires_grad(iw)) {
            Tensor& gw = t.grad_ref(iw);
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t n = 0; n < len; ++n) {
                    const double* xr = X.data() + (block[i] * len + n) * h;
                    const double* gr = g.data() + i * h;
                    double s = 0.0;
                    for (std::size_t j = 0; j < h; ++j) s += xr[j] * gr[j];
                    gw[i * len + n] += s;
                }
        }
    });
}

// out[p, n] = q[p, :] . k[block[p]*len + n, :]
inline Var pair_logits(const Var& q, const Var& k, const std::vector<std::size_t>& block, std::size_t len) {
    Tape& t = detail::tape_of(q, k);
    const Tensor& Q = q.value();
    const Tensor& K = k.value();
    const std::size_t h = Q.cols(), p = Q.rows();
    if (K.cols() != h || block.size() != p || K.rows() % len != 0) {
        throw DimensionError("pair_logits: queries " + shape_str(Q.shape()) + " vs keys " + shape_str(K.shape()));
    }
    Tensor out = Tensor::matrix(p, len);
    for (std::size_t i = 0; i < p; ++i) {
        if ((block[i] + 1) * len > K.rows()) throw DimensionError("pair_logits: block out of range");
        const double* qi = Q.data() + i * h;
        for (std::size_t n = 0; n < len; ++n) {
            const double* kr = K.data() + (block[i] * len + n) * h;
            double s = 0.0;
            for (std::size_t j = 0; j < h; ++j) s += qi[j] * kr[j];
            out(i, n) = s;
        }
    }
    const std::size_t iq = q.id(), ik = k.id();
    return t.record(std::move(out), {q, k}, [iq, ik, block, len, h, p](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of_self(self);
        const Tensor& Q = t.value(iq);
        const Tensor& K = t.value(ik);
        const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik);
        Tensor* dq = gq ? &t.grad_ref(iq) : nullptr;
        Tensor* dk = gk ? &t.grad_ref(ik) : nullptr;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t n = 0; n < len; ++n) {
                const double gn = g(i, n);
                if (gn == 0.0) continue;
                const std::size_t r = block[i] * len + n;
                if (gq) detail::axpy(gn, K.row(r), dq->row(i));
                if (gk) detail::axpy(gn, Q.row(i), dk->row(r));
            }
    });
}

}  // namespace sig::ad

namespace sig {

// Value-level conveniences over the differentiable kernels.

inline Tensor softmax(const Tensor& x, int axis = -1) {
    ad::Tape t;
    return ad::softmax(t.constant(x), axis).value();
}

inline std::vector<double> softmax(std::span<const double> x) {
    if (x.empty()) throw DimensionError("softmax: empty axis");
    const Tensor y = softmax(Tensor::vector({x.begin(), x.end()}));
    return {y.values().begin(), y.values().end()};
}

inline Tensor sigmoid(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.values()) v = ad::sigmoid_scalar(v);
    return y;
}

inline Tensor mean(const Tensor& x, int axis) {
    ad::Tape t;
    return ad::mean(t.constant(x), axis).value();
}

inline Tensor layer_norm(const Tensor& x) {
    ad::Tape t;
    return ad::layer_norm(t.constant(x)).value();
}

inline Tensor gelu(const Tensor& x) {
    ad::Tape t;
    return ad::gelu(t.constant(x)).value();
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis = 1) {
    ad::Tape t;
    std::vector<ad::Var> vs;
    for (const Tensor& p : parts) vs.push_back(t.constant(p));
    return ad::concat(vs, axis).value();
}

}  // namespace sig
