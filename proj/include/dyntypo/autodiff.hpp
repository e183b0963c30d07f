#pragma once

// Reverse-mode automatic differentiation over dense rank-2 tensors.
//
// A Tape records nodes in creation order, which is a topological order, so
// the backward pass is a single reverse sweep. Every node owns its forward
// value; gradients are allocated lazily during the sweep. Composite kernels
// elsewhere in the library (rasterizer, mesh angles, image warps) register
// themselves as single fused nodes through Tape::record.

#include "dyntypo/error.hpp"
#include "dyntypo/rng.hpp"
#include "dyntypo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dyntypo::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    const Tensor& value() const;
    double item() const;
    std::size_t rows() const { return value().rows; }
    std::size_t cols() const { return value().cols; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Accumulates the node's upstream gradient into the gradients of its inputs.
using Backward = std::function<void(Tape&, std::size_t self)>;

struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) { return push(std::move(value), {}, {}, false); }
    Var constant(double v) { return constant(Tensor::scalar(v)); }
    Var variable(Tensor value) { return push(std::move(value), {}, {}, true); }

    /// Records a derived node. The backward closure is dropped when no input
    /// needs a gradient.
    Var record(Tensor value, std::span<const Var> inputs, Backward fn) {
        std::vector<std::size_t> ids;
        ids.reserve(inputs.size());
        bool needs = false;
        for (const Var& v : inputs) {
            check_owned(v);
            ids.push_back(v.id());
            needs = needs || nodes_[v.id()].requires_grad;
        }
        return push(std::move(value), std::move(ids), needs ? std::move(fn) : Backward{}, needs);
    }

    Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
        return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                      std::move(fn));
    }

    const Node& node(std::size_t id) const { return nodes_[id]; }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t next_id() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Upstream gradient of a node during the backward sweep.
    const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

    /// Gradient slot of an input, zero-allocated on first touch. Returns
    /// nullptr for nodes that do not need gradients.
    Tensor* grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows, n.value.cols);
        return &n.grad;
    }

    /// Reverse sweep from a scalar root.
    void backward(Var root, double seed = 1.0) {
        check_owned(root);
        if (consumed_) throw Error("tape already consumed by a previous backward pass");
        const Node& r = nodes_[root.id()];
        if (r.value.size() != 1) throw Error("backward root must be a scalar");
        consumed_ = true;
        if (!r.requires_grad) return;
        nodes_[root.id()].grad = Tensor::scalar(seed);
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.empty()) continue;
            n.backward(*this, i);
        }
    }

    /// Gradient accumulated for v by the last backward pass (zeros if none).
    Tensor gradient(Var v) const {
        const Node& n = nodes_[v.id()];
        if (n.grad.empty()) return Tensor(n.value.rows, n.value.cols);
        return n.grad;
    }

private:
    Var push(Tensor value, std::vector<std::size_t> inputs, Backward fn, bool needs) {
        if (consumed_) throw Error("tape already consumed; record on a fresh tape");
        nodes_.push_back(Node{std::move(value), {}, std::move(inputs), std::move(fn), needs});
        return Var(this, nodes_.size() - 1);
    }

    void check_owned(const Var& v) const {
        if (v.tape() != this) throw Error("variable belongs to a different tape");
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline double Var::item() const {
    const Tensor& t = value();
    if (t.size() != 1) throw Error("item() on a non-scalar variable");
    return t[0];
}

namespace detail {

struct Broadcast {
    std::size_t rows, cols;
    std::size_t ar, ac, br, bc;

    std::size_t a(std::size_t r, std::size_t c) const { return (ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c); }
    std::size_t b(std::size_t r, std::size_t c) const { return (br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c); }
};

inline Broadcast broadcast(const Tensor& a, const Tensor& b) {
    auto dim = [](std::size_t x, std::size_t y) {
        if (x == y || y == 1) return x;
        if (x == 1) return y;
        throw Error("incompatible shapes for broadcasting");
    };
    return Broadcast{dim(a.rows, b.rows), dim(a.cols, b.cols), a.rows, a.cols, b.rows, b.cols};
}

// f(x, y) -> z ; dfa/dfb(x, y, z) -> partial derivatives.
template <class F, class DA, class DB>
Var binary(Var a, Var b, F f, DA dfa, DB dfb) {
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast bc = broadcast(av, bv);
    Tensor out(bc.rows, bc.cols);
    for (std::size_t r = 0; r < bc.rows; ++r)
        for (std::size_t c = 0; c < bc.cols; ++c) out(r, c) = f(av[bc.a(r, c)], bv[bc.b(r, c)]);
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {a, b}, [ia, ib, bc, dfa, dfb](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        const Tensor& z = t.value(self);
        Tensor* ga = t.grad_slot(ia);
        Tensor* gb = t.grad_slot(ib);
        for (std::size_t r = 0; r < bc.rows; ++r)
            for (std::size_t c = 0; c < bc.cols; ++c) {
                const std::size_t o = r * bc.cols + c;
                const double xv = x[bc.a(r, c)], yv = y[bc.b(r, c)];
                if (ga) (*ga)[bc.a(r, c)] += g[o] * dfa(xv, yv, z[o]);
                if (gb) (*gb)[bc.b(r, c)] += g[o] * dfb(xv, yv, z[o]);
            }
    });
}

// f(x) -> y ; df(x, y) -> dy/dx.
template <class F, class D>
Var unary(Var a, F f, D df) {
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    Tensor out(av.rows, av.cols);
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    const std::size_t ia = a.id();
    return tape.record(std::move(out), {a}, [ia, df](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(self);
        Tensor* ga = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(x[i], y[i]);
    });
}

inline Var lift(const Var& like, double v) { return like.tape()->constant(v); }

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (with scalar / row / column broadcasting)

inline Var add(Var a, Var b) {
    return detail::binary(
        a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
    return detail::binary(
        a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
    return detail::binary(
        a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

inline Var div(Var a, Var b) {
    const Tensor& bv = b.value();
    if (std::any_of(bv.data.begin(), bv.data.end(), [](double v) { return v == 0.0; }))
        throw NumericError("division by zero", a.tape()->next_id());
    return detail::binary(
        a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

inline Var neg(Var a) {
    return detail::unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double b) { return add(a, detail::lift(a, b)); }
inline Var operator+(double a, Var b) { return add(detail::lift(b, a), b); }
inline Var operator-(Var a, double b) { return sub(a, detail::lift(a, b)); }
inline Var operator-(double a, Var b) { return sub(detail::lift(b, a), b); }
inline Var operator*(Var a, double b) { return mul(a, detail::lift(a, b)); }
inline Var operator*(double a, Var b) { return mul(detail::lift(b, a), b); }
inline Var operator/(Var a, double b) { return div(a, detail::lift(a, b)); }
inline Var operator/(double a, Var b) { return div(detail::lift(b, a), b); }

// ---------------------------------------------------------------------------
// Elementwise transcendental functions

inline Var sin(Var a) {
    return detail::unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

inline Var cos(Var a) {
    return detail::unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

inline Var exp(Var a) {
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
    const Tensor& v = a.value();
    if (std::any_of(v.data.begin(), v.data.end(), [](double x) { return !(x > 0.0); }))
        throw NumericError("log of non-positive value", a.tape()->next_id());
    return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(Var a) {
    const Tensor& v = a.value();
    if (std::any_of(v.data.begin(), v.data.end(), [](double x) { return !(x > 0.0); }))
        throw NumericError("sqrt of non-positive value (adjoint undefined)", a.tape()->next_id());
    return detail::unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var tanh(Var a) {
    return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

/// x^p for a constant exponent. Non-integer exponents require x > 0.
inline Var pow(Var a, double p) {
    const bool integral = std::floor(p) == p;
    const Tensor& v = a.value();
    if (!integral && std::any_of(v.data.begin(), v.data.end(), [](double x) { return !(x > 0.0); }))
        throw NumericError("non-integer power of non-positive value", a.tape()->next_id());
    if (p < 0.0 && std::any_of(v.data.begin(), v.data.end(), [](double x) { return x == 0.0; }))
        throw NumericError("negative power of zero", a.tape()->next_id());
    return detail::unary(
        a, [p](double x) { return std::pow(x, p); }, [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

/// Left argument wins ties.
inline Var min(Var a, Var b) {
    return detail::binary(
        a, b, [](double x, double y) { return x <= y ? x : y; },
        [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

/// Left argument wins ties.
inline Var max(Var a, Var b) {
    return detail::binary(
        a, b, [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

/// Gradient passes on [lo, hi] and is zero outside it.
inline Var clamp(Var a, double lo, double hi) {
    return detail::unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Var atan2(Var y, Var x) {
    const Tensor& yv = y.value();
    const Tensor& xv = x.value();
    if (yv.same_shape(xv))
        for (std::size_t i = 0; i < yv.size(); ++i)
            if (yv[i] == 0.0 && xv[i] == 0.0) throw NumericError("atan2 at the origin", y.tape()->next_id());
    return detail::binary(
        y, x, [](double a, double b) { return std::atan2(a, b); },
        [](double a, double b, double) { return b / (a * a + b * b); },
        [](double a, double b, double) { return -a / (a * a + b * b); });
}

/// Elementwise user function with its derivative.
inline Var map(Var a, std::function<double(double)> f, std::function<double(double)> df) {
    return detail::unary(a, f, [df](double x, double) { return df(x); });
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

inline Var matmul(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols != B.rows) throw Error("matmul shape mismatch");
    const std::size_t n = A.rows, k = A.cols, m = B.cols;
    Tensor out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* o = out.data.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A.data[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = B.data.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += aip * brow[j];
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
        const Tensor& G = t.upstream(self);
        const Tensor& A = t.value(ia);
        const Tensor& B = t.value(ib);
        if (Tensor* gA = t.grad_slot(ia)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double* g = G.data.data() + i * m;
                    const double* brow = B.data.data() + p * m;
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += g[j] * brow[j];
                    gA->data[i * k + p] += s;
                }
        }
        if (Tensor* gB = t.grad_slot(ib)) {
            for (std::size_t i = 0; i < n; ++i) {
                const double* g = G.data.data() + i * m;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A.data[i * k + p];
                    if (aip == 0.0) continue;
                    double* gb = gB->data.data() + p * m;
                    for (std::size_t j = 0; j < m; ++j) gb[j] += aip * g[j];
                }
            }
        }
    });
}

inline Var sum(Var a) {
    const Tensor& v = a.value();
    const double s = std::accumulate(v.data.begin(), v.data.end(), 0.0);
    const std::size_t ia = a.id();
    return a.tape()->record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
        const double g = t.upstream(self)[0];
        Tensor* ga = t.grad_slot(ia);
        for (double& x : ga->data) x += g;
    });
}

inline Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw Error("mean of empty tensor");
    return sum(a) * (1.0 / static_cast<double>(n));
}

/// sum over all entries of a ⊙ a.
inline Var sum_squares(Var a) {
    const Tensor& v = a.value();
    double s = 0.0;
    for (double x : v.data) s += x * x;
    const std::size_t ia = a.id();
    return a.tape()->record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
        const double g = t.upstream(self)[0];
        const Tensor& x = t.value(ia);
        Tensor* ga = t.grad_slot(ia);
        for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += 2.0 * g * x[i];
    });
}

// ---------------------------------------------------------------------------
// Structural operations

inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
    const Tensor& v = a.value();
    if (rows * cols != v.size()) throw Error("reshape size mismatch");
    const std::size_t ia = a.id();
    return a.tape()->record(Tensor(rows, cols, v.data), {a}, [ia](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Tensor* ga = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    });
}

/// Rows [begin, begin + count).
inline Var slice_rows(Var a, std::size_t begin, std::size_t count) {
    const Tensor& v = a.value();
    if (begin + count > v.rows) throw Error("slice_rows out of range");
    const std::size_t c = v.cols;
    Tensor out(count, c,
               std::vector<double>(v.data.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                   v.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * c)));
    const std::size_t ia = a.id();
    return a.tape()->record(std::move(out), {a}, [ia, begin, c](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Tensor* ga = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[begin * c + i] += g[i];
    });
}

inline Var column(Var a, std::size_t j) {
    const Tensor& v = a.value();
    if (j >= v.cols) throw Error("column out of range");
    Tensor out(v.rows, 1);
    for (std::size_t r = 0; r < v.rows; ++r) out[r] = v(r, j);
    const std::size_t ia = a.id(), cols = v.cols;
    return a.tape()->record(std::move(out), {a}, [ia, j, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Tensor* ga = t.grad_slot(ia);
        for (std::size_t r = 0; r < g.size(); ++r) (*ga)[r * cols + j] += g[r];
    });
}

inline Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_rows of nothing");
    const std::size_t c = parts[0].cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != c) throw Error("concat_rows column mismatch");
        rows += p.rows();
    }
    Tensor out(rows, c);
    std::vector<std::size_t> ids, offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
        ids.push_back(p.id());
        offsets.push_back(off);
        off += p.value().size();
    }
    return parts[0].tape()->record(std::move(out), parts, [ids, offsets](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            Tensor* gp = t.grad_slot(ids[k]);
            if (!gp) continue;
            for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += g[offsets[k] + i];
        }
    });
}

inline Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_cols of nothing");
    const std::size_t r = parts[0].rows();
    std::size_t cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != r) throw Error("concat_cols row mismatch");
        cols += p.cols();
    }
    Tensor out(r, cols);
    std::vector<std::size_t> ids, offsets, widths;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < v.cols; ++j) out(i, off + j) = v(i, j);
        ids.push_back(p.id());
        offsets.push_back(off);
        widths.push_back(v.cols);
        off += v.cols;
    }
    return parts[0].tape()->record(std::move(out), parts, [ids, offsets, widths, r, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            Tensor* gp = t.grad_slot(ids[k]);
            if (!gp) continue;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < widths[k]; ++j) (*gp)(i, j) += g[i * cols + offsets[k] + j];
        }
    });
}

inline Var concat_rows(std::initializer_list<Var> parts) { return concat_rows(std::span<const Var>(parts.begin(), parts.size())); }
inline Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::span<const Var>(parts.begin(), parts.size())); }

/// out[r] = a[index[r]]; indices may repeat.
inline Var gather_rows(Var a, std::vector<std::size_t> index) {
    const Tensor& v = a.value();
    const std::size_t c = v.cols;
    Tensor out(index.size(), c);
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= v.rows) throw Error("gather_rows index out of range");
        for (std::size_t j = 0; j < c; ++j) out(r, j) = v(index[r], j);
    }
    const std::size_t ia = a.id();
    return a.tape()->record(std::move(out), {a}, [ia, c, index = std::move(index)](Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Tensor* ga = t.grad_slot(ia);
        for (std::size_t r = 0; r < index.size(); ++r)
            for (std::size_t j = 0; j < c; ++j) (*ga)(index[r], j) += g[r * c + j];
    });
}

/// Stacks `times` copies of a vertically.
inline Var tile_rows(Var a, std::size_t times) {
    std::vector<std::size_t> idx;
    idx.reserve(a.rows() * times);
    for (std::size_t k = 0; k < times; ++k)
        for (std::size_t r = 0; r < a.rows(); ++r) idx.push_back(r);
    return gather_rows(a, std::move(idx));
}

/// Repeats each row `times` times consecutively.
inline Var repeat_each_row(Var a, std::size_t times) {
    std::vector<std::size_t> idx;
    idx.reserve(a.rows() * times);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t k = 0; k < times; ++k) idx.push_back(r);
    return gather_rows(a, std::move(idx));
}

// ---------------------------------------------------------------------------
// Gradient helpers

/// Runs backward from scalar f and returns d f / d param for each param.
inline std::vector<Tensor> grad(Var f, std::span<const Var> params) {
    if (f.value().size() != 1) throw Error("grad: function value is not a scalar");
    f.tape()->backward(f);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Var& p : params) out.push_back(f.tape()->gradient(p));
    return out;
}

inline std::vector<Tensor> grad(Var f, std::initializer_list<Var> params) {
    return grad(f, std::span<const Var>(params.begin(), params.size()));
}

/// A scalar function of a list of tensors, built on the supplied tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};

/// Central finite differences on up to `max_coords` seeded coordinates
/// against the tape gradient. Relative error uses max(|a|, |b|, 1e-8).
inline GradCheckReport finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps,
                                         std::uint64_t seed = 0, std::size_t max_coords = 64) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& p : params) vars.push_back(tape.variable(p));
        Var y = f(tape, vars);
        analytic = grad(y, vars);
    }
    auto eval = [&](const std::vector<Tensor>& ps) {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& p : ps) vars.push_back(tape.constant(p));
        return f(tape, vars).item();
    };

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < params[k].size(); ++i) coords.emplace_back(k, i);
    if (coords.size() > max_coords) {
        Rng rng(seed);
        for (std::size_t i = 0; i < max_coords; ++i) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                    static_cast<std::int64_t>(coords.size() - 1)));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(max_coords);
    }

    GradCheckReport report;
    std::vector<Tensor> work = params;
    for (auto [k, i] : coords) {
        const double x0 = work[k][i];
        work[k][i] = x0 + eps;
        const double fp = eval(work);
        work[k][i] = x0 - eps;
        const double fm = eval(work);
        work[k][i] = x0;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[k][i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
        ++report.coords_checked;
    }
    return report;
}

} // namespace dyntypo::ad
