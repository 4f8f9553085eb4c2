#pragma once

// Dense 64-bit tensors with reverse-mode gradients. Operations record a
// computation graph (shared_ptr-linked nodes); backward() runs a topological
// sweep from a scalar loss. Recording can be switched off for inference-only
// evaluation (NoGradGuard).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "resgen/errors.hpp"
#include "resgen/matrix.hpp"

namespace resgen {

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated on demand, same size as values
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t size() const { return values.size(); }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

// out[m x n] += (accumulate) A[m x k] * B[k x n], optional transposes.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* out, bool accumulate) {
    if (!accumulate) std::fill(out, out + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double av = trans_a ? a[p * m + i] : a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = trans_b ? nullptr : b + p * n;
            double* orow = out + i * n;
            if (!trans_b) {
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * b[j * k + p];
            }
        }
    }
}

}  // namespace detail

/// Disables computation-graph recording for its lifetime (current thread).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape) {
        return make(std::move(shape), {}, false);
    }
    static Tensor scalar(double v) { return make({1, 1}, {v}, false); }
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
        return make(std::move(shape), std::move(values), false);
    }
    static Tensor from(const Matrix& m) {
        return make({m.rows(), m.cols()}, m.data(), false);
    }
    /// Trainable leaf: participates in backward().
    static Tensor param(std::vector<std::size_t> shape, std::vector<double> values) {
        return make(std::move(shape), std::move(values), true);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<std::size_t>& shape() const { return node().shape; }
    std::size_t size() const { return node().values.size(); }
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }
    bool requires_grad() const { return node().requires_grad; }

    const std::vector<double>& values() const { return node().values; }
    std::vector<double>& mutable_values() { return node().values; }

    const std::vector<double>& grad() const {
        const auto& nd = node();
        if (nd.grad.size() != nd.values.size())
            throw DomainError("tensor has no gradient (backward not run)");
        return nd.grad;
    }
    void zero_grad() {
        auto& nd = node();
        nd.grad.assign(nd.values.size(), 0.0);
    }

    double item() const {
        if (size() != 1) throw ShapeError("item(): tensor is not a scalar");
        return node().values[0];
    }

    double at(std::size_t i, std::size_t j) const {
        return node().values[i * cols() + j];
    }

    /// Reverse-mode sweep from this scalar; accumulates into leaf grads.
    void backward() const {
        if (size() != 1) throw ShapeError("backward(): loss must be a scalar");
        auto* root = n_.get();
        if (!root->requires_grad) return;
        std::vector<detail::TensorNode*> order;
        std::unordered_set<detail::TensorNode*> seen;
        std::vector<std::pair<detail::TensorNode*, std::size_t>> stack{{root, 0}};
        seen.insert(root);
        while (!stack.empty()) {
            auto& [nd, next] = stack.back();
            if (next < nd->parents.size()) {
                detail::TensorNode* p = nd->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(nd);
                stack.pop_back();
            }
        }
        for (auto* nd : order) nd->ensure_grad();
        root->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward_fn) (*it)->backward_fn(**it);
        }
    }

    detail::TensorNode& node() const {
        if (!n_) throw DomainError("use of an empty tensor");
        return *n_;
    }
    const std::shared_ptr<detail::TensorNode>& handle() const { return n_; }

    static Tensor make(std::vector<std::size_t> shape, std::vector<double> values,
                       bool requires_grad) {
        std::size_t total = 1;
        for (auto d : shape) total *= d;
        auto nd = std::make_shared<detail::TensorNode>();
        if (values.empty()) values.assign(total, 0.0);
        if (values.size() != total)
            throw ShapeError("tensor: value count does not match shape");
        nd->shape = std::move(shape);
        nd->values = std::move(values);
        nd->requires_grad = requires_grad;
        Tensor t;
        t.n_ = std::move(nd);
        return t;
    }

private:
    std::size_t dim(std::size_t i) const {
        const auto& s = node().shape;
        if (s.size() == 1) return i == 0 ? s[0] : 1;
        if (i >= s.size()) throw ShapeError("tensor: dimension index out of range");
        return s[i];
    }

    std::shared_ptr<detail::TensorNode> n_;
};

namespace detail {

inline Tensor op_result(std::vector<std::size_t> shape, std::vector<double> values,
                        std::vector<Tensor> inputs,
                        std::function<void(TensorNode&)> backward_fn) {
    bool needs = false;
    if (grad_mode())
        for (const auto& in : inputs)
            if (in.requires_grad()) needs = true;
    Tensor out = Tensor::make(std::move(shape), std::move(values), needs);
    if (needs) {
        auto& nd = out.node();
        for (const auto& in : inputs) nd.parents.push_back(in.handle());
        nd.backward_fn = std::move(backward_fn);
    }
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch");
}

inline void add_scaled(TensorNode& dst, const std::vector<double>& src, double s) {
    dst.ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) dst.grad[i] += s * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    return detail::op_result(a.shape(), std::move(v), {a, b}, [](detail::TensorNode& nd) {
        for (int p = 0; p < 2; ++p)
            if (nd.parents[p]->requires_grad) detail::add_scaled(*nd.parents[p], nd.grad, 1.0);
    });
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
    return detail::op_result(a.shape(), std::move(v), {a, b}, [](detail::TensorNode& nd) {
        if (nd.parents[0]->requires_grad) detail::add_scaled(*nd.parents[0], nd.grad, 1.0);
        if (nd.parents[1]->requires_grad) detail::add_scaled(*nd.parents[1], nd.grad, -1.0);
    });
}

/// Hadamard product.
inline Tensor operator*(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    return detail::op_result(a.shape(), std::move(v), {a, b}, [](detail::TensorNode& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i)
                pa.grad[i] += nd.grad[i] * pb.values[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i)
                pb.grad[i] += nd.grad[i] * pa.values[i];
        }
    });
}

/// alpha * t + beta, elementwise.
inline Tensor affine(const Tensor& t, double alpha, double beta) {
    std::vector<double> v(t.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = alpha * t.values()[i] + beta;
    return detail::op_result(t.shape(), std::move(v), {t}, [alpha](detail::TensorNode& nd) {
        if (nd.parents[0]->requires_grad) detail::add_scaled(*nd.parents[0], nd.grad, alpha);
    });
}

inline Tensor operator*(double s, const Tensor& t) { return affine(t, s, 0.0); }
inline Tensor operator-(const Tensor& t) { return affine(t, -1.0, 0.0); }

// ---------------------------------------------------------------------------
// Unary elementwise maps
// ---------------------------------------------------------------------------

namespace detail {
template <typename F, typename DF>
Tensor unary_op(const Tensor& t, F f, DF dfdx_from_xy) {
    std::vector<double> v(t.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(t.values()[i]);
    return op_result(t.shape(), std::move(v), {t}, [dfdx_from_xy](TensorNode& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i)
            p.grad[i] += nd.grad[i] * dfdx_from_xy(p.values[i], nd.values[i]);
    });
}
}  // namespace detail

inline Tensor relu(const Tensor& t) {
    return detail::unary_op(
        t, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& t) {
    return detail::unary_op(
        t, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& t) {
    return detail::unary_op(
        t, [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                          : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& t) {
    return detail::unary_op(
        t, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& t) {
    for (double x : t.values())
        if (!(x > 0.0)) throw DomainError("log: nonpositive input");
    return detail::unary_op(
        t, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor square(const Tensor& t) {
    return detail::unary_op(
        t, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// |t| with subgradient 0 at the origin.
inline Tensor abs(const Tensor& t) {
    return detail::unary_op(
        t, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// Matrix operations
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul: incompatible shapes");
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> v(m * n);
    detail::gemm(false, false, m, n, k, a.values().data(), b.values().data(), v.data(), false);
    return detail::op_result({m, n}, std::move(v), {a, b}, [m, n, k](detail::TensorNode& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            detail::gemm(false, true, m, k, n, nd.grad.data(), pb.values.data(),
                         pa.grad.data(), true);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            detail::gemm(true, false, k, n, m, pa.values.data(), nd.grad.data(),
                         pb.grad.data(), true);
        }
    });
}

/// (constant A) * x, used for adjacency/propagation operators.
inline Tensor matmul_const(std::shared_ptr<const Matrix> a, const Tensor& x) {
    if (x.shape().size() != 2 || a->cols() != x.rows())
        throw ShapeError("matmul_const: incompatible shapes");
    std::size_t m = a->rows(), k = a->cols(), n = x.cols();
    std::vector<double> v(m * n);
    detail::gemm(false, false, m, n, k, a->data().data(), x.values().data(), v.data(), false);
    return detail::op_result({m, n}, std::move(v), {x}, [a, m, n, k](detail::TensorNode& nd) {
        auto& px = *nd.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        detail::gemm(true, false, k, n, m, a->data().data(), nd.grad.data(),
                     px.grad.data(), true);
    });
}

inline Tensor matmul_const(const Matrix& a, const Tensor& x) {
    return matmul_const(std::make_shared<const Matrix>(a), x);
}

/// Broadcast a 1 x c row over the rows of an n x c matrix.
inline Tensor add_rows(const Tensor& a, const Tensor& row) {
    if (a.shape().size() != 2 || row.rows() != 1 || row.cols() != a.cols())
        throw ShapeError("add_rows: bias must be 1 x cols");
    std::size_t n = a.rows(), c = a.cols();
    std::vector<double> v(a.values());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] += row.values()[j];
    return detail::op_result({n, c}, std::move(v), {a, row}, [n, c](detail::TensorNode& nd) {
        auto& pa = *nd.parents[0];
        auto& pr = *nd.parents[1];
        if (pa.requires_grad) detail::add_scaled(pa, nd.grad, 1.0);
        if (pr.requires_grad) {
            pr.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) pr.grad[j] += nd.grad[i * c + j];
        }
    });
}

/// x * w + b for row-major batches.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rows(matmul(x, w), b);
}

/// Repeat a 1 x c row n times.
inline Tensor repeat_row(const Tensor& row, std::size_t n) {
    if (row.rows() != 1) throw ShapeError("repeat_row: input must be a single row");
    std::size_t c = row.cols();
    std::vector<double> v(n * c);
    for (std::size_t i = 0; i < n; ++i)
        std::copy(row.values().begin(), row.values().end(), v.begin() + i * c);
    return detail::op_result({n, c}, std::move(v), {row}, [n, c](detail::TensorNode& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[j] += nd.grad[i * c + j];
    });
}

/// Row i of a matrix as a 1 x c tensor.
inline Tensor row(const Tensor& t, std::size_t i) {
    if (t.shape().size() != 2 || i >= t.rows()) throw ShapeError("row: index out of range");
    std::size_t c = t.cols();
    std::vector<double> v(t.values().begin() + i * c, t.values().begin() + (i + 1) * c);
    return detail::op_result({1, c}, std::move(v), {t}, [i, c](detail::TensorNode& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += nd.grad[j];
    });
}

/// Flat element i as a scalar tensor.
inline Tensor element(const Tensor& t, std::size_t i) {
    if (i >= t.size()) throw ShapeError("element: index out of range");
    return detail::op_result({1, 1}, {t.values()[i]}, {t}, [i](detail::TensorNode& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        p.grad[i] += nd.grad[0];
    });
}

/// Columns [from, to) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& t, std::size_t from, std::size_t to) {
    if (t.shape().size() != 2 || from >= to || to > t.cols())
        throw ShapeError("slice_cols: bad column range");
    std::size_t n = t.rows(), c = t.cols(), w = to - from;
    std::vector<double> v(n * w);
    for (std::size_t i = 0; i < n; ++i)
        std::copy(t.values().begin() + i * c + from, t.values().begin() + i * c + to,
                  v.begin() + i * w);
    return detail::op_result({n, w}, std::move(v), {t},
                             [n, c, w, from](detail::TensorNode& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j)
                p.grad[i * c + from + j] += nd.grad[i * w + j];
    });
}

/// Concatenate 2-D tensors side by side (equal row counts).
inline Tensor hstack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("hstack: no inputs");
    std::size_t n = parts[0].rows(), c = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.rows() != n)
            throw ShapeError("hstack: row count mismatch");
        c += p.cols();
    }
    std::vector<double> v(n * c);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::size_t pc = p.cols();
        for (std::size_t i = 0; i < n; ++i)
            std::copy(p.values().begin() + i * pc, p.values().begin() + (i + 1) * pc,
                      v.begin() + i * c + off);
        off += pc;
    }
    return detail::op_result({n, c}, std::move(v), parts,
                             [n, c, offsets](detail::TensorNode& nd) {
        for (std::size_t k = 0; k < nd.parents.size(); ++k) {
            auto& p = *nd.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            std::size_t pc = p.shape[1];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < pc; ++j)
                    p.grad[i * pc + j] += nd.grad[i * c + offsets[k] + j];
        }
    });
}

/// Concatenate 2-D tensors top to bottom (equal column counts).
inline Tensor vstack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("vstack: no inputs");
    std::size_t c = parts[0].cols(), n = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.cols() != c)
            throw ShapeError("vstack: column count mismatch");
        n += p.rows();
    }
    std::vector<double> v;
    v.reserve(n * c);
    std::vector<std::size_t> row_offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        row_offsets.push_back(off);
        v.insert(v.end(), p.values().begin(), p.values().end());
        off += p.rows();
    }
    return detail::op_result({n, c}, std::move(v), parts,
                             [c, row_offsets](detail::TensorNode& nd) {
        for (std::size_t k = 0; k < nd.parents.size(); ++k) {
            auto& p = *nd.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            std::size_t base = row_offsets[k] * c;
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += nd.grad[base + i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& t) {
    double s = std::accumulate(t.values().begin(), t.values().end(), 0.0);
    return detail::op_result({1, 1}, {s}, {t}, [](detail::TensorNode& nd) {
        if (nd.parents[0]->requires_grad) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            for (auto& gi : p.grad) gi += nd.grad[0];
        }
    });
}

inline Tensor mean(const Tensor& t) {
    if (t.size() == 0) throw ShapeError("mean: empty tensor");
    return affine(sum(t), 1.0 / static_cast<double>(t.size()), 0.0);
}

/// Column means over rows: n x c -> 1 x c.
inline Tensor rows_mean(const Tensor& t) {
    if (t.shape().size() != 2 || t.rows() == 0) throw ShapeError("rows_mean: need a 2-D tensor");
    std::size_t n = t.rows(), c = t.cols();
    std::vector<double> v(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j] += t.values()[i * c + j];
    for (auto& x : v) x /= static_cast<double>(n);
    return detail::op_result({1, c}, std::move(v), {t}, [n, c](detail::TensorNode& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += inv * nd.grad[j];
    });
}

// ---------------------------------------------------------------------------
// Probabilistic / loss operations
// ---------------------------------------------------------------------------

/// Masked softmax over all entries. Masked-out entries are exactly zero; the
/// surviving entries sum to one. Throws on empty support.
inline Tensor masked_softmax(const Tensor& logits, const std::vector<double>& mask) {
    if (mask.size() != logits.size()) throw ShapeError("masked_softmax: mask size mismatch");
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] != 0.0) {
            any = true;
            mx = std::max(mx, logits.values()[i]);
        }
    if (!any) throw DomainError("masked_softmax: empty support (all entries masked)");
    std::vector<double> v(logits.size(), 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i] != 0.0) {
            v[i] = std::exp(logits.values()[i] - mx);
            z += v[i];
        }
    for (auto& x : v) x /= z;
    return detail::op_result(logits.shape(), std::move(v), {logits},
                             [mask](detail::TensorNode& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        double dot = 0.0;
        for (std::size_t i = 0; i < nd.grad.size(); ++i) dot += nd.grad[i] * nd.values[i];
        for (std::size_t i = 0; i < nd.grad.size(); ++i)
            if (mask[i] != 0.0) p.grad[i] += nd.values[i] * (nd.grad[i] - dot);
    });
}

inline Tensor masked_softmax(const Tensor& logits, const Tensor& mask) {
    return masked_softmax(logits, mask.values());
}

/// log(sum of exp over unmasked entries), numerically stable.
inline Tensor masked_logsumexp(const Tensor& logits, const std::vector<double>& mask) {
    if (mask.size() != logits.size()) throw ShapeError("masked_logsumexp: mask size mismatch");
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] != 0.0) {
            any = true;
            mx = std::max(mx, logits.values()[i]);
        }
    if (!any) throw DomainError("masked_logsumexp: empty support");
    double z = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] != 0.0) z += std::exp(logits.values()[i] - mx);
    double lse = mx + std::log(z);
    return detail::op_result({1, 1}, {lse}, {logits}, [mask, mx, z](detail::TensorNode& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i] != 0.0)
                p.grad[i] += nd.grad[0] * std::exp(p.values[i] - mx) / z;
    });
}

/// Mean squared error between equal-shaped tensors.
inline Tensor mse(const Tensor& pred, const Tensor& target) {
    detail::check_same_shape(pred, target, "mse");
    return mean(square(pred - target));
}

/// Sum over all entries of KL(N(mu, sigma^2) || N(0, 1)):
/// 1/2 (mu^2 + sigma^2 - 1 - 2 ln sigma) per coordinate.
inline Tensor kl_standard_normal(const Tensor& mu, const Tensor& sigma) {
    detail::check_same_shape(mu, sigma, "kl_standard_normal");
    for (double s : sigma.values())
        if (!(s > 0.0)) throw DomainError("kl_standard_normal: sigma must be positive");
    double total = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        double m = mu.values()[i], s = sigma.values()[i];
        total += 0.5 * (m * m + s * s - 1.0 - 2.0 * std::log(s));
    }
    return detail::op_result({1, 1}, {total}, {mu, sigma}, [](detail::TensorNode& nd) {
        auto& pm = *nd.parents[0];
        auto& ps = *nd.parents[1];
        if (pm.requires_grad) {
            pm.ensure_grad();
            for (std::size_t i = 0; i < pm.values.size(); ++i)
                pm.grad[i] += nd.grad[0] * pm.values[i];
        }
        if (ps.requires_grad) {
            ps.ensure_grad();
            for (std::size_t i = 0; i < ps.values.size(); ++i)
                ps.grad[i] += nd.grad[0] * (ps.values[i] - 1.0 / ps.values[i]);
        }
    });
}

inline bool all_finite(const Tensor& t) {
    for (double x : t.values())
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace resgen
