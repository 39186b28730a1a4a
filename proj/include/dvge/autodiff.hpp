#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dvge/errors.hpp"
#include "dvge/tensor.hpp"

// Reverse-mode automatic differentiation over dense tensors.
//
// Define-by-run: every primitive call appends a node to an implicit graph
// held together by shared_ptr edges. backward() topologically sorts the
// graph reachable from a scalar output and runs each node's backward rule
// exactly once, accumulating gradients into every node that requires them
// (leaves included), so gradients w.r.t. both parameters and designated
// inputs fall out of the same pass.
//
// Subgradient conventions at kinks: relu'(0) = 0, leaky_relu'(0) = slope,
// clamp' = 1 strictly inside the bounds and 0 at or outside them.

namespace dvge::ad {

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
public:
    const char* op;
    Tensor value;
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward_fn;  // reads grad_, accumulates into inputs
    bool requires_grad = false;

    Node(const char* op_name, Tensor v) : op(op_name), value(std::move(v)) {}

    // Gradient buffer, allocated on first touch with the node's shape.
    Tensor& grad_buf() {
        if (grad_.values.empty() && value.numel() > 0) grad_ = Tensor::zeros(value.shape);
        return grad_;
    }
    const Tensor& grad() const {
        static const Tensor empty;
        return grad_.values.empty() ? empty : grad_;
    }
    bool has_grad() const { return !grad_.values.empty(); }

private:
    Tensor grad_;
};

// Handle to a graph node. Cheap to copy; the graph stays alive as long as
// any handle into it does.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    // Leaf whose requires_grad follows the tensor's flag.
    static Var leaf(Tensor t) {
        bool rg = t.requires_grad;
        auto n = std::make_shared<Node>("leaf", std::move(t));
        n->requires_grad = rg;
        return Var(std::move(n));
    }

    // Leaf that never receives a gradient.
    static Var constant(Tensor t) {
        t.requires_grad = false;
        return Var(std::make_shared<Node>("const", std::move(t)));
    }

    const Tensor& value() const { return node_->value; }

    // Gradient accumulated by the last backward(); zeros if the node was
    // disconnected from the output.
    Tensor grad() const {
        if (!node_->has_grad()) return Tensor::zeros(node_->value.shape);
        return node_->grad();
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    NodePtr node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    NodePtr node_;
};

namespace detail {

inline NodePtr make_node(const char* op, Tensor value, std::vector<NodePtr> inputs,
                         std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>(op, std::move(value));
    for (const auto& in : inputs)
        if (in->requires_grad) n->requires_grad = true;
    n->inputs = std::move(inputs);
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch (" + a.shape_str() + " vs " +
                         b.shape_str() + ")");
}

inline void accumulate(Node& target, const std::vector<double>& g) {
    Tensor& buf = target.grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    detail::require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.value().values[i];
    return Var(detail::make_node("add", std::move(out), {a.node(), b.node()}, [](Node& n) {
        const auto& g = n.grad().values;
        if (n.inputs[0]->requires_grad) detail::accumulate(*n.inputs[0], g);
        if (n.inputs[1]->requires_grad) detail::accumulate(*n.inputs[1], g);
    }));
}

inline Var sub(const Var& a, const Var& b) {
    detail::require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= b.value().values[i];
    return Var(detail::make_node("sub", std::move(out), {a.node(), b.node()}, [](Node& n) {
        const auto& g = n.grad().values;
        if (n.inputs[0]->requires_grad) detail::accumulate(*n.inputs[0], g);
        if (n.inputs[1]->requires_grad) {
            Tensor& buf = n.inputs[1]->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] -= g[i];
        }
    }));
}

inline Var mul(const Var& a, const Var& b) {
    detail::require_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= b.value().values[i];
    return Var(detail::make_node("mul", std::move(out), {a.node(), b.node()}, [](Node& n) {
        const auto& g = n.grad().values;
        const auto& av = n.inputs[0]->value.values;
        const auto& bv = n.inputs[1]->value.values;
        if (n.inputs[0]->requires_grad) {
            Tensor& buf = n.inputs[0]->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] += g[i] * bv[i];
        }
        if (n.inputs[1]->requires_grad) {
            Tensor& buf = n.inputs[1]->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] += g[i] * av[i];
        }
    }));
}

// elementwise multiply by a plain scalar
inline Var scale(const Var& a, double c) {
    Tensor out = a.value();
    for (double& v : out.values) v *= c;
    return Var(detail::make_node("scale", std::move(out), {a.node()}, [c](Node& n) {
        const auto& g = n.grad().values;
        Tensor& buf = n.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] += c * g[i];
    }));
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

// elementwise add a plain scalar
inline Var add_scalar(const Var& a, double c) {
    Tensor out = a.value();
    for (double& v : out.values) v += c;
    return Var(detail::make_node("add_scalar", std::move(out), {a.node()}, [](Node& n) {
        detail::accumulate(*n.inputs[0], n.grad().values);
    }));
}

// ---------------------------------------------------------------------------
// matmul and row broadcast
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2)
        throw ShapeError("matmul: operands must be rank-2 (" + av.shape_str() + ", " +
                         bv.shape_str() + ")");
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: inner dimensions differ (" + av.shape_str() + " vs " +
                         bv.shape_str() + ")");
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &av.values[i * k];
        double* crow = &out.values[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double s = arow[p];
            const double* brow = &bv.values[p * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
    return Var(detail::make_node("matmul", std::move(out), {a.node(), b.node()}, [](Node& nd) {
        const Tensor& g = nd.grad();
        const Tensor& A = nd.inputs[0]->value;
        const Tensor& B = nd.inputs[1]->value;
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        if (nd.inputs[0]->requires_grad) {  // dA = G * B^T
            Tensor& da = nd.inputs[0]->grad_buf();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double* grow = &g.values[i * n];
                    const double* brow = &B.values[p * n];
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    da.values[i * k + p] += acc;
                }
        }
        if (nd.inputs[1]->requires_grad) {  // dB = A^T * G
            Tensor& db = nd.inputs[1]->grad_buf();
            for (std::size_t i = 0; i < m; ++i) {
                const double* arow = &A.values[i * k];
                const double* grow = &g.values[i * n];
                for (std::size_t p = 0; p < k; ++p) {
                    const double s = arow[p];
                    double* drow = &db.values[p * n];
                    for (std::size_t j = 0; j < n; ++j) drow[j] += s * grow[j];
                }
            }
        }
    }));
}

// add a length-m vector to every row of an n x m matrix
inline Var add_rowvec(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 1 || bv.shape[0] != av.cols())
        throw ShapeError("add_rowvec: expected n x m matrix and length-m vector (" +
                         av.shape_str() + ", " + bv.shape_str() + ")");
    Tensor out = av;
    const std::size_t n = av.rows(), m = av.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.values[i * m + j] += bv.values[j];
    return Var(detail::make_node("add_rowvec", std::move(out), {a.node(), b.node()}, [](Node& nd) {
        const Tensor& g = nd.grad();
        const std::size_t n = g.rows(), m = g.cols();
        if (nd.inputs[0]->requires_grad) detail::accumulate(*nd.inputs[0], g.values);
        if (nd.inputs[1]->requires_grad) {
            Tensor& db = nd.inputs[1]->grad_buf();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) db.values[j] += g.values[i * m + j];
        }
    }));
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

inline Var relu(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    return Var(detail::make_node("relu", std::move(out), {a.node()}, [](Node& n) {
        const auto& g = n.grad().values;
        const auto& x = n.inputs[0]->value.values;
        Tensor& buf = n.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) buf.values[i] += g[i];
    }));
}

inline Var leaky_relu(const Var& a, double slope) {
    Tensor out = a.value();
    for (double& v : out.values) v = v > 0.0 ? v : slope * v;
    return Var(detail::make_node("leaky_relu", std::move(out), {a.node()}, [slope](Node& n) {
        const auto& g = n.grad().values;
        const auto& x = n.inputs[0]->value.values;
        Tensor& buf = n.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i)
            buf.values[i] += (x[i] > 0.0 ? g[i] : slope * g[i]);
    }));
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.values) v = stable_sigmoid(v);
    return Var(detail::make_node("sigmoid", std::move(out), {a.node()}, [](Node& n) {
        const auto& g = n.grad().values;
        const auto& y = n.value.values;
        Tensor& buf = n.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] += g[i] * y[i] * (1.0 - y[i]);
    }));
}

inline Var exp(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.values) v = std::exp(v);
    return Var(detail::make_node("exp", std::move(out), {a.node()}, [](Node& n) {
        const auto& g = n.grad().values;
        const auto& y = n.value.values;
        Tensor& buf = n.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] += g[i] * y[i];
    }));
}

inline Var log(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.values) {
        if (v <= 0.0) throw std::domain_error("log: non-positive input");
        v = std::log(v);
    }
    return Var(detail::make_node("log", std::move(out), {a.node()}, [](Node& n) {
        const auto& g = n.grad().values;
        const auto& x = n.inputs[0]->value.values;
        Tensor& buf = n.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] += g[i] / x[i];
    }));
}

inline Var clamp(const Var& a, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    Tensor out = a.value();
    for (double& v : out.values) v = std::clamp(v, lo, hi);
    return Var(detail::make_node("clamp", std::move(out), {a.node()}, [lo, hi](Node& n) {
        const auto& g = n.grad().values;
        const auto& x = n.inputs[0]->value.values;
        Tensor& buf = n.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > lo && x[i] < hi) buf.values[i] += g[i];
    }));
}

// ---------------------------------------------------------------------------
// reductions and shape ops
// ---------------------------------------------------------------------------

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values) s += v;
    return Var(detail::make_node("sum", Tensor::scalar(s), {a.node()}, [](Node& n) {
        const double g = n.grad().values[0];
        Tensor& buf = n.inputs[0]->grad_buf();
        for (double& v : buf.values) v += g;
    }));
}

inline Var mean(const Var& a) {
    const std::size_t n = a.value().numel();
    if (n == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : a.value().values) s += v;
    return Var(detail::make_node("mean", Tensor::scalar(s / static_cast<double>(n)), {a.node()},
                                 [n](Node& nd) {
                                     const double g = nd.grad().values[0] / static_cast<double>(n);
                                     Tensor& buf = nd.inputs[0]->grad_buf();
                                     for (double& v : buf.values) v += g;
                                 }));
}

inline Var reshape(const Var& a, std::vector<std::size_t> new_shape) {
    if (Tensor::numel_of(new_shape) != a.value().numel())
        throw ShapeError("reshape: element count mismatch (" + a.value().shape_str() + " -> " +
                         Tensor(new_shape, std::vector<double>(Tensor::numel_of(new_shape), 0))
                             .shape_str() +
                         ")");
    Tensor out(new_shape, a.value().values);
    return Var(detail::make_node("reshape", std::move(out), {a.node()}, [](Node& n) {
        detail::accumulate(*n.inputs[0], n.grad().values);
    }));
}

// slice along an axis of a rank-2 tensor (axis 0 = rows, axis 1 = columns),
// or along axis 0 of a rank-1 tensor
inline Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t len) {
    const Tensor& av = a.value();
    if (av.rank() == 1) {
        if (axis != 0 || start + len > av.shape[0])
            throw ShapeError("slice: range out of bounds (" + av.shape_str() + ")");
        Tensor out = Tensor::zeros({len});
        for (std::size_t i = 0; i < len; ++i) out.values[i] = av.values[start + i];
        return Var(detail::make_node("slice", std::move(out), {a.node()}, [start, len](Node& n) {
            const auto& g = n.grad().values;
            Tensor& buf = n.inputs[0]->grad_buf();
            for (std::size_t i = 0; i < len; ++i) buf.values[start + i] += g[i];
        }));
    }
    if (av.rank() != 2 || axis > 1)
        throw ShapeError("slice: expected rank-1 or rank-2 tensor, axis 0 or 1 (" +
                         av.shape_str() + ")");
    const std::size_t r = av.rows(), c = av.cols();
    if ((axis == 0 && start + len > r) || (axis == 1 && start + len > c))
        throw ShapeError("slice: range out of bounds (" + av.shape_str() + ")");
    if (axis == 0) {
        Tensor out = Tensor::zeros({len, c});
        std::copy_n(av.values.begin() + static_cast<std::ptrdiff_t>(start * c), len * c,
                    out.values.begin());
        return Var(detail::make_node("slice", std::move(out), {a.node()}, [start, c](Node& n) {
            const auto& g = n.grad().values;
            Tensor& buf = n.inputs[0]->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) buf.values[start * c + i] += g[i];
        }));
    }
    Tensor out = Tensor::zeros({r, len});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j) out.values[i * len + j] = av.values[i * c + start + j];
    return Var(detail::make_node("slice", std::move(out), {a.node()}, [start, len, c](Node& n) {
        const auto& g = n.grad().values;
        const std::size_t r = n.value.rows();
        Tensor& buf = n.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < len; ++j) buf.values[i * c + start + j] += g[i * len + j];
    }));
}

// concatenate along an axis; all operands must agree on the other axis
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    const std::size_t rank = parts[0].value().rank();
    if (rank == 1) {
        if (axis != 0) throw ShapeError("concat: rank-1 tensors concatenate on axis 0");
        std::size_t total = 0;
        for (const auto& p : parts) {
            if (p.value().rank() != 1) throw ShapeError("concat: mixed ranks");
            total += p.value().shape[0];
        }
        Tensor out = Tensor::zeros({total});
        std::vector<NodePtr> ins;
        std::vector<std::size_t> sizes;
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.value().values.begin(), p.value().values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(off));
            off += p.value().shape[0];
            ins.push_back(p.node());
            sizes.push_back(p.value().shape[0]);
        }
        return Var(detail::make_node("concat", std::move(out), std::move(ins), [sizes](Node& n) {
            const auto& g = n.grad().values;
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                if (n.inputs[k]->requires_grad) {
                    Tensor& buf = n.inputs[k]->grad_buf();
                    for (std::size_t i = 0; i < sizes[k]; ++i) buf.values[i] += g[off + i];
                }
                off += sizes[k];
            }
        }));
    }
    if (rank != 2 || axis > 1) throw ShapeError("concat: expected rank-1 or rank-2, axis 0 or 1");
    const std::size_t other = axis == 0 ? parts[0].value().cols() : parts[0].value().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.value().rank() != 2) throw ShapeError("concat: mixed ranks");
        const std::size_t o = axis == 0 ? p.value().cols() : p.value().rows();
        if (o != other)
            throw ShapeError("concat: operands disagree on the non-concat axis (" +
                             parts[0].value().shape_str() + " vs " + p.value().shape_str() + ")");
        total += p.value().shape[axis];
    }
    std::vector<NodePtr> ins;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        ins.push_back(p.node());
        sizes.push_back(p.value().shape[axis]);
    }
    if (axis == 0) {
        Tensor out = Tensor::zeros({total, other});
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.value().values.begin(), p.value().values.end(),
                      out.values.begin() + static_cast<std::ptrdiff_t>(off));
            off += p.value().numel();
        }
        return Var(detail::make_node("concat", std::move(out), std::move(ins), [sizes, other](Node& n) {
            const auto& g = n.grad().values;
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                const std::size_t cnt = sizes[k] * other;
                if (n.inputs[k]->requires_grad) {
                    Tensor& buf = n.inputs[k]->grad_buf();
                    for (std::size_t i = 0; i < cnt; ++i) buf.values[i] += g[off + i];
                }
                off += cnt;
            }
        }));
    }
    // axis == 1: interleave columns row by row
    Tensor out = Tensor::zeros({other, total});
    for (std::size_t i = 0; i < other; ++i) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t c = p.value().cols();
            for (std::size_t j = 0; j < c; ++j)
                out.values[i * total + off + j] = p.value().values[i * c + j];
            off += c;
        }
    }
    return Var(detail::make_node("concat", std::move(out), std::move(ins), [sizes, other, total](Node& n) {
        const auto& g = n.grad().values;
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t c = sizes[k];
            if (n.inputs[k]->requires_grad) {
                Tensor& buf = n.inputs[k]->grad_buf();
                for (std::size_t i = 0; i < other; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        buf.values[i * c + j] += g[i * total + off + j];
            }
            off += c;
        }
    }));
}

// pick one entry per row of an n x C matrix: out[i] = a[i, indices[i]]
inline Var gather(const Var& a, std::vector<std::size_t> indices) {
    const Tensor& av = a.value();
    if (av.rank() != 2) throw ShapeError("gather: expected rank-2 tensor (" + av.shape_str() + ")");
    const std::size_t n = av.rows(), c = av.cols();
    if (indices.size() != n)
        throw ShapeError("gather: index count " + std::to_string(indices.size()) +
                         " does not match row count " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i)
        if (indices[i] >= c)
            throw std::out_of_range("gather: index " + std::to_string(indices[i]) +
                                    " out of range for " + std::to_string(c) + " columns (row " +
                                    std::to_string(i) + ")");
    Tensor out = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) out.values[i] = av.values[i * c + indices[i]];
    return Var(detail::make_node("gather", std::move(out), {a.node()},
                                 [idx = std::move(indices), c](Node& nd) {
                                     const auto& g = nd.grad().values;
                                     Tensor& buf = nd.inputs[0]->grad_buf();
                                     for (std::size_t i = 0; i < g.size(); ++i)
                                         buf.values[i * c + idx[i]] += g[i];
                                 }));
}

// row-wise log-softmax of an n x C matrix, stabilized by the row max
inline Var log_softmax(const Var& a) {
    const Tensor& av = a.value();
    if (av.rank() != 2)
        throw ShapeError("log_softmax: expected rank-2 tensor (" + av.shape_str() + ")");
    const std::size_t n = av.rows(), c = av.cols();
    Tensor out = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &av.values[i * c];
        double m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
        const double lz = m + std::log(z);
        for (std::size_t j = 0; j < c; ++j) out.values[i * c + j] = row[j] - lz;
    }
    return Var(detail::make_node("log_softmax", std::move(out), {a.node()}, [](Node& nd) {
        // dx = g - softmax(x) * rowsum(g)
        const Tensor& g = nd.grad();
        const Tensor& y = nd.value;
        const std::size_t n = y.rows(), c = y.cols();
        Tensor& buf = nd.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < n; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < c; ++j) gs += g.values[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                buf.values[i * c + j] += g.values[i * c + j] - std::exp(y.values[i * c + j]) * gs;
        }
    }));
}

// identity forward, gradient multiplied by -lambda on the way back
// (gradient-reversal layer for adversarial training)
inline Var grad_reverse(const Var& a, double lambda) {
    Tensor out = a.value();
    return Var(detail::make_node("grad_reverse", std::move(out), {a.node()}, [lambda](Node& n) {
        const auto& g = n.grad().values;
        Tensor& buf = n.inputs[0]->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] -= lambda * g[i];
    }));
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

// Run reverse-mode accumulation from a scalar output. Every reachable node
// that requires a gradient is visited exactly once; nodes disconnected from
// the output keep a zero gradient.
inline void backward(const Var& output) {
    if (!output) throw std::invalid_argument("backward: empty variable");
    if (output.value().rank() != 0)
        throw ShapeError("backward: output must be a scalar, got " + output.value().shape_str());
    Node* root = output.node().get();
    if (!root->requires_grad) return;

    // iterative post-order DFS over requires_grad nodes
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        Node* node = stack.back().first;
        const std::size_t ci = stack.back().second;
        if (ci < node->inputs.size()) {
            stack.back().second = ci + 1;
            Node* child = node->inputs[ci].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buf().values[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
}

}  // namespace dvge::ad
