#ifndef DTP_TENSOR_HPP
#define DTP_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dtp/error.hpp"
#include "dtp/rng.hpp"

namespace dtp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

/// One vertex of the dynamically recorded computation graph. Nodes own their
/// parents through shared_ptr, so a graph lives exactly as long as some
/// Tensor handle can still reach it and is freed when the last handle drops.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

/// Dense 64-bit tensor with optional reverse-mode gradient tracking.
/// Value-semantics handle over a shared graph node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_size(shape) != data.size())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.n_ = std::make_shared<detail::Node>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        std::vector<double> d(shape_size(shape), v);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data(Shape{}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, RandomSource& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        std::vector<double> d(shape_size(shape));
        for (double& x : d) x = rng.normal(0.0, stddev);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::size_t size() const { return n_->value.size(); }
    std::size_t rank() const { return n_->shape.size(); }

    std::size_t rows() const {
        require_rank2("rows()");
        return n_->shape[0];
    }
    std::size_t cols() const {
        require_rank2("cols()");
        return n_->shape[1];
    }

    bool is_scalar() const { return size() == 1 && rank() <= 1; }

    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return n_->value[0];
    }

    const std::vector<double>& values() const { return n_->value; }

    /// Direct mutation of a leaf's storage (optimizer updates, loading).
    std::vector<double>& raw_values() {
        if (!n_->parents.empty())
            throw ContractError("raw_values() is only valid on leaf tensors");
        return n_->value;
    }

    double operator()(std::size_t r, std::size_t c) const {
        require_rank2("operator()(r,c)");
        return n_->value[r * cols() + c];
    }

    bool requires_grad() const { return n_->requires_grad; }

    Tensor& set_requires_grad(bool rg) {
        if (!n_->parents.empty())
            throw ContractError("set_requires_grad is only valid on leaf tensors");
        n_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return !n_->grad.empty(); }

    const std::vector<double>& grad() const {
        if (n_->grad.empty()) throw ContractError("gradient not populated");
        return n_->grad;
    }

    void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }
    void drop_grad() { n_->grad.clear(); }

    /// Value copy with no graph history and no gradient requirement.
    Tensor detach() const {
        Tensor t;
        t.n_ = std::make_shared<detail::Node>();
        t.n_->shape = n_->shape;
        t.n_->value = n_->value;
        return t;
    }

    /// Deep copy of a leaf, preserving requires_grad (teacher snapshots).
    Tensor clone() const {
        Tensor t = detach();
        t.n_->requires_grad = n_->requires_grad;
        return t;
    }

    /// Identity check (same underlying node).
    bool same_node(const Tensor& o) const { return n_ == o.n_; }

    friend void backward(const Tensor& root);
    friend Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> back);
    friend const std::vector<std::shared_ptr<detail::Node>>& node_parents(const Tensor& t);
    std::shared_ptr<detail::Node> node() const { return n_; }

  private:
    void require_rank2(const char* what) const {
        if (rank() != 2) throw ShapeError(std::string(what) + " requires rank-2, got " + shape_str(shape()));
    }

    std::shared_ptr<detail::Node> n_;
};

/// Build a new graph node. Parents that do not require gradients are kept for
/// ownership but skipped by backward functions (they check requires_grad).
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> back) {
    Tensor t;
    t.n_ = std::make_shared<detail::Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(value);
    bool rg = false;
    t.n_->parents.reserve(parents.size());
    for (const Tensor& p : parents) {
        rg = rg || p.node()->requires_grad;
        t.n_->parents.push_back(p.node());
    }
    t.n_->requires_grad = rg;
    if (rg) t.n_->backward = std::move(back);
    return t;
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// reachable tensor that requires them; calling twice without zero_grad
/// doubles the leaf gradients. The graph itself is left intact and is freed
/// when the owning Tensor handles go out of scope.
inline void backward(const Tensor& root) {
    if (!root.defined()) throw ContractError("backward on undefined tensor");
    if (root.size() != 1)
        throw ContractError("backward root must be scalar, got " + shape_str(root.shape()));
    if (!root.n_->requires_grad)
        throw ContractError("backward root was not produced by tracked operations");

    // Iterative post-order DFS over the requires_grad subgraph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.n_.get(), 0);
    visited.insert(root.n_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients are per-sweep scratch; only leaves accumulate across
    // repeated backward calls.
    for (detail::Node* n : order)
        if (!n->parents.empty()) n->grad.assign(n->value.size(), 0.0);

    root.n_->ensure_grad();
    root.n_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise operations. Binary ops accept identical shapes, or a scalar on
// either side which broadcasts across the other operand.
// ---------------------------------------------------------------------------

namespace detail {

inline void accumulate_same(Node& parent, const std::vector<double>& g) {
    parent.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
}

enum class BroadcastKind { None, LeftScalar, RightScalar };

inline BroadcastKind binary_broadcast(const Tensor& a, const Tensor& b, const char* opname) {
    if (a.shape() == b.shape()) return BroadcastKind::None;
    if (a.is_scalar()) return BroadcastKind::LeftScalar;
    if (b.is_scalar()) return BroadcastKind::RightScalar;
    throw ShapeError(std::string(opname) + ": incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
}

}  // namespace detail

/// Shared skeleton for elementwise binary ops.
/// fwd(x, y) -> value; dfdx/dfdy give partials at (x, y, out).
template <typename F, typename Dx, typename Dy>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name, F fwd, Dx dfdx,
                          Dy dfdy) {
    auto kind = detail::binary_broadcast(a, b, name);
    const std::size_t n =
        kind == detail::BroadcastKind::LeftScalar ? b.size() : a.size();
    const Shape out_shape =
        kind == detail::BroadcastKind::LeftScalar ? b.shape() : a.shape();
    std::vector<double> out(n);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        double x = kind == detail::BroadcastKind::LeftScalar ? av[0] : av[i];
        double y = kind == detail::BroadcastKind::RightScalar ? bv[0] : bv[i];
        out[i] = fwd(x, y);
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op(out_shape, std::move(out), {a, b}, [an, bn, kind, dfdx, dfdy](detail::Node& self) {
        const auto& g = self.grad;
        const std::size_t n = g.size();
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                if (g[i] == 0.0) continue;  // keeps 0 * inf out of guarded kinks
                double x = kind == detail::BroadcastKind::LeftScalar ? an->value[0] : an->value[i];
                double y = kind == detail::BroadcastKind::RightScalar ? bn->value[0] : bn->value[i];
                double d = dfdx(x, y) * g[i];
                an->grad[kind == detail::BroadcastKind::LeftScalar ? 0 : i] += d;
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                if (g[i] == 0.0) continue;
                double x = kind == detail::BroadcastKind::LeftScalar ? an->value[0] : an->value[i];
                double y = kind == detail::BroadcastKind::RightScalar ? bn->value[0] : bn->value[i];
                double d = dfdy(x, y) * g[i];
                bn->grad[kind == detail::BroadcastKind::RightScalar ? 0 : i] += d;
            }
        }
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

/// Shared skeleton for elementwise unary ops; dfdx receives (x, fx).
template <typename F, typename D>
Tensor elementwise_unary(const Tensor& a, F fwd, D dfdx) {
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, dfdx](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (self.grad[i] == 0.0) continue;
            an->grad[i] += dfdx(an->value[i], self.value[i]) * self.grad[i];
        }
    });
}

inline Tensor neg(const Tensor& a) {
    return elementwise_unary(a, [](double x) { return -x; },
                             [](double, double) { return -1.0; });
}

inline Tensor exp(const Tensor& a) {
    return elementwise_unary(a, [](double x) { return std::exp(x); },
                             [](double, double fx) { return fx; });
}

inline Tensor log(const Tensor& a) {
    return elementwise_unary(a, [](double x) { return std::log(x); },
                             [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a) {
    return elementwise_unary(a, [](double x) { return std::sqrt(x); },
                             [](double, double fx) { return 0.5 / fx; });
}

inline Tensor relu(const Tensor& a) {
    return elementwise_unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                             [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor pow_scalar(const Tensor& a, double p) {
    return elementwise_unary(
        a, [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

/// max(x, floor): identity above the floor, constant (zero-gradient) below.
inline Tensor clamp_min(const Tensor& a, double floor) {
    return elementwise_unary(
        a, [floor](double x) { return x > floor ? x : floor; },
        [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    return elementwise_unary(a, [c](double x) { return x + c; },
                             [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
    return elementwise_unary(a, [c](double x) { return x * c; },
                             [c](double, double) { return c; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Matrix operations (rank-2 only).
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul requires rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    if (a.cols() != b.rows())
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const double ail = av[i * k + l];
            if (ail == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += ail * bv[l * n + j];
        }
    auto an = a.node();
    auto bn = b.node();
    return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            // dA = G * B^T
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t l = 0; l < k; ++l) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bn->value[l * n + j];
                    an->grad[i * k + l] += s;
                }
        }
        if (bn->requires_grad) {
            // dB = A^T * G
            bn->ensure_grad();
            for (std::size_t l = 0; l < k; ++l)
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) s += an->value[i * k + l] * g[i * n + j];
                    bn->grad[l * n + j] += s;
                }
        }
    });
}

/// Same storage, new shape; gradients pass through untouched.
inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    auto an = a.node();
    return make_op(std::move(shape), a.values(), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose requires rank-2, got " + shape_str(a.shape()));
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    const auto& av = a.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    auto an = a.node();
    return make_op({n, m}, std::move(out), {a}, [an, m, n](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[j * m + i];
    });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    auto an = a.node();
    return make_op({}, {s}, {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (double& g : an->grad) g += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size())); }

// ---------------------------------------------------------------------------
// Slicing and concatenation (rank-2).
// ---------------------------------------------------------------------------

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    if (a.rank() != 2) throw ShapeError("slice_rows requires rank-2, got " + shape_str(a.shape()));
    if (begin + count > a.rows())
        throw ShapeError("slice_rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_str(a.shape()));
    const std::size_t n = a.cols();
    std::vector<double> out(a.values().begin() + begin * n,
                            a.values().begin() + (begin + count) * n);
    auto an = a.node();
    return make_op({count, n}, std::move(out), {a}, [an, begin, n](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[begin * n + i] += self.grad[i];
    });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    if (a.rank() != 2) throw ShapeError("slice_cols requires rank-2, got " + shape_str(a.shape()));
    if (begin + count > a.cols())
        throw ShapeError("slice_cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_str(a.shape()));
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * count);
    const auto& av = a.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = av[i * n + begin + j];
    auto an = a.node();
    return make_op({m, count}, std::move(out), {a}, [an, begin, m, n, count](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j)
                an->grad[i * n + begin + j] += self.grad[i * count + j];
    });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.cols() != n)
            throw ShapeError("concat_rows: inconsistent column count");
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    return make_op({m, n}, std::move(out), parts, [nodes](detail::Node& self) {
        std::size_t offset = 0;
        for (auto& pn : nodes) {
            const std::size_t len = pn->value.size();
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (std::size_t i = 0; i < len; ++i) pn->grad[i] += self.grad[offset + i];
            }
            offset += len;
        }
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.rows() != m) throw ShapeError("concat_cols: inconsistent row count");
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t col0 = 0;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pc; ++j) out[i * n + col0 + j] = p.values()[i * pc + j];
        col0 += pc;
    }
    std::vector<std::shared_ptr<detail::Node>> nodes;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.cols());
    }
    return make_op({m, n}, std::move(out), parts, [nodes, widths, m, n](detail::Node& self) {
        std::size_t col0 = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            auto& pn = nodes[k];
            const std::size_t pc = widths[k];
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < pc; ++j)
                        pn->grad[i * pc + j] += self.grad[i * n + col0 + j];
            }
            col0 += pc;
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax family. Custom nodes with analytic backward for stability.
// Rank-1 input is treated as a single row; rank-2 applies row-wise.
// ---------------------------------------------------------------------------

namespace detail {
inline std::pair<std::size_t, std::size_t> row_view(const Tensor& t, const char* opname) {
    if (t.rank() == 1) return {std::size_t{1}, t.shape()[0]};
    if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
    throw ShapeError(std::string(opname) + " requires rank 1 or 2, got " + shape_str(t.shape()));
}
}  // namespace detail

inline Tensor row_softmax(const Tensor& a) {
    auto [m, n] = detail::row_view(a, "row_softmax");
    if (n == 0) throw ShapeError("row_softmax of empty rows");
    std::vector<double> out(m * n);
    const auto& av = a.values();
    for (std::size_t i = 0; i < m; ++i) {
        double mx = av[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av[i * n + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(av[i * n + j] - mx);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    auto an = a.node();
    auto mm = m;
    auto nn = n;
    return make_op(a.shape(), std::move(out), {a}, [an, mm, nn](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < mm; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < nn; ++j)
                dot += self.grad[i * nn + j] * self.value[i * nn + j];
            for (std::size_t j = 0; j < nn; ++j) {
                const double s = self.value[i * nn + j];
                an->grad[i * nn + j] += s * (self.grad[i * nn + j] - dot);
            }
        }
    });
}

/// log(sum(exp(row))) per row -> [m x 1] (or scalar-per-row vector for rank-1 -> [1 x 1]).
inline Tensor row_logsumexp(const Tensor& a) {
    auto [m, n] = detail::row_view(a, "row_logsumexp");
    if (n == 0) throw ShapeError("row_logsumexp of empty rows");
    std::vector<double> out(m);
    const auto& av = a.values();
    for (std::size_t i = 0; i < m; ++i) {
        double mx = av[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av[i * n + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(av[i * n + j] - mx);
        out[i] = mx + std::log(z);
    }
    auto an = a.node();
    auto mm = m;
    auto nn = n;
    return make_op({m, 1}, std::move(out), {a}, [an, mm, nn](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < mm; ++i) {
            for (std::size_t j = 0; j < nn; ++j) {
                const double p = std::exp(an->value[i * nn + j] - self.value[i]);
                an->grad[i * nn + j] += p * self.grad[i];
            }
        }
    });
}

/// Probability vector softmax(inverse_temperature * x).
inline Tensor softmax(const Tensor& x, double inverse_temperature) {
    if (!(inverse_temperature > 0.0))
        throw DomainError("softmax inverse_temperature must be positive, got " +
                          std::to_string(inverse_temperature));
    return row_softmax(mul_scalar(x, inverse_temperature));
}

// ---------------------------------------------------------------------------
// Common compositions.
// ---------------------------------------------------------------------------

/// ones column [n x 1] helper for row reductions via matmul.
inline Tensor ones_col(std::size_t n) { return Tensor::ones({n, 1}); }
inline Tensor ones_row(std::size_t n) { return Tensor::ones({1, n}); }

/// Per-row sums of a [m x n] matrix -> [m x 1].
inline Tensor row_sums(const Tensor& a) { return matmul(a, ones_col(a.cols())); }

/// Broadcast a [m x 1] column across n columns -> [m x n].
inline Tensor broadcast_col(const Tensor& v, std::size_t n) { return matmul(v, ones_row(n)); }

/// Broadcast a [1 x n] row across m rows -> [m x n].
inline Tensor broadcast_row(const Tensor& v, std::size_t m) { return matmul(ones_col(m), v); }

/// Mean over rows -> [1 x n].
inline Tensor mean_rows(const Tensor& a) {
    return mul_scalar(matmul(ones_row(a.rows()), a), 1.0 / static_cast<double>(a.rows()));
}

/// L2-normalize each row, norms clamped at `floor` to guard zero vectors.
inline Tensor l2_normalize_rows(const Tensor& a, double floor = 1e-12) {
    Tensor norms = clamp_min(sqrt(row_sums(mul(a, a))), floor);  // [m x 1]
    return div(a, broadcast_col(norms, a.cols()));
}

/// Cosine similarity of two equally-shaped [1 x d] (or [m x d] row-wise,
/// returning [m x 1]) tensors, with clamped norms.
inline Tensor row_cosine(const Tensor& a, const Tensor& b, double floor = 1e-12) {
    if (a.shape() != b.shape())
        throw ShapeError("row_cosine: shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor dots = row_sums(mul(a, b));
    Tensor na = clamp_min(sqrt(row_sums(mul(a, a))), floor);
    Tensor nb = clamp_min(sqrt(row_sums(mul(b, b))), floor);
    return div(dots, mul(na, nb));
}

}  // namespace dtp

#endif  // DTP_TENSOR_HPP
