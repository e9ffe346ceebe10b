#pragma once

// Reverse-mode automatic differentiation over Tensor.
//
// Every op allocates a fresh Node holding its value, references to its parents
// and a closure that pushes the output gradient back to them. The graph lives
// as long as some handle to its root does; dropping the loss frees the tape.
// Ops never modify their inputs' values and raise NumericError as soon as a
// value or gradient stops being finite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "surrocon/errors.hpp"
#include "surrocon/tensor.hpp"

namespace surrocon {

namespace detail {

struct NodeData {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<NodeData>> parents;
    std::function<void(NodeData&)> backward;

    Tensor& grad_buffer() {
        if (!has_grad) {
            grad = Tensor::zeros(value.shape());
            has_grad = true;
        }
        return grad;
    }
};

inline void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

}  // namespace detail

class Node {
public:
    Node() = default;

    /// Trainable leaf: receives gradients in backward().
    static Node parameter(Tensor value) { return leaf(std::move(value), true); }

    /// Input leaf: gradients are never computed for it.
    static Node constant(Tensor value) { return leaf(std::move(value), false); }

    [[nodiscard]] const Tensor& value() const { return p_->value; }
    [[nodiscard]] const Shape& shape() const { return p_->value.shape(); }

    /// Accumulated gradient; zeros if backward has not reached this node.
    [[nodiscard]] Tensor grad() const { return p_->has_grad ? p_->grad : Tensor::zeros(shape()); }

    [[nodiscard]] bool requires_grad() const { return p_->requires_grad; }
    [[nodiscard]] bool is_leaf() const { return p_->leaf; }
    [[nodiscard]] bool valid() const noexcept { return static_cast<bool>(p_); }

    void zero_grad() { p_->has_grad = false; }

    /// Replace a parameter's value in place (optimizer updates). Shape must not change.
    void assign(Tensor v) {
        if (!p_->leaf) throw ContractError("Node::assign on a non-leaf node");
        if (v.shape() != shape()) throw DimensionError("Node::assign: shape change " + shape_str(v.shape()));
        detail::check_finite(v, "assign");
        p_->value = std::move(v);
    }

    // Internal: build an op node from already-computed value and parents.
    static Node make(const char* op, Tensor value, std::vector<Node> parents,
                     std::function<void(detail::NodeData&)> backward) {
        detail::check_finite(value, op);
        Node n;
        n.p_ = std::make_shared<detail::NodeData>();
        n.p_->value = std::move(value);
        n.p_->op = op;
        n.p_->leaf = false;
        for (auto& par : parents) {
            n.p_->requires_grad = n.p_->requires_grad || par.requires_grad();
            n.p_->parents.push_back(par.p_);
        }
        if (n.p_->requires_grad) n.p_->backward = std::move(backward);
        return n;
    }

    [[nodiscard]] detail::NodeData& data() const { return *p_; }

private:
    static Node leaf(Tensor value, bool trainable) {
        detail::check_finite(value, "leaf");
        Node n;
        n.p_ = std::make_shared<detail::NodeData>();
        n.p_->value = std::move(value);
        n.p_->requires_grad = trainable;
        return n;
    }

    std::shared_ptr<detail::NodeData> p_;
};

/// Propagate d(loss)/d(node) to every reachable node that requires a gradient.
///
/// Leaf gradients accumulate across calls until zero_grad(); interior
/// gradients are reset at the start of each call so backward can be re-run.
inline void backward(const Node& loss) {
    if (!loss.value().is_scalar()) {
        throw ContractError("backward: root must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS yields a topological order (parents before children).
    std::vector<detail::NodeData*> order;
    std::unordered_set<detail::NodeData*> seen;
    std::vector<std::pair<detail::NodeData*, std::size_t>> stack;
    stack.emplace_back(&loss.data(), 0);
    seen.insert(&loss.data());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::NodeData* par = node->parents[next++].get();
            if (par->requires_grad && seen.insert(par).second) stack.emplace_back(par, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : order) {
        if (!n->leaf) n->has_grad = false;
    }
    loss.data().grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::NodeData* n = *it;
        if (n->leaf || !n->backward) continue;
        n->grad_buffer();
        n->backward(*n);
    }
    for (auto* n : order) {
        if (n->leaf && n->has_grad) detail::check_finite(n->grad, "backward");
    }
}

namespace detail {

inline Tensor* parent_grad(NodeData& n, std::size_t i) {
    auto& p = *n.parents[i];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

inline const Tensor& parent_value(const NodeData& n, std::size_t i) { return n.parents[i]->value; }

inline void require_rank2(const Node& a, const char* op) {
    if (a.value().rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
    }
}

}  // namespace detail

/// c = a·b for a[m×k], b[k×n].
inline Node matmul(const Node& a, const Node& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const auto& A = a.value();
    const auto& B = b.value();
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (B.rows() != k) {
        throw DimensionError("matmul: inner dims differ, " + shape_str(A.shape()) + " * " + shape_str(B.shape()));
    }
    auto C = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A(i, p);
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) C(i, j) += aip * B(p, j);
        }
    }
    return Node::make("matmul", std::move(C), {a, b}, [m, k, n](detail::NodeData& self) {
        const auto& G = self.grad;
        const auto& A = detail::parent_value(self, 0);
        const auto& B = detail::parent_value(self, 1);
        if (auto* gA = detail::parent_grad(self, 0)) {
            // dA = G·Bᵀ
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += G(i, j) * B(p, j);
                    (*gA)(i, p) += s;
                }
        }
        if (auto* gB = detail::parent_grad(self, 1)) {
            // dB = Aᵀ·G
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A(i, p);
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) (*gB)(p, j) += aip * G(i, j);
                }
        }
    });
}

inline Node transpose(const Node& a) {
    detail::require_rank2(a, "transpose");
    const auto& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    auto T = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) T(j, i) = A(i, j);
    return Node::make("transpose", std::move(T), {a}, [m, n](detail::NodeData& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*g)(i, j) += self.grad(j, i);
        }
    });
}

/// a[n×m] + bias broadcast over rows; bias is [m] or [1×m].
inline Node add_row_bias(const Node& a, const Node& bias) {
    detail::require_rank2(a, "add_row_bias");
    const auto& A = a.value();
    const std::size_t n = A.rows(), m = A.cols();
    if (bias.value().size() != m) {
        throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(a.shape()));
    }
    Tensor out = A;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(i, j) += bias.value()[j];
    return Node::make("add_row_bias", std::move(out), {a, bias}, [n, m](detail::NodeData& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < n * m; ++i) (*g)[i] += self.grad[i];
        }
        if (auto* g = detail::parent_grad(self, 1)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) (*g)[j] += self.grad(i, j);
        }
    });
}

namespace detail {

template <typename Fwd, typename DA, typename DB>
Node elementwise2(const char* op, const Node& a, const Node& b, Fwd fwd, DA da, DB db) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.value()[i], b.value()[i]);
    return Node::make(op, std::move(out), {a, b}, [da, db](NodeData& self) {
        const auto& A = parent_value(self, 0);
        const auto& B = parent_value(self, 1);
        if (auto* g = parent_grad(self, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * da(A[i], B[i]);
        }
        if (auto* g = parent_grad(self, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * db(A[i], B[i]);
        }
    });
}

}  // namespace detail

inline Node add(const Node& a, const Node& b) {
    return detail::elementwise2(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Node sub(const Node& a, const Node& b) {
    return detail::elementwise2(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Node mul(const Node& a, const Node& b) {
    return detail::elementwise2(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Node scale(const Node& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    return Node::make("scale", std::move(out), {a}, [s](detail::NodeData& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
        }
    });
}

inline Node relu(const Node& a) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return Node::make("relu", std::move(out), {a}, [](detail::NodeData& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            const auto& A = detail::parent_value(self, 0);
            for (std::size_t i = 0; i < g->size(); ++i) {
                if (A[i] > 0.0) (*g)[i] += self.grad[i];
            }
        }
    });
}

/// Divide every row by its Euclidean norm.
inline Node l2_normalize(const Node& a) {
    detail::require_rank2(a, "l2_normalize");
    const auto& A = a.value();
    const std::size_t n = A.rows(), d = A.cols();
    std::vector<double> norms(n);
    Tensor out = A;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (double v : A.row(i)) s += v * v;
        norms[i] = std::sqrt(s);
        if (!(norms[i] > 1e-12)) {
            throw DegenerateInputError("l2_normalize: row " + std::to_string(i) + " has near-zero norm");
        }
        for (auto& v : out.row(i)) v /= norms[i];
    }
    return Node::make("l2_normalize", std::move(out), {a}, [n, d, norms](detail::NodeData& self) {
        auto* g = detail::parent_grad(self, 0);
        if (!g) return;
        // dx = (gy - y (y·gy)) / |x|
        for (std::size_t i = 0; i < n; ++i) {
            auto y = self.value.row(i);
            auto gy = self.grad.row(i);
            double yg = 0.0;
            for (std::size_t j = 0; j < d; ++j) yg += y[j] * gy[j];
            auto gx = g->row(i);
            for (std::size_t j = 0; j < d; ++j) gx[j] += (gy[j] - y[j] * yg) / norms[i];
        }
    });
}

/// log Σ exp(aᵢ) with max-subtraction; result is a scalar.
inline Node log_sum_exp(const Node& a) {
    const auto& A = a.value();
    if (A.rank() != 1) throw DimensionError("log_sum_exp: expected a vector, got " + shape_str(A.shape()));
    const double mx = *std::max_element(A.data().begin(), A.data().end());
    double s = 0.0;
    for (double v : A.data()) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    return Node::make("log_sum_exp", Tensor::scalar(lse), {a}, [lse](detail::NodeData& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            const auto& A = detail::parent_value(self, 0);
            const double go = self.grad[0];
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += go * std::exp(A[i] - lse);
        }
    });
}

inline Node sum(const Node& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return Node::make("sum", Tensor::scalar(s), {a}, [](detail::NodeData& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            for (auto& v : g->data()) v += self.grad[0];
        }
    });
}

inline Node mean(const Node& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Σ aᵢbᵢ over same-shaped tensors.
inline Node dot(const Node& a, const Node& b) { return sum(mul(a, b)); }

/// Flat-index gather: out[k] = a[idx[k]] as a vector. Repeated indices accumulate in backward.
inline Node gather(const Node& a, std::vector<std::size_t> idx) {
    if (idx.empty()) throw DimensionError("gather: empty index list");
    std::vector<double> out(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= a.value().size()) throw DimensionError("gather: index out of range");
        out[k] = a.value()[idx[k]];
    }
    return Node::make("gather", Tensor::vector(std::move(out)), {a}, [idx = std::move(idx)](detail::NodeData& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            for (std::size_t k = 0; k < idx.size(); ++k) (*g)[idx[k]] += self.grad[k];
        }
    });
}

/// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets over entries with mask = 1.
inline Node bce_with_logits(const Node& logits, const Tensor& targets, const Tensor& mask) {
    if (targets.shape() != logits.shape() || mask.shape() != logits.shape()) {
        throw DimensionError("bce_with_logits: targets/mask shape must match logits " + shape_str(logits.shape()));
    }
    double count = 0.0;
    for (double m : mask.data()) count += m;
    if (!(count > 0.0)) throw ContractError("bce_with_logits: mask selects no entries");
    const auto& X = logits.value();
    double total = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const double x = X[i];
        // max(x,0) - x*t + log(1 + exp(-|x|))
        total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
    }
    return Node::make("bce_with_logits", Tensor::scalar(total / count), {logits},
                      [targets, mask, count](detail::NodeData& self) {
                          auto* g = detail::parent_grad(self, 0);
                          if (!g) return;
                          const auto& X = detail::parent_value(self, 0);
                          const double go = self.grad[0] / count;
                          for (std::size_t i = 0; i < X.size(); ++i) {
                              if (mask[i] == 0.0) continue;
                              const double s = 1.0 / (1.0 + std::exp(-X[i]));
                              (*g)[i] += go * (s - targets[i]);
                          }
                      });
}

}  // namespace surrocon
