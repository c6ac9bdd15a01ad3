// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode automatic differentiation over 2-D tensors.
//
// A Var is a handle to a node in a dynamically built graph. Every op returns a new
// node holding its value and a closure that pushes the output gradient into its
// parents. backward() walks the graph in reverse topological order. Leaves created
// from parameters carry a sink pointer; their gradient is added into the sink once
// the sweep is complete.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tavid/nn/tensor.hpp"

namespace tavid::nn {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    Tensor* grad_sink = nullptr;

    Tensor& g() {
        if (grad.size() != value.size()) grad = Tensor(value.rows(), value.cols());
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_->requires_grad; }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

/// Input that never receives a gradient.
inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return Var(std::move(n));
}

/// Differentiable leaf. If sink is given the leaf gradient is accumulated into it.
inline Var leaf(Tensor t, Tensor* sink = nullptr) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->grad_sink = sink;
    return Var(std::move(n));
}

namespace detail {

inline Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (auto& p : parents) {
        n->requires_grad = n->requires_grad || p.requires_grad();
        n->parents.push_back(p.ptr());
    }
    if (n->requires_grad) n->backward_fn = std::move(fn);
    return Var(std::move(n));
}

inline void check_shape(bool ok, const char* op, const Tensor& a, const Tensor& b) {
    if (!ok) throw InputError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace detail

/// Runs the reverse sweep from a scalar (or from an explicit output gradient).
inline void backward(const Var& out, const Tensor* seed = nullptr) {
    if (!out.requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{out.node(), 0}};
    seen.insert(out.node());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    Tensor& g = out.node()->g();
    if (seed) {
        detail::check_shape(seed->same_shape(g), "backward seed", *seed, g);
        g = *seed;
    } else {
        require(g.size() == 1, "backward: output must be scalar without a seed");
        g[0] = 1.0;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        n->g();
        if (n->backward_fn) n->backward_fn(*n);
    }
    for (Node* n : order)
        if (n->grad_sink) *n->grad_sink += n->g();
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
    detail::check_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
    Tensor out(a.rows(), b.cols());
    out.mat().noalias() = a.value().mat() * b.value().mat();
    return detail::make(std::move(out), {a, b}, [](Node& n) {
        Node* a = n.parents[0].get();
        Node* b = n.parents[1].get();
        if (a->requires_grad) a->g().mat().noalias() += n.grad.mat() * b->value.mat().transpose();
        if (b->requires_grad) b->g().mat().noalias() += a->value.mat().transpose() * n.grad.mat();
    });
}

namespace detail {
/// dst += src^T in cache-sized tiles.
inline void transpose_add(const Tensor& src, Tensor& dst) {
    constexpr std::size_t tile = 32;
    const std::size_t R = src.rows(), C = src.cols();
    const double* s = src.values().data();
    double* d = dst.values().data();
    for (std::size_t i0 = 0; i0 < R; i0 += tile)
        for (std::size_t j0 = 0; j0 < C; j0 += tile)
            for (std::size_t i = i0; i < std::min(R, i0 + tile); ++i)
                for (std::size_t j = j0; j < std::min(C, j0 + tile); ++j) d[j * R + i] += s[i * C + j];
}
}  // namespace detail

/// a * b^T
inline Var matmul_t(const Var& a, const Var& b) {
    detail::check_shape(a.cols() == b.cols(), "matmul_t", a.value(), b.value());
    Tensor out(a.rows(), b.rows());
    out.mat().noalias() = a.value().mat() * b.value().mat().transpose();
    return detail::make(std::move(out), {a, b}, [](Node& n) {
        Node* a = n.parents[0].get();
        Node* b = n.parents[1].get();
        if (a->requires_grad) a->g().mat().noalias() += n.grad.mat() * b->value.mat();
        if (b->requires_grad) b->g().mat().noalias() += n.grad.mat().transpose() * a->value.mat();
    });
}

inline Var transpose(const Var& a) {
    Tensor out(a.cols(), a.rows());
    detail::transpose_add(a.value(), out);
    return detail::make(std::move(out), {a}, [](Node& n) { detail::transpose_add(n.grad, n.parents[0]->g()); });
}

// ---------------------------------------------------------------------------
// Elementwise and broadcasting

inline Var add(const Var& a, const Var& b) {
    detail::check_shape(a.value().same_shape(b.value()), "add", a.value(), b.value());
    Tensor out = a.value();
    out += b.value();
    return detail::make(std::move(out), {a, b}, [](Node& n) {
        for (auto& p : n.parents)
            if (p->requires_grad) p->g() += n.grad;
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::check_shape(a.value().same_shape(b.value()), "sub", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return detail::make(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad;
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->g();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    detail::check_shape(a.value().same_shape(b.value()), "mul", a.value(), b.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return detail::make(std::move(out), {a, b}, [](Node& n) {
        Node* a = n.parents[0].get();
        Node* b = n.parents[1].get();
        if (a->requires_grad) {
            Tensor& g = a->g();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->g();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a->value[i];
        }
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= s;
    return detail::make(std::move(out), {a}, [s](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

/// a + c for a constant tensor c (masks, fixed encodings).
inline Var add_const(const Var& a, const Tensor& c) {
    detail::check_shape(a.value().same_shape(c), "add_const", a.value(), c);
    Tensor out = a.value();
    out += c;
    return detail::make(std::move(out), {a}, [](Node& n) { n.parents[0]->g() += n.grad; });
}

/// Adds a 1 x c row to every row of a.
inline Var add_row(const Var& a, const Var& r) {
    detail::check_shape(r.rows() == 1 && r.cols() == a.cols(), "add_row", a.value(), r.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r.value()[j];
    return detail::make(std::move(out), {a, r}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad;
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->g();
            for (std::size_t i = 0; i < n.grad.rows(); ++i)
                for (std::size_t j = 0; j < n.grad.cols(); ++j) g[j] += n.grad(i, j);
        }
    });
}

/// Multiplies every row of a elementwise by the 1 x c row r.
inline Var mul_row(const Var& a, const Var& r) {
    detail::check_shape(r.rows() == 1 && r.cols() == a.cols(), "mul_row", a.value(), r.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= r.value()[j];
    return detail::make(std::move(out), {a, r}, [](Node& n) {
        Node* a = n.parents[0].get();
        Node* r = n.parents[1].get();
        if (a->requires_grad) {
            Tensor& g = a->g();
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += n.grad(i, j) * r->value[j];
        }
        if (r->requires_grad) {
            Tensor& g = r->g();
            for (std::size_t i = 0; i < n.grad.rows(); ++i)
                for (std::size_t j = 0; j < n.grad.cols(); ++j) g[j] += n.grad(i, j) * a->value(i, j);
        }
    });
}

/// Adds an r x 1 column to every column of a.
inline Var add_col(const Var& a, const Var& c) {
    detail::check_shape(c.cols() == 1 && c.rows() == a.rows(), "add_col", a.value(), c.value());
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += c.value()[i];
    return detail::make(std::move(out), {a, c}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad;
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->g();
            for (std::size_t i = 0; i < n.grad.rows(); ++i)
                for (std::size_t j = 0; j < n.grad.cols(); ++j) g[i] += n.grad(i, j);
        }
    });
}

/// Repeats a 1 x c row n times.
inline Var broadcast_rows(const Var& r, std::size_t n) {
    require(r.rows() == 1, "broadcast_rows: expected a single row");
    Tensor out(n, r.cols());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < r.cols(); ++j) out(i, j) = r.value()[j];
    return detail::make(std::move(out), {r}, [](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < n.grad.rows(); ++i)
            for (std::size_t j = 0; j < n.grad.cols(); ++j) g[j] += n.grad(i, j);
    });
}

namespace detail {

template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = f(v);
    return make(std::move(out), {a}, [df](Node& n) {
        Node* a = n.parents[0].get();
        Tensor& g = a->g();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * df(a->value[i], n.value[i]);
    });
}

}  // namespace detail

inline Var tanh(const Var& a) {
    return detail::unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
    return detail::unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var silu(const Var& a) {
    return detail::unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

/// Per-row normalization to zero mean and unit variance (biased variance, eps inside the sqrt).
/// A constant row maps to exact zeros.
inline Var layer_norm(const Var& a, double eps = 1e-5) {
    const std::size_t R = a.rows(), C = a.cols();
    require(C > 0, "layer_norm: empty rows");
    Tensor out(R, C);
    auto inv_std = std::make_shared<std::vector<double>>(R);
    for (std::size_t i = 0; i < R; ++i) {
        auto x = a.value().row_span(i);
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < C; ++j) out(i, j) = (x[j] - mean) * is;
    }
    return detail::make(std::move(out), {a}, [inv_std, C](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < n.value.rows(); ++i) {
            double mean_g = 0.0, mean_gy = 0.0;
            for (std::size_t j = 0; j < C; ++j) {
                mean_g += n.grad(i, j);
                mean_gy += n.grad(i, j) * n.value(i, j);
            }
            mean_g /= static_cast<double>(C);
            mean_gy /= static_cast<double>(C);
            for (std::size_t j = 0; j < C; ++j)
                g(i, j) += (*inv_std)[i] * (n.grad(i, j) - mean_g - n.value(i, j) * mean_gy);
        }
    });
}

inline Var softmax_rows(const Var& a) {
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto x = a.value().row_span(i);
        double m = -std::numeric_limits<double>::infinity();
        for (double v : x) m = std::max(m, v);
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            out(i, j) = std::exp(x[j] - m);
            s += out(i, j);
        }
        for (std::size_t j = 0; j < x.size(); ++j) out(i, j) /= s;
    }
    return detail::make(std::move(out), {a}, [](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < n.value.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n.value.cols(); ++j) dot += n.grad(i, j) * n.value(i, j);
            for (std::size_t j = 0; j < n.value.cols(); ++j) g(i, j) += n.value(i, j) * (n.grad(i, j) - dot);
        }
    });
}

/// Per-row cross entropy against integer targets; returns an n x 1 column of losses.
inline Var cross_entropy_rows(const Var& logits, std::span<const int> targets) {
    const std::size_t R = logits.rows(), C = logits.cols();
    require(targets.size() == R, "cross_entropy_rows: target count does not match rows");
    Tensor out(R, 1);
    auto probs = std::make_shared<Tensor>(R, C);
    std::vector<int> tg(targets.begin(), targets.end());
    for (std::size_t i = 0; i < R; ++i) {
        require(tg[i] >= 0 && static_cast<std::size_t>(tg[i]) < C, "cross_entropy: target index out of range");
        auto x = logits.value().row_span(i);
        double m = -std::numeric_limits<double>::infinity();
        for (double v : x) m = std::max(m, v);
        double s = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            (*probs)(i, j) = std::exp(x[j] - m);
            s += (*probs)(i, j);
        }
        for (std::size_t j = 0; j < C; ++j) (*probs)(i, j) /= s;
        out(i, 0) = std::log(s) + m - x[static_cast<std::size_t>(tg[i])];
    }
    return detail::make(std::move(out), {logits}, [probs, tg = std::move(tg)](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < g.rows(); ++i) {
            const double gi = n.grad(i, 0);
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += gi * (*probs)(i, j);
            g(i, static_cast<std::size_t>(tg[i])) -= gi;
        }
    });
}

/// Binary cross entropy with logits, per element; targets in {0,1}.
inline Var bce_logits(const Var& logits, const Tensor& targets) {
    detail::check_shape(logits.value().same_shape(targets), "bce_logits", logits.value(), targets);
    Tensor out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = logits.value()[i];
        // log(1 + exp(-|x|)) + max(x, 0) - x * y
        out[i] = std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * targets[i];
    }
    return detail::make(std::move(out), {logits}, [targets](Node& n) {
        Node* a = n.parents[0].get();
        Tensor& g = a->g();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-a->value[i]));
            g[i] += n.grad[i] * (s - targets[i]);
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return detail::make(Tensor::scalar(s), {a}, [](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (auto& v : g.values()) v += n.grad[0];
    });
}

inline Var mean_all(const Var& a) {
    require(a.value().size() > 0, "mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var sum_squares(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v * v;
    return detail::make(Tensor::scalar(s), {a}, [](Node& n) {
        Node* a = n.parents[0].get();
        Tensor& g = a->g();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * n.grad[0] * a->value[i];
    });
}

/// Mean over rows -> 1 x c.
inline Var mean_rows(const Var& a) {
    require(a.rows() > 0, "mean_rows: no rows");
    Tensor out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a.value()(i, j);
    const double inv = 1.0 / static_cast<double>(a.rows());
    for (auto& v : out.values()) v *= inv;
    return detail::make(std::move(out), {a}, [inv](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += n.grad[j] * inv;
    });
}

/// Averages consecutive groups of k rows; rows must be a multiple of k.
inline Var avg_pool_rows(const Var& a, std::size_t k) {
    require(k > 0 && a.rows() % k == 0, "avg_pool_rows: rows not divisible by pool factor");
    const std::size_t R = a.rows() / k;
    Tensor out(R, a.cols());
    const double inv = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i / k, j) += a.value()(i, j) * inv;
    return detail::make(std::move(out), {a}, [k, inv](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += n.grad(i / k, j) * inv;
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: nothing to concatenate");
    const std::size_t R = parts[0].rows();
    std::size_t C = 0;
    for (const auto& p : parts) {
        detail::check_shape(p.rows() == R, "concat_cols", parts[0].value(), p.value());
        C += p.cols();
    }
    Tensor out(R, C);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
        off += p.cols();
    }
    return detail::make(std::move(out), parts, [](Node& n) {
        std::size_t off = 0;
        for (auto& p : n.parents) {
            const std::size_t c = p->value.cols();
            if (p->requires_grad) {
                Tensor& g = p->g();
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < c; ++j) g(i, j) += n.grad(i, off + j);
            }
            off += c;
        }
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: nothing to concatenate");
    const std::size_t C = parts[0].cols();
    std::size_t R = 0;
    for (const auto& p : parts) {
        detail::check_shape(p.cols() == C, "concat_rows", parts[0].value(), p.value());
        R += p.rows();
    }
    Tensor out(R, C);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().values().begin(), p.value().values().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(off * C));
        off += p.rows();
    }
    return detail::make(std::move(out), parts, [C](Node& n) {
        std::size_t off = 0;
        for (auto& p : n.parents) {
            const std::size_t r = p->value.rows();
            if (p->requires_grad) {
                Tensor& g = p->g();
                for (std::size_t i = 0; i < r * C; ++i) g[i] += n.grad[off * C + i];
            }
            off += r;
        }
    });
}

inline Var slice_rows(const Var& a, std::size_t start, std::size_t count) {
    require(start + count <= a.rows(), "slice_rows: range out of bounds");
    const std::size_t C = a.cols();
    Tensor out(count, C);
    std::copy_n(a.value().values().begin() + static_cast<std::ptrdiff_t>(start * C), count * C,
                out.values().begin());
    return detail::make(std::move(out), {a}, [start, C](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[start * C + i] += n.grad[i];
    });
}

inline Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
    require(start + count <= a.cols(), "slice_cols: range out of bounds");
    Tensor out(a.rows(), count);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = a.value()(i, start + j);
    return detail::make(std::move(out), {a}, [start, count](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < count; ++j) g(i, start + j) += n.grad(i, j);
    });
}

/// Repeats each row k times (nearest-neighbour upsampling along rows).
inline Var repeat_rows(const Var& a, std::size_t k) {
    Tensor out(a.rows() * k, a.cols());
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a.value()(i / k, j);
    return detail::make(std::move(out), {a}, [k](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < n.grad.rows(); ++i)
            for (std::size_t j = 0; j < n.grad.cols(); ++j) g(i / k, j) += n.grad(i, j);
    });
}

/// Row gather: out[i] = table[indices[i]].
inline Var embed_lookup(std::span<const int> indices, const Var& table) {
    Tensor out(indices.size(), table.cols());
    std::vector<int> idx(indices.begin(), indices.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && static_cast<std::size_t>(idx[i]) < table.rows(),
                "embed_lookup: index " + std::to_string(idx[i]) + " out of range");
        auto src = table.value().row_span(static_cast<std::size_t>(idx[i]));
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return detail::make(std::move(out), {table}, [idx = std::move(idx)](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto dst = g.row_span(static_cast<std::size_t>(idx[i]));
            auto src = n.grad.row_span(i);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    });
}

// ---------------------------------------------------------------------------
// Image-style ops. A batch of B feature maps with C channels of size H x W is laid
// out as a C x (B*H*W) matrix; image b owns columns [b*H*W, (b+1)*H*W).

struct MapShape {
    std::size_t channels, height, width, batch;
    std::size_t pixels() const { return height * width; }
};

namespace detail {
/// Calls f(row, dst_offset, src_offset, run) for every contiguous run of valid taps, where
/// row indexes the patch matrix and offsets are column offsets within one image.
template <class F>
void for_each_tap_run(const MapShape& s, std::size_t k, F&& f) {
    const long pad = static_cast<long>(k / 2);
    const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
    for (std::size_t c = 0; c < s.channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t row = (c * k + ky) * k + kx;
                const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
                const long w0 = std::max(0L, -dx), w1 = std::min(W, W - dx);
                if (w1 <= w0) continue;
                for (long h = std::max(0L, -dy); h < std::min(H, H - dy); ++h)
                    f(row, c, static_cast<std::size_t>(h * W + w0), static_cast<std::size_t>((h + dy) * W + w0 + dx),
                      static_cast<std::size_t>(w1 - w0));
            }
}
}  // namespace detail

/// Patch extraction for a k x k convolution with zero padding k/2 (same-size output).
inline Var im2col(const Var& x, MapShape s, std::size_t k = 3) {
    require(x.rows() == s.channels && x.cols() == s.batch * s.pixels(), "im2col: input does not match map shape");
    Tensor out(s.channels * k * k, x.cols());
    const Tensor& xv = x.value();
    detail::for_each_tap_run(s, k, [&](std::size_t row, std::size_t c, std::size_t dst, std::size_t src, std::size_t n) {
        for (std::size_t b = 0; b < s.batch; ++b) {
            const std::size_t base = b * s.pixels();
            const double* from = &xv.values()[c * xv.cols() + base + src];
            double* to = &out.values()[row * out.cols() + base + dst];
            for (std::size_t i = 0; i < n; ++i) to[i] = from[i];
        }
    });
    return detail::make(std::move(out), {x}, [s, k](Node& n) {
        Tensor& g = n.parents[0]->g();
        const std::size_t gc = g.cols(), oc = n.grad.cols();
        detail::for_each_tap_run(s, k, [&](std::size_t row, std::size_t c, std::size_t dst, std::size_t src, std::size_t len) {
            for (std::size_t b = 0; b < s.batch; ++b) {
                const std::size_t base = b * s.pixels();
                const double* from = &n.grad.values()[row * oc + base + dst];
                double* to = &g.values()[c * gc + base + src];
                for (std::size_t i = 0; i < len; ++i) to[i] += from[i];
            }
        });
    });
}

/// Spatial mean per image: C x (B*H*W) -> B x C.
inline Var global_avg_pool(const Var& x, MapShape s) {
    require(x.rows() == s.channels && x.cols() == s.batch * s.pixels(), "global_avg_pool: shape mismatch");
    Tensor out(s.batch, s.channels);
    const double inv = 1.0 / static_cast<double>(s.pixels());
    for (std::size_t c = 0; c < s.channels; ++c)
        for (std::size_t b = 0; b < s.batch; ++b) {
            double acc = 0.0;
            for (std::size_t p = 0; p < s.pixels(); ++p) acc += x.value()(c, b * s.pixels() + p);
            out(b, c) = acc * inv;
        }
    return detail::make(std::move(out), {x}, [s, inv](Node& n) {
        Tensor& g = n.parents[0]->g();
        for (std::size_t c = 0; c < s.channels; ++c)
            for (std::size_t b = 0; b < s.batch; ++b)
                for (std::size_t p = 0; p < s.pixels(); ++p) g(c, b * s.pixels() + p) += n.grad(b, c) * inv;
    });
}

}  // namespace tavid::nn
