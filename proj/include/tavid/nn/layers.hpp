// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tavid/nn/params.hpp"

namespace tavid::nn {

/// y = x W + b with W stored in x out.
inline Var linear(const Var& x, const Var& W, const Var& b) {
    if (x.cols() != W.rows() || b.rows() != 1 || b.cols() != W.cols())
        throw InputError("linear: shape mismatch x" + x.value().shape_str() + " W" + W.value().shape_str() + " b" +
                         b.value().shape_str());
    return add_row(matmul(x, W), b);
}

/// Per-row normalization followed by an elementwise affine map.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
    return add_row(mul_row(layer_norm(x, eps), gain), bias);
}

/// softmax(Q K^T * scale) V, optionally with an additive mask on the logits.
inline Var attention(const Var& q, const Var& k, const Var& v, double scale, const Tensor* mask = nullptr) {
    if (k.rows() == 0) throw InputError("attention: empty key set");
    if (q.cols() != k.cols()) throw InputError("attention: query/key width mismatch");
    if (k.rows() != v.rows()) throw InputError("attention: key/value count mismatch");
    Var logits = nn::scale(matmul_t(q, k), scale);
    if (mask) logits = add_const(logits, *mask);
    return matmul(softmax_rows(logits), v);
}

/// Attention over `heads` equal column slices of already-projected q, k, v; heads concatenated.
inline Var multi_head(const Var& q, const Var& k, const Var& v, std::size_t heads, const Tensor* mask = nullptr) {
    require(heads > 0 && q.cols() % heads == 0, "multi_head: width must be divisible by heads");
    const std::size_t hd = q.cols() / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(hd));
    if (heads == 1) return attention(q, k, v, s, mask);
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h)
        outs.push_back(
            attention(slice_cols(q, h * hd, hd), slice_cols(k, h * hd, hd), slice_cols(v, h * hd, hd), s, mask));
    return concat_cols(outs);
}

inline Var cross_entropy(const Var& logits, int target) {
    require(logits.rows() == 1, "cross_entropy: expected a single row of logits");
    const int t[1] = {target};
    return cross_entropy_rows(logits, t);
}

/// Lower-triangular additive mask: position i may attend to j <= i.
inline Tensor causal_mask(std::size_t n) {
    Tensor m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m(i, j) = -std::numeric_limits<double>::infinity();
    return m;
}

/// Fixed sinusoidal encoding of (possibly fractional) positions.
inline Tensor sinusoidal_encoding(const std::vector<double>& positions, std::size_t dim, double base = 10000.0) {
    Tensor out(positions.size(), dim);
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (std::size_t j = 0; j < dim; j += 2) {
            const double freq = std::pow(base, -static_cast<double>(j) / static_cast<double>(dim));
            out(i, j) = std::sin(positions[i] * freq);
            if (j + 1 < dim) out(i, j + 1) = std::cos(positions[i] * freq);
        }
    return out;
}

inline Tensor sinusoidal_encoding(std::size_t n, std::size_t dim) {
    std::vector<double> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<double>(i);
    return sinusoidal_encoding(pos, dim);
}

/// Fully connected layer whose weights live in a ParamStore under `name.w` / `name.b`.
class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, std::string name, std::size_t in, std::size_t out, Init init = Init::Uniform)
        : name_(std::move(name)) {
        store.create(name_ + ".w", in, out, init);
        store.create(name_ + ".b", 1, out, Init::Zeros);
    }

    Var operator()(ParamStore& store, const Var& x) const {
        return linear(x, store.var(name_ + ".w"), store.var(name_ + ".b"));
    }

    const std::string& name() const { return name_; }

private:
    std::string name_;
};

/// Layer norm with learned gain (init 1) and bias (init 0).
class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamStore& store, std::string name, std::size_t dim) : name_(std::move(name)) {
        store.create(name_ + ".gain", 1, dim, Init::Ones);
        store.create(name_ + ".bias", 1, dim, Init::Zeros);
    }
    Var operator()(ParamStore& store, const Var& x) const {
        return layer_norm(x, store.var(name_ + ".gain"), store.var(name_ + ".bias"));
    }

private:
    std::string name_;
};

/// Speaker-conditioned layer norm: LN(x) * (1 + g(e)) + h(e), with g and h zero-initialized
/// so a fresh module is a plain layer norm.
class Dsln {
public:
    Dsln() = default;
    Dsln(ParamStore& store, const std::string& name, std::size_t dim, std::size_t cond_dim)
        : gain_(store, name + ".gain", cond_dim, dim, Init::Zeros),
          shift_(store, name + ".shift", cond_dim, dim, Init::Zeros) {}

    Var operator()(ParamStore& store, const Var& x, const Var& e_spk) const {
        if (e_spk.rows() != 1) throw InputError("dsln: speaker embedding must be a single row");
        Var g = gain_(store, e_spk);
        if (g.cols() != x.cols()) throw InputError("dsln: feature width does not match modulation width");
        Var one_plus = add_const(g, Tensor(1, g.cols(), 1.0));
        return add_row(mul_row(layer_norm(x), one_plus), shift_(store, e_spk));
    }

private:
    Linear gain_, shift_;
};

inline Var dsln(ParamStore& store, const Dsln& module, const Var& x, const Var& e_spk) {
    return module(store, x, e_spk);
}

/// Multi-head attention with separate query and key/value sources.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t width, std::size_t heads,
                       std::size_t kv_in = 0, Init out_init = Init::Uniform)
        : heads_(heads),
          q_(store, name + ".q", width, width),
          k_(store, name + ".k", kv_in ? kv_in : width, width),
          v_(store, name + ".v", kv_in ? kv_in : width, width),
          o_(store, name + ".o", width, width, out_init) {
        require(heads > 0 && width % heads == 0, "MultiHeadAttention: width must be divisible by heads");
    }

    Var operator()(ParamStore& store, const Var& x, const Var& context, const Tensor* mask = nullptr) const {
        return o_(store, attend(store, x, context, mask));
    }

    /// Head-concatenated attention output before the output projection.
    Var attend(ParamStore& store, const Var& x, const Var& context, const Tensor* mask = nullptr) const {
        return attend_projected(q_(store, x), k_(store, context), v_(store, context), mask);
    }

    Var attend_projected(const Var& q, const Var& k, const Var& v, const Tensor* mask = nullptr) const {
        return multi_head(q, k, v, heads_, mask);
    }

    const Linear& q() const { return q_; }
    const Linear& k() const { return k_; }
    const Linear& v() const { return v_; }
    const Linear& o() const { return o_; }

private:
    std::size_t heads_ = 1;
    Linear q_, k_, v_, o_;
};

/// Two-layer position-wise MLP with SiLU.
class Mlp {
public:
    Mlp() = default;
    Mlp(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
        Init out_init = Init::Uniform)
        : fc1_(store, name + ".fc1", in, hidden), fc2_(store, name + ".fc2", hidden, out, out_init) {}
    Var operator()(ParamStore& store, const Var& x) const { return fc2_(store, silu(fc1_(store, x))); }

private:
    Linear fc1_, fc2_;
};

}  // namespace tavid::nn
