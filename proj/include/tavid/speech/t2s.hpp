// SPDX-License-Identifier: Apache-2.0
#pragma once

// Text-to-semantic model: a transformer encoder over text tokens and an autoregressive
// decoder that advances both token streams together.
//
// The two streams run through one decoder pass as stacked rows. The self-attention mask is
// causal within a stream and blocks the other stream, so head j at step i sees s_j^{<i} and
// the encoded text only. A stop head over both streams' states ends decoding.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "tavid/data/tokens.hpp"
#include "tavid/nn/layers.hpp"
#include "tavid/nn/loop.hpp"
#include "tavid/speech/text.hpp"
#include "tavid/visual/diffusion.hpp"

namespace tavid::speech {

using nn::ParamStore;
using nn::Tensor;
using nn::Var;

struct T2SConfig {
    int vocab = data::kDefaultVocab;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
};

struct T2SLogits {
    Var head1;  ///< T x V
    Var head2;  ///< T x V
    Var stop;   ///< T x 1; row i predicts that step i is the last
};

class T2SModel {
public:
    T2SModel() = default;
    T2SModel(ParamStore& store, T2SConfig cfg, std::string prefix = "t2s") : cfg_(cfg), p_(std::move(prefix)) {
        const std::size_t w = cfg.width;
        store.create(p_ + ".text_emb", kTextKinds, w, nn::Init::Normal, 1.0);
        store.create(p_ + ".spk_emb", 3, w, nn::Init::Normal, 1.0);
        store.create(p_ + ".null_text", 1, w, nn::Init::Normal, 1.0);
        store.create(p_ + ".tok_emb", static_cast<std::size_t>(cfg.vocab) + 1, w, nn::Init::Normal, 1.0);
        store.create(p_ + ".stream_emb", 2, w, nn::Init::Normal, 1.0);
        for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
            const std::string n = p_ + ".enc" + std::to_string(l);
            enc_.push_back({nn::LayerNorm(store, n + ".norm1", w), nn::MultiHeadAttention(store, n + ".attn", w, cfg.heads),
                            nn::LayerNorm(store, n + ".norm2", w), nn::Mlp(store, n + ".mlp", w, 2 * w, w)});
        }
        enc_norm_ = nn::LayerNorm(store, p_ + ".enc_norm", w);
        for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
            const std::string n = p_ + ".dec" + std::to_string(l);
            DecLayer d;
            d.norm1 = nn::LayerNorm(store, n + ".norm1", w);
            d.self = nn::MultiHeadAttention(store, n + ".self", w, cfg.heads);
            d.norm2 = nn::LayerNorm(store, n + ".norm2", w);
            d.cross = nn::MultiHeadAttention(store, n + ".cross", w, cfg.heads);
            d.norm3 = nn::LayerNorm(store, n + ".norm3", w);
            d.mlp = nn::Mlp(store, n + ".mlp", w, 2 * w, w);
            dec_.push_back(std::move(d));
        }
        dec_norm_ = nn::LayerNorm(store, p_ + ".dec_norm", w);
        head1_ = nn::Linear(store, p_ + ".head1", w, static_cast<std::size_t>(cfg.vocab));
        head2_ = nn::Linear(store, p_ + ".head2", w, static_cast<std::size_t>(cfg.vocab));
        stop_ = nn::Linear(store, p_ + ".stop", 2 * w, 1);
    }

    const T2SConfig& config() const { return cfg_; }
    const std::string& prefix() const { return p_; }
    int bos() const { return cfg_.vocab; }

    /// Encoder memory for x; the null text row stands in for dropped text.
    Var encode(ParamStore& store, const TextTokens& x) const {
        if (x.ids.empty()) throw InputError("t2s: empty text");
        const TextLayout L = text_layout(x);
        Var h = nn::add(nn::embed_lookup(L.kind, store.var(p_ + ".text_emb")),
                        nn::embed_lookup(L.speaker, store.var(p_ + ".spk_emb")));
        h = nn::add_const(h, nn::sinusoidal_encoding(L.time, cfg_.width));
        for (const auto& l : enc_) {
            const Var n = l.norm1(store, h);
            h = nn::add(h, l.attn(store, n, n));
            h = nn::add(h, l.mlp(store, l.norm2(store, h)));
        }
        return enc_norm_(store, h);
    }

    Var null_memory(ParamStore& store) const { return store.var(p_ + ".null_text"); }

    /// Teacher-forced logits: row i of head j is computed from s_j[0..i) and the memory.
    T2SLogits decode(ParamStore& store, const Var& memory, const std::vector<int>& s1,
                     const std::vector<int>& s2) const {
        if (s1.size() != s2.size()) throw InputError("t2s: streams differ in length");
        const std::size_t T = s1.size();
        if (T == 0) throw InputError("t2s: empty streams");
        std::vector<int> prev(2 * T), stream(2 * T);
        std::vector<double> pos(2 * T);
        for (std::size_t j = 0; j < 2; ++j) {
            const auto& s = j == 0 ? s1 : s2;
            for (std::size_t i = 0; i < T; ++i) {
                const int tok = i == 0 ? bos() : s[i - 1];
                if (tok < 0 || tok > bos()) throw InputError("t2s: token " + std::to_string(tok) + " out of range");
                prev[j * T + i] = tok;
                stream[j * T + i] = static_cast<int>(j);
                pos[j * T + i] = static_cast<double>(i);
            }
        }
        Var h = nn::add(nn::embed_lookup(prev, store.var(p_ + ".tok_emb")),
                        nn::embed_lookup(stream, store.var(p_ + ".stream_emb")));
        h = nn::add_const(h, nn::sinusoidal_encoding(pos, cfg_.width));
        const Tensor mask = stream_mask(T);
        for (const auto& l : dec_) {
            const Var n = l.norm1(store, h);
            h = nn::add(h, l.self(store, n, n, &mask));
            h = nn::add(h, l.cross(store, l.norm2(store, h), memory));
            h = nn::add(h, l.mlp(store, l.norm3(store, h)));
        }
        h = dec_norm_(store, h);
        const Var h1 = nn::slice_rows(h, 0, T), h2 = nn::slice_rows(h, T, T);
        return {head1_(store, h1), head2_(store, h2), stop_(store, nn::concat_cols({h1, h2}))};
    }

    /// Block-diagonal causal mask over the stacked [stream 1; stream 2] rows.
    static Tensor stream_mask(std::size_t T) {
        const double inf = std::numeric_limits<double>::infinity();
        Tensor m(2 * T, 2 * T, -inf);
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t a = 0; a < T; ++a)
                for (std::size_t b = 0; b <= a; ++b) m(j * T + a, j * T + b) = 0.0;
        return m;
    }

private:
    struct EncLayer {
        nn::LayerNorm norm1;
        nn::MultiHeadAttention attn;
        nn::LayerNorm norm2;
        nn::Mlp mlp;
    };
    struct DecLayer {
        nn::LayerNorm norm1, norm2, norm3;
        nn::MultiHeadAttention self, cross;
        nn::Mlp mlp;
    };

    T2SConfig cfg_;
    std::string p_;
    std::vector<EncLayer> enc_;
    std::vector<DecLayer> dec_;
    nn::LayerNorm enc_norm_, dec_norm_;
    nn::Linear head1_, head2_, stop_;
};

/// Per-row cross entropies, stream 1 rows then stream 2 rows (2T x 1).
inline Var t2s_terms(const T2SLogits& out, const data::TokenStreams& S) {
    if (out.head1.rows() != S.length() || S.s1.size() != S.s2.size())
        throw InputError("t2s_loss: logits cover " + std::to_string(out.head1.rows()) + " steps, streams have " +
                         std::to_string(S.s1.size()) + " and " + std::to_string(S.s2.size()));
    return nn::concat_rows({nn::cross_entropy_rows(out.head1, S.s1), nn::cross_entropy_rows(out.head2, S.s2)});
}

/// Mean over both streams and all positions of -log P(s_j^i | s_j^{<i}, x).
inline Var t2s_loss(ParamStore& store, const T2SModel& model, const TextTokens& x, const data::TokenStreams& S) {
    if (S.s1.size() != S.s2.size()) throw InputError("t2s_loss: streams differ in length");
    return nn::mean_all(t2s_terms(model.decode(store, model.encode(store, x), S.s1, S.s2), S));
}

inline Var stop_loss(const T2SLogits& out) {
    const std::size_t T = out.stop.rows();
    Tensor target(T, 1);
    target(T - 1, 0) = 1.0;
    return nn::mean_all(nn::bce_logits(out.stop, target));
}

// ---------------------------------------------------------------------------
// Decoding

/// Top-k support of `cond`; guided logits uncond + s (cond - uncond) there, -inf elsewhere.
/// Rows are filtered independently; ties keep the lower index.
inline Tensor cfg_filter_logits(const Tensor& cond, const Tensor& uncond, double scale, int k) {
    const auto V = static_cast<int>(cond.cols());
    if (k < 1 || k > V) throw InputError("cfg_filter_logits: k = " + std::to_string(k) + " outside [1, " + std::to_string(V) + "]");
    const Tensor guided = visual::cfg_combine(cond, uncond, scale);
    if (k == V) return guided;
    Tensor out(cond.rows(), cond.cols(), -std::numeric_limits<double>::infinity());
    std::vector<int> idx(static_cast<std::size_t>(V));
    for (std::size_t r = 0; r < cond.rows(); ++r) {
        for (int i = 0; i < V; ++i) idx[static_cast<std::size_t>(i)] = i;
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
            const double va = cond(r, static_cast<std::size_t>(a)), vb = cond(r, static_cast<std::size_t>(b));
            return va > vb || (va == vb && a < b);
        });
        for (int i = 0; i < k; ++i) {
            const auto c = static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]);
            out(r, c) = guided(r, c);
        }
    }
    return out;
}

struct SamplingConfig {
    double temperature = 1.0;  ///< <= 0 means greedy
    int top_k = 0;             ///< 0 keeps the whole support
    double cfg_scale = 1.0;    ///< 1 disables guidance and the uncond pass
    int cfg_k = 32;
    std::size_t max_len = 512;
    std::uint64_t seed = 0;
};

struct DecodeResult {
    data::TokenStreams streams;
    bool truncated = false;  ///< max_len reached before the stop head fired
};

/// Index of the first maximum.
inline int argmax_row(std::span<const double> x) {
    return static_cast<int>(std::max_element(x.begin(), x.end()) - x.begin());
}

/// Draws one index from a row of logits. Always consumes exactly one uniform.
inline int sample_logits(std::span<const double> logits, double temperature, int top_k, Rng& rng) {
    const double u = rng.uniform();
    if (temperature <= 0.0) return argmax_row(logits);
    const std::size_t V = logits.size();
    std::vector<double> z(logits.begin(), logits.end());
    if (top_k > 0 && static_cast<std::size_t>(top_k) < V) {
        std::vector<double> sorted = z;
        std::nth_element(sorted.begin(), sorted.begin() + (top_k - 1), sorted.end(), std::greater<>());
        const double cut = sorted[static_cast<std::size_t>(top_k - 1)];
        int kept = 0;
        for (auto& v : z) {
            if (v >= cut && kept < top_k) {
                ++kept;
            } else {
                v = -std::numeric_limits<double>::infinity();
            }
        }
    }
    const int best = argmax_row(z);
    const double m = z[static_cast<std::size_t>(best)];
    if (!std::isfinite(m)) throw NumericalError("sample_logits: no finite logit");
    std::vector<double> p(V);
    double total = 0.0;
    for (std::size_t i = 0; i < V; ++i) total += p[i] = std::exp((z[i] - m) / temperature);
    double acc = 0.0;
    for (std::size_t i = 0; i < V; ++i) {
        acc += p[i] / total;
        if (u < acc) return static_cast<int>(i);
    }
    return best;
}

inline DecodeResult decode_semantic(ParamStore& store, const T2SModel& model, const TextTokens& x,
                                    const SamplingConfig& sc) {
    require(sc.max_len >= 1, "decode_semantic: max_len must be at least 1");
    const Var memory = model.encode(store, x);
    const bool guided = sc.cfg_scale != 1.0;
    const Var null_mem = guided ? model.null_memory(store) : Var();
    Rng rng(derive_seed(sc.seed, "t2s.decode"));
    DecodeResult r;
    r.streams.vocab_size = model.config().vocab;
    r.truncated = true;
    auto& s1 = r.streams.s1;
    auto& s2 = r.streams.s2;
    while (s1.size() < sc.max_len) {
        // The step's own token is a placeholder: row i never sees position i.
        s1.push_back(0);
        s2.push_back(0);
        const std::size_t i = s1.size() - 1;
        const T2SLogits c = model.decode(store, memory, s1, s2);
        T2SLogits u;
        if (guided) u = model.decode(store, null_mem, s1, s2);
        for (int j = 0; j < 2; ++j) {
            const Var& head = j == 0 ? c.head1 : c.head2;
            Tensor row = nn::slice_rows(head, i, 1).value();
            if (guided)
                row = cfg_filter_logits(row, nn::slice_rows(j == 0 ? u.head1 : u.head2, i, 1).value(), sc.cfg_scale,
                                        std::min(sc.cfg_k, model.config().vocab));
            for (double v : row.values())
                if (std::isnan(v)) throw NumericalError("decode_semantic: NaN logit at step " + std::to_string(i));
            (j == 0 ? s1 : s2)[i] = sample_logits(row.row_span(0), sc.temperature, sc.top_k, rng);
        }
        if (c.stop.value()(i, 0) > 0.0) {
            r.truncated = false;
            break;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Training

struct T2SExample {
    TextTokens text;
    data::TokenStreams streams;
};

struct T2STrainConfig {
    T2SConfig model;
    std::int64_t steps = 2000;
    std::size_t batch = 4;
    double lr = 2e-3;
    double text_dropout = 0.1;
};

/// Teacher-forced cross entropy plus the stop head's loss, batch mean.
inline void train_t2s(ParamStore& store, const T2SModel& model, const std::vector<T2SExample>& data,
                      const T2STrainConfig& cfg, std::uint64_t seed, const nn::StepHooks& hooks = {}) {
    if (data.empty()) throw InputError("train_t2s: no examples");
    nn::AdamConfig adam;
    adam.lr = cfg.lr;
    auto step_fn = [&](std::int64_t, Rng& rng) {
        std::vector<Var> losses;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto& ex = data[rng.below(data.size())];
            const Var memory = rng.bernoulli(cfg.text_dropout) ? model.null_memory(store) : model.encode(store, ex.text);
            const T2SLogits out = model.decode(store, memory, ex.streams.s1, ex.streams.s2);
            losses.push_back(nn::add(nn::mean_all(t2s_terms(out, ex.streams)), stop_loss(out)));
        }
        Var total = losses[0];
        for (std::size_t b = 1; b < losses.size(); ++b) total = nn::add(total, losses[b]);
        const Var loss = nn::scale(total, 1.0 / static_cast<double>(losses.size()));
        nn::backward(loss);
        return loss.value()[0];
    };
    nn::run_steps(store, cfg.steps, step_fn, seed, "t2s.step", adam, {}, hooks, nn::cosine_schedule(cfg.lr, cfg.steps));
}

}  // namespace tavid::speech
