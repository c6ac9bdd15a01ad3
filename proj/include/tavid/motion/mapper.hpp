// SPDX-License-Identifier: Apache-2.0
#pragma once

// Motion Mapper: dual-stream token features -> interactive motion features c_mot.
//
// Four integration strategies share one interface:
//   add    - position-wise projection of s1 + s2 (cannot tell the streams apart)
//   concat - position-wise projection of [s1 | s2]
//   dual   - per-stream cross-attention from video hidden states, summed
//   joint  - MMDiT-style block: per-stream modulation, one joint self-attention over
//            the concatenated sequences, per-stream post-modulation, then three
//            linear layers over the feature-concatenated streams
//
// Every strategy emits one row per token position. Reducing to video frame rate is
// left to the consumer.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tavid/nn/layers.hpp"

namespace tavid::motion {

using nn::ParamStore;
using nn::Tensor;
using nn::Var;

enum class Strategy { Add, Concat, Dual, Joint };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::Add: return "add";
        case Strategy::Concat: return "concat";
        case Strategy::Dual: return "dual";
        case Strategy::Joint: return "joint";
    }
    return "?";
}

inline Strategy parse_strategy(std::string_view s) {
    if (s == "add") return Strategy::Add;
    if (s == "concat") return Strategy::Concat;
    if (s == "dual") return Strategy::Dual;
    if (s == "joint") return Strategy::Joint;
    throw InputError("unknown motion_mapper.strategy '" + std::string(s) + "' (expected add, concat, dual, joint)");
}

struct MapperConfig {
    Strategy strategy = Strategy::Joint;
    std::size_t token_dim = 16;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t depth = 2;
    std::size_t motion_dim = 32;  ///< d_mot
    std::size_t max_len = 512;    ///< rows in the dual-attention query bank
    bool tie_branches = false;    ///< share per-stream parameters in joint/dual
};

struct MotionFeatures {
    Tensor c_mot;  ///< tokens x motion_dim
    Strategy strategy = Strategy::Joint;
};

/// Per-stream outputs of the joint blocks, before feature fusion.
struct JointBranches {
    Var stream1;
    Var stream2;
};

class MotionMapper {
public:
    MotionMapper() = default;
    MotionMapper(ParamStore& store, MapperConfig cfg, std::string prefix = "mapper")
        : cfg_(cfg), prefix_(std::move(prefix)) {
        require(cfg.width % cfg.heads == 0, "MapperConfig: width must be divisible by heads");
        const auto& w = cfg.width;
        switch (cfg.strategy) {
            case Strategy::Add:
                proj_ = head3(store, "proj", cfg.token_dim);
                break;
            case Strategy::Concat:
                proj_ = head3(store, "proj", 2 * cfg.token_dim);
                break;
            case Strategy::Dual:
                for (int j = 1; j <= 2; ++j) {
                    const std::string b = branch(j);
                    in_[j - 1] = nn::Linear(store, b + ".in", cfg.token_dim, w);
                    dual_k_[j - 1] = nn::Linear(store, b + ".k", w, w);
                    dual_v_[j - 1] = nn::Linear(store, b + ".v", w, w);
                }
                dual_q_ = nn::Linear(store, prefix_ + ".dual.q", w, w);
                dual_o_ = nn::Linear(store, prefix_ + ".dual.o", w, w);
                store.create(prefix_ + ".query_bank", cfg.max_len, w, nn::Init::Normal, 0.1);
                proj_ = head3(store, "out", w);
                break;
            case Strategy::Joint:
                for (int j = 1; j <= 2; ++j) in_[j - 1] = nn::Linear(store, branch(j) + ".in", cfg.token_dim, w);
                for (std::size_t d = 0; d < cfg.depth; ++d) {
                    Block blk;
                    for (int j = 1; j <= 2; ++j) {
                        const std::string b = branch(j) + ".block" + std::to_string(d);
                        blk.pre_norm[j - 1] = nn::LayerNorm(store, b + ".pre_norm", w);
                        blk.pre_lin[j - 1] = nn::Linear(store, b + ".pre_lin", w, w);
                        blk.post_norm[j - 1] = nn::LayerNorm(store, b + ".post_norm", w);
                        blk.post_lin[j - 1] = nn::Linear(store, b + ".post_lin", w, w, nn::Init::Zeros);
                        blk.mlp_norm[j - 1] = nn::LayerNorm(store, b + ".mlp_norm", w);
                        blk.mlp[j - 1] = nn::Mlp(store, b + ".mlp", w, 2 * w, w, nn::Init::Zeros);
                    }
                    blk.attn = nn::MultiHeadAttention(store, prefix_ + ".joint" + std::to_string(d), w, cfg.heads);
                    blocks_.push_back(std::move(blk));
                }
                proj_ = head3(store, "fuse", 2 * w);
                break;
        }
    }

    const MapperConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

    /// c_mot for a pair of token-feature matrices (tokens x token_dim each).
    Var forward(ParamStore& store, const Var& s1, const Var& s2) const {
        check_pair(s1, s2);
        switch (cfg_.strategy) {
            case Strategy::Add: return apply_head(store, nn::add(s1, s2));
            case Strategy::Concat: return apply_head(store, nn::concat_cols({s1, s2}));
            case Strategy::Dual:
                return apply_head(store, dual_o_(store, dual_attention(store, s1, s2, query_bank(store, s1.rows()))));
            case Strategy::Joint: {
                auto br = joint_branches(store, s1, s2);
                return apply_head(store, nn::concat_cols({br.stream1, br.stream2}));
            }
        }
        throw InputError("unreachable strategy");
    }

    /// Sum of the two per-stream cross-attentions from `video_hidden` (rows x width), before
    /// the shared output projection.
    Var dual_attention(ParamStore& store, const Var& s1, const Var& s2, const Var& video_hidden) const {
        require(cfg_.strategy == Strategy::Dual, "dual_attention: mapper not built with the dual strategy");
        check_pair(s1, s2);
        require(static_cast<bool>(video_hidden), "dual_attention: video hidden states are required");
        require(video_hidden.cols() == cfg_.width, "dual_attention: video hidden width mismatch");
        const Var q = dual_q_(store, video_hidden);
        Var sum;
        const Var* streams[2] = {&s1, &s2};
        for (int j = 0; j < 2; ++j) {
            const Var h = embed_stream(store, j, *streams[j]);
            const Var a = nn::multi_head(q, dual_k_[j](store, h), dual_v_[j](store, h), cfg_.heads);
            sum = j == 0 ? a : nn::add(sum, a);
        }
        return sum;
    }

    /// Learned stand-in for video hidden states when the mapper is trained on its own.
    Var query_bank(ParamStore& store, std::size_t rows) const {
        require(rows <= cfg_.max_len, "query_bank: sequence longer than max_len");
        Var bank = nn::slice_rows(store.var(prefix_ + ".query_bank"), 0, rows);
        return nn::add_const(bank, nn::sinusoidal_encoding(rows, cfg_.width));
    }

    JointBranches joint_branches(ParamStore& store, const Var& s1, const Var& s2) const {
        require(cfg_.strategy == Strategy::Joint, "joint_branches: mapper not built with the joint strategy");
        check_pair(s1, s2);
        const std::size_t T = s1.rows();
        Var h[2] = {embed_stream(store, 0, s1), embed_stream(store, 1, s2)};
        for (const auto& blk : blocks_) {
            Var x[2];
            for (int j = 0; j < 2; ++j) x[j] = blk.pre_lin[j](store, blk.pre_norm[j](store, h[j]));
            const Var joint = nn::concat_rows({x[0], x[1]});
            const Var a = blk.attn(store, joint, joint);
            for (int j = 0; j < 2; ++j) {
                const Var part = nn::slice_rows(a, static_cast<std::size_t>(j) * T, T);
                h[j] = nn::add(h[j], blk.post_lin[j](store, blk.post_norm[j](store, part)));
                h[j] = nn::add(h[j], blk.mlp[j](store, blk.mlp_norm[j](store, h[j])));
            }
        }
        return {h[0], h[1]};
    }

private:
    struct Block {
        nn::LayerNorm pre_norm[2], post_norm[2], mlp_norm[2];
        nn::Linear pre_lin[2], post_lin[2];
        nn::Mlp mlp[2];
        nn::MultiHeadAttention attn;
    };
    struct Head3 {
        nn::Linear l1, l2, l3;
    };

    std::string branch(int j) const {
        return prefix_ + (cfg_.tie_branches ? std::string(".branch") : ".branch" + std::to_string(j));
    }

    Head3 head3(ParamStore& store, const std::string& name, std::size_t in) const {
        const std::string p = prefix_ + "." + name;
        return {nn::Linear(store, p + ".l1", in, cfg_.width), nn::Linear(store, p + ".l2", cfg_.width, cfg_.width),
                nn::Linear(store, p + ".l3", cfg_.width, cfg_.motion_dim)};
    }

    Var apply_head(ParamStore& store, const Var& x) const {
        return proj_.l3(store, nn::silu(proj_.l2(store, nn::silu(proj_.l1(store, x)))));
    }

    Var embed_stream(ParamStore& store, int j, const Var& s) const {
        return nn::add_const(in_[j](store, s), nn::sinusoidal_encoding(s.rows(), cfg_.width));
    }

    void check_pair(const Var& s1, const Var& s2) const {
        if (s1.rows() != s2.rows())
            throw InputError("motion mapper: stream lengths differ (" + std::to_string(s1.rows()) + " vs " +
                             std::to_string(s2.rows()) + ")");
        require(s1.rows() >= 1, "motion mapper: empty streams");
        require(s1.cols() == cfg_.token_dim && s2.cols() == cfg_.token_dim, "motion mapper: token feature width mismatch");
    }

    MapperConfig cfg_;
    std::string prefix_;
    nn::Linear in_[2];
    nn::Linear dual_k_[2], dual_v_[2], dual_q_, dual_o_;
    std::vector<Block> blocks_;
    Head3 proj_;
};

namespace detail {
inline MotionFeatures run(ParamStore& store, const MotionMapper& m, const Tensor& s1, const Tensor& s2) {
    return {m.forward(store, nn::constant(s1), nn::constant(s2)).value(), m.config().strategy};
}
}  // namespace detail

inline MotionFeatures map_add(ParamStore& store, const MotionMapper& m, const Tensor& s1, const Tensor& s2) {
    require(m.config().strategy == Strategy::Add, "map_add: mapper uses a different strategy");
    return detail::run(store, m, s1, s2);
}

inline MotionFeatures map_concat(ParamStore& store, const MotionMapper& m, const Tensor& s1, const Tensor& s2) {
    require(m.config().strategy == Strategy::Concat, "map_concat: mapper uses a different strategy");
    return detail::run(store, m, s1, s2);
}

inline Tensor map_dual_attention(ParamStore& store, const MotionMapper& m, const Tensor& s1, const Tensor& s2,
                                 const std::optional<Tensor>& video_hidden) {
    if (!video_hidden) throw InputError("map_dual_attention: video hidden states are required");
    return m.dual_attention(store, nn::constant(s1), nn::constant(s2), nn::constant(*video_hidden)).value();
}

inline MotionFeatures map_joint_attention(ParamStore& store, const MotionMapper& m, const Tensor& s1,
                                          const Tensor& s2) {
    require(m.config().strategy == Strategy::Joint, "map_joint_attention: mapper uses a different strategy");
    return detail::run(store, m, s1, s2);
}

}  // namespace tavid::motion
