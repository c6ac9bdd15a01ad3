// SPDX-License-Identifier: Apache-2.0
#pragma once

// Identity retrieval with the speaker mapper: does a predicted embedding land nearest to its
// own identity's audio embedding among the gallery?

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tavid/speaker/mapper.hpp"

namespace tavid::speaker {

enum class Distance { Euclidean, Cosine };

struct RetrievalRow {
    int identity = 0;
    int nearest = 0;
    bool correct = false;
};

struct RetrievalResult {
    double accuracy = 0.0;
    std::vector<RetrievalRow> rows;
};

inline double embedding_distance(const Tensor& a, const Tensor& b, Distance d) {
    require(a.size() == b.size(), "embedding_distance: dimension mismatch");
    if (d == Distance::Euclidean) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return s;
    }
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    const double n = std::sqrt(aa * bb);
    return n > 0.0 ? 1.0 - ab / n : 1.0;
}

/// Query q has identity labels[q]; gallery[k] is the true embedding of identity k. Ties go to
/// the lowest gallery index.
inline RetrievalResult retrieval_eval(const std::vector<Tensor>& queries, const std::vector<int>& labels,
                                      const std::vector<Tensor>& gallery, Distance d = Distance::Euclidean) {
    if (gallery.size() < 2) throw InputError("retrieval_eval: gallery needs at least 2 identities");
    if (queries.size() != labels.size() || queries.empty())
        throw InputError("retrieval_eval: need one label per query and at least one query");
    RetrievalResult r;
    std::size_t hits = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        require(labels[q] >= 0 && static_cast<std::size_t>(labels[q]) < gallery.size(),
                "retrieval_eval: label outside the gallery");
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < gallery.size(); ++k) {
            const double dist = embedding_distance(queries[q], gallery[k], d);
            if (dist < best_d) {
                best_d = dist;
                best = static_cast<int>(k);
            }
        }
        r.rows.push_back({labels[q], best, best == labels[q]});
        hits += best == labels[q];
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(queries.size());
    return r;
}

/// One prediction per identity, on the identity's own features.
inline RetrievalResult retrieval_eval(const std::vector<Tensor>& predicted, const std::vector<Tensor>& gallery,
                                      Distance d = Distance::Euclidean) {
    std::vector<int> labels(predicted.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i);
    return retrieval_eval(predicted, labels, gallery, d);
}

/// Retrieval on `views` fresh noisy views per identity.
inline RetrievalResult evaluate_mapper(ParamStore& store, const SpeakerMapper& model,
                                       const std::vector<data::SyntheticIdentity>& identities, double noise,
                                       std::size_t views, std::uint64_t seed, Distance d = Distance::Euclidean) {
    Rng rng(derive_seed(seed, "speaker.eval"));
    std::vector<IdentityView> vs;
    std::vector<int> labels;
    std::vector<Tensor> gallery;
    for (std::size_t k = 0; k < identities.size(); ++k) {
        gallery.push_back(identities[k].speaker);
        for (std::size_t v = 0; v < views; ++v) {
            vs.push_back(observe(identities[k], noise, rng));
            labels.push_back(static_cast<int>(k));
        }
    }
    const auto [faces, refs] = stack_views(vs);
    const Tensor pred = model.forward(store, faces, refs).value();
    std::vector<Tensor> queries;
    for (std::size_t q = 0; q < pred.rows(); ++q) queries.push_back(nn::slice_rows(nn::constant(pred), q, 1).value());
    return retrieval_eval(queries, labels, gallery, d);
}

/// One-sided p-value of the observed accuracy against random relabelling of the queries.
inline double permutation_p_value(const RetrievalResult& r, std::size_t permutations, std::uint64_t seed) {
    require(permutations >= 1, "permutation_p_value: need at least one permutation");
    std::vector<int> labels, nearest;
    for (const auto& row : r.rows) {
        labels.push_back(row.identity);
        nearest.push_back(row.nearest);
    }
    auto accuracy = [&](const std::vector<int>& l) {
        std::size_t h = 0;
        for (std::size_t i = 0; i < l.size(); ++i) h += l[i] == nearest[i];
        return static_cast<double>(h) / static_cast<double>(l.size());
    };
    Rng rng(derive_seed(seed, "speaker.permutation"));
    std::size_t at_least = 0;
    for (std::size_t p = 0; p < permutations; ++p) {
        std::vector<int> shuffled = labels;
        rng.shuffle(shuffled);
        at_least += accuracy(shuffled) >= r.accuracy;
    }
    return static_cast<double>(1 + at_least) / static_cast<double>(1 + permutations);
}

inline std::string retrieval_csv(const RetrievalResult& r) {
    std::ostringstream os;
    os << "identity,predicted_nearest,correct\n";
    for (const auto& row : r.rows) os << row.identity << ',' << row.nearest << ',' << (row.correct ? 1 : 0) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Input ablation

enum class InputVariant { Full, DropRef, DropFace, DropBoth };

inline const char* to_string(InputVariant v) {
    switch (v) {
        case InputVariant::Full: return "full";
        case InputVariant::DropRef: return "drop_c_ref";
        case InputVariant::DropFace: return "drop_c_face";
        case InputVariant::DropBoth: return "drop_both";
    }
    return "?";
}

/// Same config with the dropped inputs zeroed.
inline SpeakerMapperConfig ablate_inputs(SpeakerMapperConfig cfg, InputVariant v) {
    cfg.use_face = v == InputVariant::Full || v == InputVariant::DropRef;
    cfg.use_ref = v == InputVariant::Full || v == InputVariant::DropFace;
    return cfg;
}

struct SpeakerRun {
    InputVariant variant = InputVariant::Full;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double final_loss = 0.0;
};

inline SpeakerRun train_and_evaluate(const std::vector<data::SyntheticIdentity>& identities, SpeakerTrainConfig cfg,
                                     InputVariant v, std::uint64_t seed, std::size_t eval_views = 4) {
    cfg.mapper = ablate_inputs(cfg.mapper, v);
    ParamStore store(derive_seed(seed, "speaker.init"));
    const SpeakerMapper model(store, cfg.mapper);
    SpeakerRun run{v, seed, 0.0, 0.0};
    nn::StepHooks hooks;
    hooks.on_step = [&](std::int64_t, double loss) { run.final_loss = loss; };
    train_speaker(store, model, identities, cfg, seed, hooks);
    run.accuracy = evaluate_mapper(store, model, identities, cfg.view_noise, eval_views, seed).accuracy;
    return run;
}

}  // namespace tavid::speaker
