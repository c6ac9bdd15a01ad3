// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration. The file is JSON; every key must already exist in the defaults
// tree below, with the same type, so typos fail before any compute. `--set a.b=v` overrides
// use the same check.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tavid/core/error.hpp"
#include "tavid/data/corpus.hpp"
#include "tavid/motion/train.hpp"
#include "tavid/speaker/mapper.hpp"
#include "tavid/speech/pipeline.hpp"
#include "tavid/visual/train.hpp"

namespace tavid::harness {

using json = nlohmann::json;

inline constexpr const char* kOutputRootEnv = "TAVID_OUTPUT_ROOT";
inline constexpr const char* kCodeVersion = "0.1.0";

inline json default_config_json() {
    return json::parse(R"({
  "seed": 7,
  "seeds": [1, 2, 3],
  "output_dir": "tavid-run",
  "checkpoint_every": 100,
  "corpus": {
    "world_seed": 2024, "n_samples": 64, "n_identities": 32, "frames": 24,
    "overlap_prob": 0.1, "silence_prob": 0.1, "min_segment": 3, "max_segment": 10, "listener_lag": 4,
    "test_samples": 100
  },
  "motion_mapper": {
    "strategy": "joint", "width": 64, "heads": 4, "depth": 2, "motion_dim": 32,
    "epochs": 30, "batch": 8, "lr": 0.002, "val_fraction": 0.25
  },
  "visual": {
    "width": 48, "heads": 4, "depth": 2, "window": 14, "base_steps": 300, "motion_steps": 300,
    "batch": 4, "lr": 0.001, "cond_dropout": 0.05, "diffusion_steps": 100,
    "sampler": "ddpm", "cfg_scale": 2.0
  },
  "t2s": {
    "width": 64, "heads": 4, "enc_layers": 2, "dec_layers": 2,
    "steps": 2000, "batch": 4, "lr": 0.002, "text_dropout": 0.1,
    "temperature": 1.0, "top_k": 0, "cfg_scale": 1.0, "cfg_k": 32, "max_len": 512
  },
  "acoustic": {
    "width": 96, "blocks": 3, "train_steps": 1500, "batch": 4, "lr": 0.002, "cond_dropout": 0.3,
    "steps": 32, "cfg_scale": 2.0
  },
  "speaker": {
    "channels": 8, "hidden": 64, "res_blocks": 2, "steps": 1000, "batch": 64, "lr": 0.002, "view_noise": 0.3,
    "eval_views": 4
  },
  "ablate": { "speaker": true },
  "metrics": { "kmeans_k": 8, "kmeans_iterations": 50 }
})");
}

struct ExperimentConfig {
    std::uint64_t seed = 7;
    std::vector<std::uint64_t> seeds;
    std::filesystem::path output_dir;
    std::int64_t checkpoint_every = 100;
    data::CorpusConfig corpus;
    std::size_t test_samples = 100;
    motion::MapperTrainConfig mapper;
    visual::VisualTrainConfig visual;
    visual::SampleOptions visual_sampling;
    speech::T2STrainConfig t2s;
    speech::SamplingConfig t2s_sampling;
    speech::AcousticTrainConfig acoustic;
    speech::AcousticSampling acoustic_sampling;
    speaker::SpeakerTrainConfig speaker;
    std::size_t speaker_eval_views = 4;
    bool ablate_speaker = true;
    std::size_t kmeans_k = 8;
    std::size_t kmeans_iterations = 50;
    json tree;            ///< the merged, validated tree
    std::uint64_t hash = 0;
};

namespace detail {

inline bool same_kind(const json& want, const json& got) {
    if (want.is_number()) return got.is_number() && (want.is_number_float() || !got.is_number_float());
    if (want.is_array()) return got.is_array();
    return want.type() == got.type();
}

inline void merge_strict(json& base, const json& over, const std::string& path) {
    if (!over.is_object()) throw ConfigError("config" + (path.empty() ? "" : " key '" + path + "'") + " must be an object");
    for (const auto& [k, v] : over.items()) {
        const std::string key = path.empty() ? k : path + "." + k;
        if (!base.contains(k)) throw ConfigError("unknown config key '" + key + "'");
        json& slot = base[k];
        if (slot.is_object()) {
            merge_strict(slot, v, key);
        } else {
            if (!same_kind(slot, v))
                throw ConfigError("config key '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                                  std::string(v.type_name()));
            slot = v;
        }
    }
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

template <class T>
T get(const json& tree, const std::string& dotted) {
    const json* node = &tree;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) node = &node->at(part);
    return node->get<T>();
}

inline void check(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError("config key '" + key + "' " + what);
}

}  // namespace detail

/// Applies one `key=value` override. The value is read as JSON when it parses, else as a string.
inline void apply_override(json& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json patch = value;
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    detail::merge_strict(tree, patch, "");
}

/// Typed view of a validated tree. Range and enum checks happen here.
inline ExperimentConfig config_from_tree(const json& tree) {
    using detail::check;
    using detail::get;
    ExperimentConfig c;
    c.tree = tree;
    json hashed = tree;
    hashed.erase("output_dir");  // relocating a run keeps its identity
    c.hash = detail::fnv1a(hashed.dump());
    c.seed = get<std::uint64_t>(tree, "seed");
    c.seeds = get<std::vector<std::uint64_t>>(tree, "seeds");
    check(!c.seeds.empty(), "seeds", "must list at least one seed");
    c.output_dir = get<std::string>(tree, "output_dir");
    check(!c.output_dir.empty(), "output_dir", "must not be empty");
    c.checkpoint_every = get<std::int64_t>(tree, "checkpoint_every");
    check(c.checkpoint_every >= 0, "checkpoint_every", "must be >= 0");

    auto& cc = c.corpus;
    cc.world_seed = get<std::uint64_t>(tree, "corpus.world_seed");
    cc.n_samples = get<std::size_t>(tree, "corpus.n_samples");
    cc.n_identities = get<std::size_t>(tree, "corpus.n_identities");
    cc.frames = get<std::size_t>(tree, "corpus.frames");
    cc.overlap_prob = get<double>(tree, "corpus.overlap_prob");
    cc.silence_prob = get<double>(tree, "corpus.silence_prob");
    cc.min_segment = get<std::size_t>(tree, "corpus.min_segment");
    cc.max_segment = get<std::size_t>(tree, "corpus.max_segment");
    cc.listener_lag = get<int>(tree, "corpus.listener_lag");
    c.test_samples = get<std::size_t>(tree, "corpus.test_samples");
    try {
        cc.validate();
    } catch (const InputError& e) {
        throw ConfigError(std::string("corpus: ") + e.what());
    }
    check(cc.n_samples >= 2, "corpus.n_samples", "must be >= 2");
    check(c.test_samples >= 1, "corpus.test_samples", "must be >= 1");

    auto& m = c.mapper;
    const auto strategy = get<std::string>(tree, "motion_mapper.strategy");
    try {
        m.mapper.strategy = motion::parse_strategy(strategy);
    } catch (const std::exception&) {
        throw ConfigError("config key 'motion_mapper.strategy' must be one of add, concat, dual, joint; got '" +
                          strategy + "'");
    }
    m.mapper.width = get<std::size_t>(tree, "motion_mapper.width");
    m.mapper.heads = get<std::size_t>(tree, "motion_mapper.heads");
    m.mapper.depth = get<std::size_t>(tree, "motion_mapper.depth");
    m.mapper.motion_dim = get<std::size_t>(tree, "motion_mapper.motion_dim");
    m.epochs = get<std::size_t>(tree, "motion_mapper.epochs");
    m.batch = get<std::size_t>(tree, "motion_mapper.batch");
    m.lr = get<double>(tree, "motion_mapper.lr");
    m.val_fraction = get<double>(tree, "motion_mapper.val_fraction");
    check(m.mapper.heads >= 1 && m.mapper.width % m.mapper.heads == 0, "motion_mapper.heads", "must divide width");
    check(m.batch >= 1, "motion_mapper.batch", "must be >= 1");
    check(m.val_fraction > 0.0 && m.val_fraction < 1.0, "motion_mapper.val_fraction", "must lie in (0, 1)");

    auto& v = c.visual;
    v.denoiser.width = get<std::size_t>(tree, "visual.width");
    v.denoiser.heads = get<std::size_t>(tree, "visual.heads");
    v.denoiser.depth = get<std::size_t>(tree, "visual.depth");
    v.denoiser.motion_dim = m.mapper.motion_dim;
    v.window = get<std::size_t>(tree, "visual.window");
    v.base_steps = get<std::int64_t>(tree, "visual.base_steps");
    v.motion_steps = get<std::int64_t>(tree, "visual.motion_steps");
    v.batch = get<std::size_t>(tree, "visual.batch");
    v.lr = get<double>(tree, "visual.lr");
    v.cond_dropout = get<double>(tree, "visual.cond_dropout");
    v.diffusion_steps = get<std::size_t>(tree, "visual.diffusion_steps");
    check(v.denoiser.heads >= 1 && v.denoiser.width % v.denoiser.heads == 0, "visual.heads", "must divide width");
    check(v.window >= 1 && v.window <= cc.frames, "visual.window", "must lie in [1, corpus.frames]");
    check(v.diffusion_steps >= 1, "visual.diffusion_steps", "must be >= 1");
    const auto sampler = get<std::string>(tree, "visual.sampler");
    check(sampler == "ddpm" || sampler == "ddim", "visual.sampler", "must be ddpm or ddim");
    c.visual_sampling.sampler = sampler == "ddpm" ? visual::Sampler::Ddpm : visual::Sampler::Ddim;
    c.visual_sampling.cfg_scale = get<double>(tree, "visual.cfg_scale");
    c.visual_sampling.window = v.window;

    auto& t = c.t2s;
    t.model.width = get<std::size_t>(tree, "t2s.width");
    t.model.heads = get<std::size_t>(tree, "t2s.heads");
    t.model.enc_layers = get<std::size_t>(tree, "t2s.enc_layers");
    t.model.dec_layers = get<std::size_t>(tree, "t2s.dec_layers");
    t.steps = get<std::int64_t>(tree, "t2s.steps");
    t.batch = get<std::size_t>(tree, "t2s.batch");
    t.lr = get<double>(tree, "t2s.lr");
    t.text_dropout = get<double>(tree, "t2s.text_dropout");
    check(t.model.heads >= 1 && t.model.width % t.model.heads == 0, "t2s.heads", "must divide width");
    auto& ts = c.t2s_sampling;
    ts.temperature = get<double>(tree, "t2s.temperature");
    ts.top_k = get<std::size_t>(tree, "t2s.top_k");
    ts.cfg_scale = get<double>(tree, "t2s.cfg_scale");
    ts.cfg_k = get<std::size_t>(tree, "t2s.cfg_k");
    ts.max_len = get<std::size_t>(tree, "t2s.max_len");
    check(ts.temperature >= 0.0, "t2s.temperature", "must be >= 0");
    check(ts.cfg_k >= 1, "t2s.cfg_k", "must be >= 1");
    check(ts.max_len >= 2, "t2s.max_len", "must be >= 2");

    auto& a = c.acoustic;
    a.model.width = get<std::size_t>(tree, "acoustic.width");
    a.model.blocks = get<std::size_t>(tree, "acoustic.blocks");
    a.steps = get<std::int64_t>(tree, "acoustic.train_steps");
    a.batch = get<std::size_t>(tree, "acoustic.batch");
    a.lr = get<double>(tree, "acoustic.lr");
    a.cond_dropout = get<double>(tree, "acoustic.cond_dropout");
    c.acoustic_sampling.steps = get<std::size_t>(tree, "acoustic.steps");
    c.acoustic_sampling.cfg_scale = get<double>(tree, "acoustic.cfg_scale");
    check(c.acoustic_sampling.steps >= 1, "acoustic.steps", "must be >= 1");

    auto& s = c.speaker;
    s.mapper.channels = get<std::size_t>(tree, "speaker.channels");
    s.mapper.hidden = get<std::size_t>(tree, "speaker.hidden");
    s.mapper.res_blocks = get<std::size_t>(tree, "speaker.res_blocks");
    s.steps = get<std::int64_t>(tree, "speaker.steps");
    s.batch = get<std::size_t>(tree, "speaker.batch");
    s.lr = get<double>(tree, "speaker.lr");
    s.view_noise = get<double>(tree, "speaker.view_noise");
    c.speaker_eval_views = get<std::size_t>(tree, "speaker.eval_views");
    check(s.batch >= 1, "speaker.batch", "must be >= 1");
    check(c.speaker_eval_views >= 1, "speaker.eval_views", "must be >= 1");

    c.ablate_speaker = get<bool>(tree, "ablate.speaker");
    c.kmeans_k = get<std::size_t>(tree, "metrics.kmeans_k");
    c.kmeans_iterations = get<std::size_t>(tree, "metrics.kmeans_iterations");
    check(c.kmeans_k >= 2, "metrics.kmeans_k", "must be >= 2");

    for (const auto& [key, val] : {std::pair{"t2s.steps", t.steps}, std::pair{"acoustic.train_steps", a.steps},
                                   std::pair{"speaker.steps", s.steps}, std::pair{"visual.base_steps", v.base_steps},
                                   std::pair{"visual.motion_steps", v.motion_steps}})
        check(val >= 0, key, "must be >= 0");
    for (const auto& [key, val] : {std::pair{"t2s.lr", t.lr}, std::pair{"acoustic.lr", a.lr}, std::pair{"speaker.lr", s.lr},
                                   std::pair{"visual.lr", v.lr}, std::pair{"motion_mapper.lr", m.lr}})
        check(val > 0.0, key, "must be > 0");
    for (const auto& [key, val] : {std::pair{"t2s.text_dropout", t.text_dropout},
                                   std::pair{"acoustic.cond_dropout", a.cond_dropout},
                                   std::pair{"visual.cond_dropout", v.cond_dropout}})
        check(val >= 0.0 && val <= 1.0, key, "must lie in [0, 1]");
    return c;
}

/// Defaults, then the optional file, then overrides in order. The output directory is resolved
/// against $TAVID_OUTPUT_ROOT when that is set and the configured path is relative.
inline ExperimentConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    json tree = default_config_json();
    if (!file.empty()) {
        std::ifstream is(file);
        if (!is) throw ConfigError("cannot open config file " + file.string());
        json user;
        try {
            user = json::parse(is);
        } catch (const json::exception& e) {
            throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
        }
        detail::merge_strict(tree, user, "");
    }
    for (const auto& o : overrides) apply_override(tree, o);
    ExperimentConfig c = config_from_tree(tree);
    if (const char* root = std::getenv(kOutputRootEnv); root && *root && c.output_dir.is_relative())
        c.output_dir = std::filesystem::path(root) / c.output_dir;
    return c;
}

}  // namespace tavid::harness
