// SPDX-License-Identifier: Apache-2.0
#pragma once

// The pipeline stages behind the CLI verbs. Each stage checks its prerequisites, does its
// work, writes its outputs and then records itself in the manifest.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tavid/data/corpus_io.hpp"
#include "tavid/harness/config.hpp"
#include "tavid/harness/manifest.hpp"
#include "tavid/metrics/metrics.hpp"
#include "tavid/nn/checkpoint.hpp"
#include "tavid/speaker/eval.hpp"

namespace tavid::harness {

namespace fs = std::filesystem;
using nn::ParamStore;
using nn::Tensor;

inline const std::vector<std::string>& train_stages() {
    static const std::vector<std::string> s{"t2s", "acoustic", "visual", "mapper-motion", "mapper-speaker"};
    return s;
}

struct Paths {
    fs::path root;

    fs::path corpus() const { return root / "data" / "corpus.jsonl"; }
    fs::path test_corpus() const { return root / "data" / "test.jsonl"; }
    fs::path checkpoint(const std::string& stage) const { return root / "checkpoints" / (stage + ".ckpt"); }
    fs::path partial(const std::string& stage) const { return root / "checkpoints" / (stage + ".partial.ckpt"); }
    fs::path log(const std::string& stage) const { return root / "logs" / (stage + ".csv"); }
    fs::path infer_dir() const { return root / "infer"; }
    fs::path generated() const { return root / "infer" / "generated.jsonl"; }
    fs::path report_csv() const { return root / "report.csv"; }
    fs::path report_md() const { return root / "report.md"; }
    fs::path ablation_dir() const { return root / "ablation"; }
    fs::path summary() const { return root / "summary.md"; }
    fs::path manifest() const { return root / "manifest.json"; }
};

/// Shared state of one CLI invocation.
struct Context {
    ExperimentConfig cfg;
    Paths paths;
    std::ostream* out = nullptr;  ///< progress messages; null silences them

    explicit Context(ExperimentConfig c, std::ostream* o = nullptr) : cfg(std::move(c)), paths{cfg.output_dir}, out(o) {}

    std::uint64_t stage_seed(const std::string& stage) const { return derive_seed(cfg.seed, "stage." + stage); }
    void say(const std::string& msg) const {
        if (out) *out << msg << '\n' << std::flush;
    }
    Manifest manifest() const { return Manifest(paths.manifest()); }
    void record(const std::string& stage, nlohmann::json rec) const {
        manifest().record_stage(stage, rec, cfg.hash, kCodeVersion, cfg.seed);
    }
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_f(double v, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

inline void need_file(const fs::path& p, const std::string& stage, const std::string& what) {
    if (!fs::exists(p))
        throw MissingPrerequisite(stage, what + " not found at " + p.string() + "; run `tavid " +
                                             (stage == "gen-data" || stage == "infer" || stage == "eval"
                                                  ? stage
                                                  : "train " + stage) +
                                             "` first");
}

inline std::vector<data::Sample> load_train_corpus(const Context& ctx) {
    need_file(ctx.paths.corpus(), "gen-data", "training corpus");
    return data::load_corpus(ctx.paths.corpus());
}

inline nn::Checkpoint load_stage_checkpoint(const Context& ctx, const std::string& stage) {
    need_file(ctx.paths.checkpoint(stage), stage, "checkpoint");
    return nn::load_checkpoint(ctx.paths.checkpoint(stage));
}

/// Keeps the header and the rows with step < `keep_below`.
inline void truncate_log(const fs::path& log, std::int64_t keep_below) {
    if (!fs::exists(log)) return;
    std::istringstream is(read_text(log));
    std::string line, kept;
    bool header = true;
    while (std::getline(is, line)) {
        if (header || std::stoll(line.substr(0, line.find(','))) < keep_below) kept += line + "\n";
        header = false;
    }
    write_atomic(log, kept);
}

}  // namespace detail

/// Result of a step-based training stage.
struct TrainOutcome {
    bool finished = false;
    std::int64_t step = 0;
    std::int64_t resumed_from = -1;
    double final_loss = std::nan("");
};

/// Runs a resumable stage. A partial checkpoint with the same config hash is picked up and the
/// loss log is cut back to its step; periodic and interruption checkpoints carry Adam moments.
inline TrainOutcome run_resumable(const Context& ctx, const std::string& stage, ParamStore& store, std::int64_t total,
                                  const std::function<void(const nn::StepHooks&)>& train, std::int64_t stop_after) {
    const fs::path partial = ctx.paths.partial(stage), log = ctx.paths.log(stage);
    TrainOutcome r;
    if (fs::exists(partial)) {
        const nn::Checkpoint ck = nn::load_checkpoint(partial);
        if (ck.config_hash == ctx.cfg.hash && ck.meta == stage) {
            nn::restore_params(store, ck);
            r.resumed_from = ck.step;
            detail::truncate_log(log, ck.step);
            ctx.say(stage + ": resuming from step " + std::to_string(ck.step));
        } else {
            ctx.say(stage + ": ignoring partial checkpoint from a different config");
            fs::remove(partial);
        }
    }
    if (r.resumed_from < 0) write_atomic(log, "step,loss\n");
    std::ofstream logf(log, std::ios::app);
    auto save_partial = [&](std::int64_t) {
        nn::Checkpoint ck = nn::checkpoint_from(store, true);
        ck.config_hash = ctx.cfg.hash;
        ck.meta = stage;
        nn::save_checkpoint(partial, ck);
    };
    nn::StepHooks hooks;
    hooks.on_step = [&](std::int64_t step, double loss) {
        logf << step << ',' << detail::fmt_g(loss) << '\n' << std::flush;
        r.final_loss = loss;
    };
    hooks.on_checkpoint = save_partial;
    hooks.checkpoint_every = ctx.cfg.checkpoint_every;
    hooks.stop_after = stop_after;
    train(hooks);
    r.step = store.step;
    if (store.step < total) {
        save_partial(store.step);
        ctx.say(stage + ": stopped at step " + std::to_string(store.step) + " of " + std::to_string(total) +
                "; rerun to resume");
        return r;
    }
    nn::Checkpoint ck = nn::checkpoint_from(store, false);
    ck.config_hash = ctx.cfg.hash;
    ck.meta = stage;
    nn::save_checkpoint(ctx.paths.checkpoint(stage), ck);
    if (fs::exists(partial)) fs::remove(partial);
    r.finished = true;
    return r;
}

// ---------------------------------------------------------------------------
// Model construction shared by training and inference

inline speech::T2SConfig t2s_model_config(const Context& ctx, int vocab) {
    speech::T2SConfig m = ctx.cfg.t2s.model;
    m.vocab = vocab;
    return m;
}

inline speech::AcousticConfig acoustic_model_config(const Context& ctx, int vocab) {
    speech::AcousticConfig m = ctx.cfg.acoustic.model;
    m.vocab = vocab;
    return m;
}

inline data::SyntheticWorld world_of(const Context& ctx) {
    return data::SyntheticWorld(ctx.cfg.corpus.world_seed, ctx.cfg.corpus.n_identities);
}

// ---------------------------------------------------------------------------
// gen-data

inline void cmd_gen_data(const Context& ctx) {
    const auto t0 = detail::Clock::now();
    const auto train = data::synth_corpus(ctx.cfg.seed, ctx.cfg.corpus);
    data::CorpusConfig test_cfg = ctx.cfg.corpus;
    test_cfg.n_samples = ctx.cfg.test_samples;
    const auto test = data::synth_corpus(derive_seed(ctx.cfg.seed, "test-corpus"), test_cfg);
    data::save_corpus(train, ctx.paths.corpus());
    data::save_corpus(test, ctx.paths.test_corpus());
    ctx.say("gen-data: " + std::to_string(train.size()) + " training and " + std::to_string(test.size()) +
            " test dialogues");
    ctx.record("gen-data", {{"seed", ctx.cfg.seed},
                            {"train", ctx.paths.corpus().string()},
                            {"test", ctx.paths.test_corpus().string()},
                            {"train_samples", train.size()},
                            {"test_samples", test.size()},
                            {"seconds", detail::seconds_since(t0)}});
}

// ---------------------------------------------------------------------------
// train

inline std::vector<speech::T2SExample> t2s_examples(const std::vector<data::Sample>& corpus) {
    std::vector<speech::T2SExample> out;
    for (const auto& s : corpus) out.push_back({speech::tokenize_text(s.script), s.tokens});
    return out;
}

inline TrainOutcome train_t2s_stage(const Context& ctx, std::int64_t stop_after) {
    const auto corpus = detail::load_train_corpus(ctx);
    const auto examples = t2s_examples(corpus);
    const std::uint64_t seed = ctx.stage_seed("t2s");
    ParamStore store(derive_seed(seed, "init"));
    speech::T2STrainConfig tc = ctx.cfg.t2s;
    tc.model = t2s_model_config(ctx, corpus.front().tokens.vocab_size);
    const speech::T2SModel model(store, tc.model);
    return run_resumable(ctx, "t2s", store, tc.steps,
                         [&](const nn::StepHooks& h) { speech::train_t2s(store, model, examples, tc, seed, h); },
                         stop_after);
}

inline TrainOutcome train_acoustic_stage(const Context& ctx, std::int64_t stop_after) {
    const auto corpus = detail::load_train_corpus(ctx);
    const std::uint64_t seed = ctx.stage_seed("acoustic");
    ParamStore store(derive_seed(seed, "init"));
    speech::AcousticTrainConfig ac = ctx.cfg.acoustic;
    ac.model = acoustic_model_config(ctx, corpus.front().tokens.vocab_size);
    const speech::AcousticModel model(store, ac.model);
    return run_resumable(ctx, "acoustic", store, ac.steps,
                         [&](const nn::StepHooks& h) { speech::train_acoustic(store, model, corpus, ac, seed, h); },
                         stop_after);
}

/// Motion mapper plus denoiser in one store; the mapper starts from the mapper-motion checkpoint.
struct VisualStack {
    ParamStore store;
    motion::MotionMapper mapper;
    visual::VisualDenoiser denoiser;
};

inline void build_visual_stack(const Context& ctx, VisualStack& v, std::uint64_t seed) {
    v.store = ParamStore(derive_seed(seed, "init"));
    v.mapper = motion::MotionMapper(v.store, ctx.cfg.mapper.mapper, "mapper");
    v.denoiser = visual::VisualDenoiser(v.store, ctx.cfg.visual.denoiser);
}

inline TrainOutcome train_visual_stage(const Context& ctx, std::int64_t stop_after) {
    const auto corpus = detail::load_train_corpus(ctx);
    const nn::Checkpoint mapper_ck = detail::load_stage_checkpoint(ctx, "mapper-motion");
    const std::uint64_t seed = ctx.stage_seed("visual");
    VisualStack v;
    build_visual_stack(ctx, v, seed);
    // Mapper weights come from its own stage; step counter and Adam moments start fresh.
    for (auto& [name, p] : v.store.all()) {
        if (name.rfind("mapper.", 0) != 0) continue;
        const auto it = mapper_ck.tensors.find(name);
        if (it == mapper_ck.tensors.end() || !it->second.same_shape(p.value))
            throw MissingPrerequisite("mapper-motion", "checkpoint does not match the configured mapper ('" + name +
                                                           "'); retrain mapper-motion");
        p.value = it->second;
    }
    const auto world = world_of(ctx);
    const auto total = ctx.cfg.visual.base_steps + ctx.cfg.visual.motion_steps;
    return run_resumable(ctx, "visual", v.store, total, [&](const nn::StepHooks& h) {
        visual::train_visual(v.store, v.mapper, v.denoiser, corpus, world.codebook(), ctx.cfg.visual, seed, h);
    }, stop_after);
}

inline TrainOutcome train_speaker_stage(const Context& ctx, std::int64_t stop_after) {
    const std::uint64_t seed = ctx.stage_seed("mapper-speaker");
    const auto world = world_of(ctx);
    ParamStore store(derive_seed(seed, "init"));
    const speaker::SpeakerMapper model(store, ctx.cfg.speaker.mapper);
    TrainOutcome r = run_resumable(ctx, "mapper-speaker", store, ctx.cfg.speaker.steps, [&](const nn::StepHooks& h) {
        speaker::train_speaker(store, model, world.identities(), ctx.cfg.speaker, seed, h);
    }, stop_after);
    if (r.finished) {
        const auto res = speaker::evaluate_mapper(store, model, world.identities(), ctx.cfg.speaker.view_noise,
                                                  ctx.cfg.speaker_eval_views, seed);
        write_atomic(ctx.paths.root / "speaker" / "retrieval.csv", speaker::retrieval_csv(res));
        ctx.say("mapper-speaker: retrieval top-1 " + detail::fmt_f(res.accuracy, 3));
    }
    return r;
}

inline TrainOutcome train_motion_stage(const Context& ctx) {
    const auto corpus = detail::load_train_corpus(ctx);
    const auto world = world_of(ctx);
    const motion::MapperTrainResult res =
        motion::train_mapper(corpus, world.codebook(), ctx.cfg.mapper, ctx.stage_seed("mapper-motion"));
    std::string log = "epoch,train_loss,val_mse\n";
    for (std::size_t e = 0; e < res.train_loss.size(); ++e)
        log += std::to_string(e) + ',' + detail::fmt_g(res.train_loss[e]) + ',' + detail::fmt_g(res.val_mse[e]) + '\n';
    write_atomic(ctx.paths.log("mapper-motion"), log);
    nn::Checkpoint ck = nn::checkpoint_from(res.store, false);
    ck.config_hash = ctx.cfg.hash;
    ck.meta = "mapper-motion";
    nn::save_checkpoint(ctx.paths.checkpoint("mapper-motion"), ck);
    TrainOutcome r;
    r.finished = true;
    r.step = static_cast<std::int64_t>(res.train_loss.size());
    r.final_loss = res.val_mse.empty() ? std::nan("") : res.val_mse.back();
    return r;
}

/// `stop_after` < 0 runs to completion. The epoch-based mapper-motion stage ignores it.
inline TrainOutcome cmd_train(const Context& ctx, const std::string& stage, std::int64_t stop_after = -1) {
    const auto t0 = detail::Clock::now();
    TrainOutcome r;
    if (stage == "t2s") {
        r = train_t2s_stage(ctx, stop_after);
    } else if (stage == "acoustic") {
        r = train_acoustic_stage(ctx, stop_after);
    } else if (stage == "visual") {
        r = train_visual_stage(ctx, stop_after);
    } else if (stage == "mapper-motion") {
        r = train_motion_stage(ctx);
    } else if (stage == "mapper-speaker") {
        r = train_speaker_stage(ctx, stop_after);
    } else {
        throw ConfigError("unknown training stage '" + stage +
                          "' (expected t2s, acoustic, visual, mapper-motion, mapper-speaker)");
    }
    if (r.finished) {
        ctx.say(stage + ": done at step " + std::to_string(r.step) + ", final loss " + detail::fmt_g(r.final_loss));
        ctx.record(stage, {{"checkpoint", ctx.paths.checkpoint(stage).string()},
                           {"log", ctx.paths.log(stage).string()},
                           {"seed", ctx.stage_seed(stage)},
                           {"steps", r.step},
                           {"final_loss", r.final_loss},
                           {"resumed_from", r.resumed_from},
                           {"seconds", detail::seconds_since(t0)}});
    }
    return r;
}

// ---------------------------------------------------------------------------
// infer

/// Trained models restored from their checkpoints.
struct InferenceModels {
    ParamStore t2s_store, acoustic_store, speaker_store;
    speech::T2SModel t2s;
    speech::AcousticModel acoustic;
    speaker::SpeakerMapper speaker;
    VisualStack visual;
};

inline void load_models(const Context& ctx, InferenceModels& m, int vocab) {
    std::map<std::string, nn::Checkpoint> ck;
    for (const auto& s : train_stages()) ck[s] = detail::load_stage_checkpoint(ctx, s);
    m.t2s = speech::T2SModel(m.t2s_store, t2s_model_config(ctx, vocab));
    nn::restore_params(m.t2s_store, ck["t2s"]);
    m.acoustic = speech::AcousticModel(m.acoustic_store, acoustic_model_config(ctx, vocab));
    nn::restore_params(m.acoustic_store, ck["acoustic"]);
    m.speaker = speaker::SpeakerMapper(m.speaker_store, ctx.cfg.speaker.mapper);
    nn::restore_params(m.speaker_store, ck["mapper-speaker"]);
    build_visual_stack(ctx, m.visual, 0);
    nn::restore_params(m.visual.store, ck["visual"]);
}

/// One dialogue to render: its script and the two identities' visual references.
struct InferenceRequest {
    int id = 0;
    data::DialogueScript script;
    data::SyntheticIdentity identity1, identity2;
};

/// JSONL lines {"id", "turns", "identity1", "identity2"}; identities index the world gallery.
inline std::vector<InferenceRequest> load_script_file(const fs::path& path, const data::SyntheticWorld& world) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open script file " + path.string());
    std::vector<InferenceRequest> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            InferenceRequest r;
            r.id = j.at("id").get<int>();
            r.script = data::script_from_json(j.at("turns"));
            const auto pick = [&](const char* key) {
                const auto k = j.at(key).get<std::size_t>();
                require(k < world.identities().size(), std::string(key) + " outside the identity gallery");
                return world.identities()[k];
            };
            r.identity1 = pick("identity1");
            r.identity2 = pick("identity2");
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("bad script record: ") + e.what(), lineno);
        } catch (const InputError& e) {
            throw FormatError(std::string("bad script record: ") + e.what(), lineno);
        }
    }
    if (out.empty()) throw FormatError("script file has no records", lineno);
    return out;
}

struct InferenceResult {
    data::Sample sample;  ///< generated tokens, mel and motion in corpus form
    std::vector<double> wave;
    bool truncated = false;
};

inline InferenceResult infer_one(const Context& ctx, InferenceModels& m, const data::Codebook& cb,
                                 const InferenceRequest& req, std::uint64_t seed) {
    InferenceResult r;
    r.sample.id = req.id;
    r.sample.script = req.script;
    r.sample.identity1 = req.identity1;
    r.sample.identity2 = req.identity2;
    // Face-driven speaker embeddings on the inference path.
    const speaker::SpeakerEmbedding e1 = m.speaker.map_speaker(m.speaker_store, req.identity1.face, req.identity1.ref);
    const speaker::SpeakerEmbedding e2 = m.speaker.map_speaker(m.speaker_store, req.identity2.face, req.identity2.ref);
    speech::SamplingConfig ts = ctx.cfg.t2s_sampling;
    ts.seed = derive_seed(seed, "t2s", static_cast<std::uint64_t>(req.id));
    const speech::SpeechModels sm{&m.t2s_store, &m.t2s, &m.acoustic_store, &m.acoustic};
    const speech::SpeechOutput sp = speech::end_to_end_speech(req.script, {e1.e, e2.e}, sm, ts, ctx.cfg.acoustic_sampling,
                                                              derive_seed(seed, "acoustic", static_cast<std::uint64_t>(req.id)));
    r.sample.tokens = sp.streams;
    r.sample.mel = sp.mel;
    r.wave = sp.wave;
    r.truncated = sp.truncated;

    const std::size_t F = sp.video_frames(), tpf = ctx.cfg.visual.denoiser.tokens_per_frame;
    const auto sched = visual::NoiseSchedule::linear(ctx.cfg.visual.diffusion_steps);
    for (int role : {1, 2}) {
        Tensor motion(F, data::kMotionDim);
        if (F > 0) {
            const Tensor own = motion::stream_features(sp.streams.stream(role), cb);
            const Tensor partner = motion::stream_features(sp.streams.stream(3 - role), cb);
            const nn::Var c_mot = m.visual.mapper.forward(m.visual.store, nn::constant(own), nn::constant(partner));
            visual::ConditioningSet c;
            const auto& id = role == 1 ? req.identity1 : req.identity2;
            c.c_ref = id.ref;
            c.c_face = id.face;
            c.c_mot = nn::constant(nn::slice_rows(c_mot, 0, F * tpf).value());
            Rng rng(derive_seed(seed, "visual", static_cast<std::uint64_t>(req.id) * 2 + static_cast<std::uint64_t>(role)));
            motion = visual::sample_video(visual::eps_fn(m.visual.store, m.visual.denoiser), c, F,
                                          ctx.cfg.visual.denoiser, sched, ctx.cfg.visual_sampling, rng);
        }
        (role == 1 ? r.sample.motion1 : r.sample.motion2) = std::move(motion);
    }
    return r;
}

/// Per-dialogue alignment numbers written to the manifest and checked on every dialogue.
struct Alignment {
    std::size_t tokens = 0, mel_frames = 0, video_frames = 0, wav_samples = 0;
    bool holds() const {
        return mel_frames == tokens && video_frames == tokens / data::kTokensPerFrame &&
               wav_samples == speech::kHopSize * mel_frames;
    }
};

inline Alignment alignment_of(const InferenceResult& r) {
    return {r.sample.tokens.length(), r.sample.mel.rows(), r.sample.motion1.rows(), r.wave.size()};
}

inline std::vector<InferenceRequest> requests_from_corpus(const std::vector<data::Sample>& corpus) {
    std::vector<InferenceRequest> out;
    for (const auto& s : corpus) out.push_back({s.id, s.script, s.identity1, s.identity2});
    return out;
}

/// Renders every request; without a script file the held-out test scripts are used.
inline std::vector<Alignment> cmd_infer(const Context& ctx, const fs::path& script_file = {}) {
    const auto t0 = detail::Clock::now();
    const auto world = world_of(ctx);
    std::vector<InferenceRequest> reqs;
    if (script_file.empty()) {
        detail::need_file(ctx.paths.test_corpus(), "gen-data", "test corpus");
        reqs = requests_from_corpus(data::load_corpus(ctx.paths.test_corpus()));
    } else {
        reqs = load_script_file(script_file, world);
    }
    InferenceModels m;
    load_models(ctx, m, world.codebook().size());
    const std::uint64_t seed = ctx.stage_seed("infer");
    std::vector<data::Sample> generated;
    std::vector<Alignment> align;
    std::size_t truncated = 0;
    for (const auto& req : reqs) {
        InferenceResult r = infer_one(ctx, m, world.codebook(), req, seed);
        const Alignment a = alignment_of(r);
        if (!a.holds())
            throw NumericalError("infer: alignment contract broken for dialogue " + std::to_string(req.id));
        const fs::path dir = ctx.paths.infer_dir() / std::to_string(req.id);
        fs::create_directories(dir);
        speech::write_wav(dir / "speech.wav", r.wave);
        write_atomic(dir / "tokens.json",
                     nlohmann::json{{"s1", r.sample.tokens.s1}, {"s2", r.sample.tokens.s2}, {"truncated", r.truncated}}
                             .dump() +
                         "\n");
        truncated += r.truncated;
        align.push_back(a);
        generated.push_back(std::move(r.sample));
    }
    data::save_corpus(generated, ctx.paths.generated());
    ctx.say("infer: " + std::to_string(generated.size()) + " dialogues, " + std::to_string(truncated) +
            " hit t2s.max_len");
    ctx.record("infer", {{"dialogues", generated.size()},
                         {"generated", ctx.paths.generated().string()},
                         {"truncated", truncated},
                         {"seed", seed},
                         {"speaker_source", "face"},
                         {"seconds", detail::seconds_since(t0)}});
    return align;
}

// ---------------------------------------------------------------------------
// eval

/// Cuts both motion tracks of each pair to their common frame count.
inline void align_frames(data::Sample& gen, data::Sample& gt) {
    const std::size_t F = std::min(gen.frames(), gt.frames());
    for (auto* s : {&gen, &gt})
        for (auto* m : {&s->motion1, &s->motion2})
            if (m->rows() > F) *m = nn::slice_rows(nn::constant(*m), 0, F).value();
}

inline metrics::MetricReport evaluate_corpora(std::vector<data::Sample> gen, std::vector<data::Sample> gt,
                                              const Context& ctx) {
    if (gen.size() != gt.size())
        throw InputError("eval: " + std::to_string(gen.size()) + " generated vs " + std::to_string(gt.size()) +
                         " reference dialogues");
    for (std::size_t i = 0; i < gen.size(); ++i) {
        if (gen[i].id != gt[i].id) throw InputError("eval: dialogue ids differ at position " + std::to_string(i));
        align_frames(gen[i], gt[i]);
    }
    return metrics::metric_report(gen, gt, derive_seed(ctx.cfg.seed, "metrics"));
}

inline metrics::MetricReport cmd_eval(const Context& ctx, const fs::path& gen_file = {}, const fs::path& gt_file = {}) {
    const fs::path gen_path = gen_file.empty() ? ctx.paths.generated() : gen_file;
    const fs::path gt_path = gt_file.empty() ? ctx.paths.test_corpus() : gt_file;
    if (!fs::exists(gen_path))
        throw MissingPrerequisite("infer", "generated dialogues not found at " + gen_path.string() + "; run `tavid infer` first");
    if (!fs::exists(gt_path))
        throw MissingPrerequisite("gen-data", "reference corpus not found at " + gt_path.string() +
                                              "; run `tavid gen-data` first");
    metrics::MetricReport rep = evaluate_corpora(data::load_corpus(gen_path), data::load_corpus(gt_path), ctx);
    write_atomic(ctx.paths.report_csv(), metrics::report_csv({rep}));
    write_atomic(ctx.paths.report_md(), metrics::report_md({rep}));
    if (!rep.finite()) throw NumericalError("eval: a metric is not finite; see " + ctx.paths.report_csv().string());
    ctx.say("eval: wrote " + ctx.paths.report_csv().string());
    auto man = ctx.manifest();
    man.record_table("report_csv", ctx.paths.report_csv().string());
    man.record_table("report_md", ctx.paths.report_md().string());
    ctx.record("eval", {{"generated", gen_path.string()}, {"reference", gt_path.string()}});
    return rep;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
    std::string name;
    std::vector<double> values;  ///< one per seed

    double mean() const {
        double s = 0.0;
        for (double v : values) s += v;
        return values.empty() ? 0.0 : s / static_cast<double>(values.size());
    }
    double std() const {
        if (values.size() < 2) return 0.0;
        const double m = mean();
        double q = 0.0;
        for (double v : values) q += (v - m) * (v - m);
        return std::sqrt(q / static_cast<double>(values.size() - 1));
    }
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows, const std::vector<std::uint64_t>& seeds,
                                const std::string& metric) {
    std::ostringstream os;
    os << "variant," << metric << "_mean," << metric << "_std";
    for (auto s : seeds) os << ",seed_" << s;
    os << '\n';
    for (const auto& r : rows) {
        os << r.name << ',' << detail::fmt_f(r.mean()) << ',' << detail::fmt_f(r.std());
        for (double v : r.values) os << ',' << detail::fmt_f(v);
        os << '\n';
    }
    return os.str();
}

inline std::string ablation_md(const std::vector<AblationRow>& rows, const std::string& title, const std::string& metric) {
    std::ostringstream os;
    os << "### " << title << "\n\n| Variant | " << metric << " (mean ± std) |\n|---|---|\n";
    for (const auto& r : rows) os << "| " << r.name << " | " << detail::fmt_f(r.mean()) << " ± " << detail::fmt_f(r.std()) << " |\n";
    return os.str();
}

/// Validation MSE of the motion mapper per strategy and seed, plus joint with the prosody channel zeroed.
inline std::vector<AblationRow> motion_ablation(const std::vector<data::Sample>& corpus, const data::Codebook& cb,
                                                const motion::MapperTrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                                const std::function<void(const std::string&)>& progress = {}) {
    std::vector<AblationRow> rows;
    const std::vector<std::pair<std::string, std::pair<motion::Strategy, bool>>> variants{
        {"add", {motion::Strategy::Add, true}},
        {"concat", {motion::Strategy::Concat, true}},
        {"dual", {motion::Strategy::Dual, true}},
        {"joint", {motion::Strategy::Joint, true}},
        {"joint w/o prosody", {motion::Strategy::Joint, false}}};
    for (const auto& [name, v] : variants) {
        AblationRow row{name, {}};
        for (auto seed : seeds) {
            motion::MapperTrainConfig mc = base;
            mc.mapper.strategy = v.first;
            mc.prosody = v.second;
            row.values.push_back(motion::train_mapper(corpus, cb, mc, derive_seed(seed, "ablate.motion")).val_mse.back());
            if (progress) progress(name + " seed " + std::to_string(seed) + ": val MSE " + detail::fmt_f(row.values.back()));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Retrieval top-1 of the speaker mapper with each visual input switched off in turn.
inline std::vector<AblationRow> speaker_ablation(const std::vector<data::SyntheticIdentity>& identities,
                                                 const speaker::SpeakerTrainConfig& cfg, std::size_t eval_views,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 const std::function<void(const std::string&)>& progress = {}) {
    std::vector<AblationRow> rows;
    for (auto v : {speaker::InputVariant::Full, speaker::InputVariant::DropRef, speaker::InputVariant::DropFace}) {
        AblationRow row{speaker::to_string(v), {}};
        for (auto seed : seeds) {
            row.values.push_back(speaker::train_and_evaluate(identities, cfg, v, seed, eval_views).accuracy);
            if (progress) progress(row.name + " seed " + std::to_string(seed) + ": top-1 " + detail::fmt_f(row.values.back(), 3));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void cmd_ablate(const Context& ctx) {
    const auto t0 = detail::Clock::now();
    const auto corpus = detail::load_train_corpus(ctx);
    const auto world = world_of(ctx);
    auto say = [&](const std::string& s) { ctx.say("ablate: " + s); };
    const auto motion_rows = motion_ablation(corpus, world.codebook(), ctx.cfg.mapper, ctx.cfg.seeds, say);
    const fs::path dir = ctx.paths.ablation_dir();
    write_atomic(dir / "motion_mapper.csv", ablation_csv(motion_rows, ctx.cfg.seeds, "val_mse"));
    std::string md = ablation_md(motion_rows, "Motion mapper strategies", "validation MSE");
    auto man = ctx.manifest();
    man.record_table("ablation_motion", (dir / "motion_mapper.csv").string());
    if (ctx.cfg.ablate_speaker) {
        const auto spk_rows =
            speaker_ablation(world.identities(), ctx.cfg.speaker, ctx.cfg.speaker_eval_views, ctx.cfg.seeds, say);
        write_atomic(dir / "speaker_mapper.csv", ablation_csv(spk_rows, ctx.cfg.seeds, "top1"));
        md += "\n" + ablation_md(spk_rows, "Speaker mapper inputs", "retrieval top-1");
        man.record_table("ablation_speaker", (dir / "speaker_mapper.csv").string());
    }
    write_atomic(dir / "ablation.md", md);
    man.record_table("ablation_md", (dir / "ablation.md").string());
    ctx.record("ablate", {{"seeds", ctx.cfg.seeds}, {"seconds", detail::seconds_since(t0)}});
}

// ---------------------------------------------------------------------------
// report

/// Collects the metric table, ablation tables and stage timings into summary.md.
inline void cmd_report(const Context& ctx) {
    if (!fs::exists(ctx.paths.report_md()))
        throw MissingPrerequisite("eval", "no metric report at " + ctx.paths.report_md().string() + "; run `tavid eval` first");
    const auto man = ctx.manifest();
    std::ostringstream os;
    os << "# Run summary\n\nConfig hash `" << man.doc().value("config_hash", std::string("?")) << "`, code version "
       << man.doc().value("code_version", std::string("?")) << ", seed " << ctx.cfg.seed << ".\n\n";
    os << "## Metrics\n\n" << read_text(ctx.paths.report_md()) << '\n';
    if (fs::exists(ctx.paths.ablation_dir() / "ablation.md"))
        os << "## Ablations\n\n" << read_text(ctx.paths.ablation_dir() / "ablation.md") << '\n';
    os << "## Stages\n\n| Stage | Final loss | Steps |\n|---|---|---|\n";
    for (const auto& s : train_stages()) {
        if (!man.has_stage(s)) continue;
        const auto& rec = man.doc()["stages"][s];
        const double loss = rec.contains("final_loss") && rec["final_loss"].is_number() ? rec["final_loss"].get<double>()
                                                                                      : std::nan("");
        os << "| " << s << " | " << (std::isfinite(loss) ? detail::fmt_f(loss) : std::string("n/a")) << " | "
           << rec.value("steps", 0) << " |\n";
    }
    write_atomic(ctx.paths.summary(), os.str());
    ctx.say("report: wrote " + ctx.paths.summary().string());
    ctx.manifest().record_table("summary", ctx.paths.summary().string());
}

}  // namespace tavid::harness
