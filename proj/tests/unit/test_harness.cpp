// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "support/tiny_config.hpp"
#include "tavid/harness/stages.hpp"

using namespace tavid;
using namespace tavid::harness;
namespace fs = std::filesystem;

namespace {

const std::string kCli = TAVID_CLI_PATH;

ExperimentConfig tiny_config(const fs::path& out, std::vector<std::string> extra = {}) {
    auto o = test::tiny_overrides(out);
    o.insert(o.end(), extra.begin(), extra.end());
    return load_config({}, o);
}

fs::path write_file(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
    return p;
}

}  // namespace

TEST(Config, DefaultsValidate) {
    const auto c = load_config({}, {});
    EXPECT_EQ(c.mapper.mapper.strategy, motion::Strategy::Joint);
    EXPECT_EQ(c.t2s_sampling.cfg_k, 32u);
    EXPECT_EQ(c.acoustic_sampling.steps, 32u);
    EXPECT_EQ(c.speaker.steps, 1000);
    EXPECT_EQ(c.speaker.batch, 64u);
    EXPECT_DOUBLE_EQ(c.visual.cond_dropout, 0.05);
    EXPECT_DOUBLE_EQ(c.t2s.text_dropout, 0.1);
    EXPECT_DOUBLE_EQ(c.acoustic.cond_dropout, 0.3);
}

TEST(Config, UnknownKeysAreRejected) {
    EXPECT_THROW(load_config({}, {"t2s.temprature=0.5"}), ConfigError);
    EXPECT_THROW(load_config({}, {"nonsense=1"}), ConfigError);
    const auto dir = test::scratch_dir("cfg-unknown");
    const auto f = write_file(dir / "c.json", R"({"acoustic": {"cfg_scale": 1.5, "cfg_sclae": 2}})");
    EXPECT_THROW(load_config(f, {}), ConfigError);
}

TEST(Config, TypesAndRangesAreChecked) {
    EXPECT_THROW(load_config({}, {"t2s.top_k=\"many\""}), ConfigError);
    EXPECT_THROW(load_config({}, {"t2s.max_len=1.5"}), ConfigError);
    EXPECT_THROW(load_config({}, {"motion_mapper.strategy=sum"}), ConfigError);
    EXPECT_THROW(load_config({}, {"t2s.temperature=-1"}), ConfigError);
    EXPECT_THROW(load_config({}, {"acoustic.steps=0"}), ConfigError);
    EXPECT_THROW(load_config({}, {"no-equals-sign"}), ConfigError);
}

TEST(Config, OverridesApplyToEveryDocumentedKey) {
    const auto c = load_config({}, {"motion_mapper.strategy=dual", "t2s.temperature=0.7", "t2s.top_k=5",
                                    "t2s.cfg_scale=1.5", "t2s.cfg_k=7", "t2s.max_len=99", "acoustic.steps=16",
                                    "acoustic.cfg_scale=3"});
    EXPECT_EQ(c.mapper.mapper.strategy, motion::Strategy::Dual);
    EXPECT_DOUBLE_EQ(c.t2s_sampling.temperature, 0.7);
    EXPECT_EQ(c.t2s_sampling.top_k, 5u);
    EXPECT_DOUBLE_EQ(c.t2s_sampling.cfg_scale, 1.5);
    EXPECT_EQ(c.t2s_sampling.cfg_k, 7u);
    EXPECT_EQ(c.t2s_sampling.max_len, 99u);
    EXPECT_EQ(c.acoustic_sampling.steps, 16u);
    EXPECT_DOUBLE_EQ(c.acoustic_sampling.cfg_scale, 3.0);
}

TEST(Config, FileThenOverrides) {
    const auto dir = test::scratch_dir("cfg-file");
    const auto f = write_file(dir / "c.json", R"({"t2s": {"top_k": 3}, "seed": 11})");
    const auto c = load_config(f, {"t2s.top_k=4"});
    EXPECT_EQ(c.t2s_sampling.top_k, 4u);
    EXPECT_EQ(c.seed, 11u);
    EXPECT_NE(c.hash, load_config(f, {}).hash);
    EXPECT_EQ(c.hash, load_config(f, {"t2s.top_k=4"}).hash);
    EXPECT_EQ(c.hash, load_config(f, {"t2s.top_k=4", "output_dir=elsewhere"}).hash);
}

TEST(Config, OutputRootFromEnvironment) {
    ::setenv(kOutputRootEnv, "/tmp/root-x", 1);
    EXPECT_EQ(load_config({}, {"output_dir=run1"}).output_dir, fs::path("/tmp/root-x/run1"));
    EXPECT_EQ(load_config({}, {"output_dir=\"/abs/run\""}).output_dir, fs::path("/abs/run"));
    ::unsetenv(kOutputRootEnv);
    EXPECT_EQ(load_config({}, {"output_dir=run1"}).output_dir, fs::path("run1"));
}

TEST(Manifest, AtomicWritesKeepEarlierStages) {
    const auto dir = test::scratch_dir("manifest");
    {
        Manifest m(dir / "manifest.json");
        m.record_stage("a", {{"x", 1}}, 0xabc, "v", 3);
    }
    Manifest m(dir / "manifest.json");
    m.record_stage("b", {{"y", 2}}, 0xabc, "v", 3);
    Manifest again(dir / "manifest.json");
    EXPECT_TRUE(again.has_stage("a"));
    EXPECT_TRUE(again.has_stage("b"));
    EXPECT_EQ(again.doc()["config_hash"], "0000000000000abc");
    EXPECT_FALSE(fs::exists(dir / "manifest.json.tmp"));
}

TEST(Stages, GenDataIsReproducible) {
    const auto a = test::scratch_dir("gen-a"), b = test::scratch_dir("gen-b");
    cmd_gen_data(Context(tiny_config(a)));
    cmd_gen_data(Context(tiny_config(b)));
    EXPECT_EQ(read_text(a / "data" / "corpus.jsonl"), read_text(b / "data" / "corpus.jsonl"));
    EXPECT_EQ(read_text(a / "data" / "test.jsonl"), read_text(b / "data" / "test.jsonl"));
    EXPECT_EQ(Manifest(a / "manifest.json").doc()["seed"], 7);
    const auto corpus = data::load_corpus(a / "data" / "corpus.jsonl");
    EXPECT_EQ(corpus.size(), 8u);
    for (const auto& s : corpus) {
        EXPECT_EQ(s.tokens.length(), 2 * s.frames());
        EXPECT_EQ(s.mel.rows(), s.tokens.length());
    }
}

TEST(Stages, MissingPrerequisitesNameTheStage) {
    const auto dir = test::scratch_dir("prereq");
    const Context ctx(tiny_config(dir));
    try {
        cmd_train(ctx, "t2s");
        FAIL();
    } catch (const MissingPrerequisite& e) {
        EXPECT_EQ(e.stage(), "gen-data");
    }
    cmd_gen_data(ctx);
    try {
        cmd_train(ctx, "visual");
        FAIL();
    } catch (const MissingPrerequisite& e) {
        EXPECT_EQ(e.stage(), "mapper-motion");
    }
    try {
        cmd_infer(ctx);
        FAIL();
    } catch (const MissingPrerequisite& e) {
        EXPECT_EQ(e.stage(), "t2s");
    }
    EXPECT_THROW(cmd_eval(ctx), MissingPrerequisite);
    EXPECT_THROW(cmd_report(ctx), MissingPrerequisite);
    EXPECT_THROW(cmd_train(ctx, "vocoder"), ConfigError);
}

TEST(Stages, ResumeReproducesTheUninterruptedLosses) {
    for (const std::string stage : {"t2s", "acoustic", "mapper-speaker"}) {
        const auto full = test::scratch_dir("resume-full-" + stage), cut = test::scratch_dir("resume-cut-" + stage);
        const Context a(tiny_config(full)), b(tiny_config(cut));
        cmd_gen_data(a);
        cmd_gen_data(b);
        cmd_train(a, stage);
        const TrainOutcome first = cmd_train(b, stage, 7);
        EXPECT_FALSE(first.finished);
        EXPECT_EQ(first.step, 7);
        const TrainOutcome second = cmd_train(b, stage);
        EXPECT_TRUE(second.finished);
        EXPECT_EQ(second.resumed_from, 7);
        EXPECT_EQ(read_text(a.paths.log(stage)), read_text(b.paths.log(stage))) << stage;
        EXPECT_TRUE(read_text(a.paths.checkpoint(stage)) == read_text(b.paths.checkpoint(stage))) << stage;
        EXPECT_FALSE(fs::exists(b.paths.partial(stage)));
    }
}

TEST(Stages, VisualResumeAcrossThePhaseBoundary) {
    const auto full = test::scratch_dir("vis-full"), cut = test::scratch_dir("vis-cut");
    const Context a(tiny_config(full)), b(tiny_config(cut));
    for (const auto* c : {&a, &b}) {
        cmd_gen_data(*c);
        cmd_train(*c, "mapper-motion");
    }
    cmd_train(a, "visual");
    cmd_train(b, "visual", 8);
    cmd_train(b, "visual");
    EXPECT_EQ(read_text(a.paths.log("visual")), read_text(b.paths.log("visual")));
    EXPECT_TRUE(read_text(a.paths.checkpoint("visual")) == read_text(b.paths.checkpoint("visual")));
}

TEST(Stages, VisualStageStartsFromTheMotionMapper) {
    const auto dir = test::scratch_dir("vis-init");
    const Context ctx(tiny_config(dir, {"visual.base_steps=3", "visual.motion_steps=0"}));
    cmd_gen_data(ctx);
    cmd_train(ctx, "mapper-motion");
    cmd_train(ctx, "visual");
    const auto mapper = nn::load_checkpoint(ctx.paths.checkpoint("mapper-motion"));
    const auto vis = nn::load_checkpoint(ctx.paths.checkpoint("visual"));
    EXPECT_EQ(vis.step, 3);
    std::size_t shared = 0;
    for (const auto& [name, t] : vis.tensors) {
        if (name.rfind("mapper.", 0) != 0) continue;
        ++shared;
        EXPECT_EQ(t, mapper.tensors.at(name)) << name;  // frozen during the base phase
    }
    EXPECT_GT(shared, 0u);
}

TEST(Stages, AblationTableSchema) {
    const auto dir = test::scratch_dir("ablate");
    const Context ctx(tiny_config(dir, {"motion_mapper.epochs=1"}));
    cmd_gen_data(ctx);
    cmd_ablate(ctx);
    std::istringstream is(read_text(dir / "ablation" / "motion_mapper.csv"));
    std::string line;
    std::vector<std::string> names;
    std::getline(is, line);
    EXPECT_EQ(line, "variant,val_mse_mean,val_mse_std,seed_1");
    while (std::getline(is, line)) names.push_back(line.substr(0, line.find(',')));
    EXPECT_EQ(names, (std::vector<std::string>{"add", "concat", "dual", "joint", "joint w/o prosody"}));
}

TEST(Stages, EvalOfReferenceAgainstItselfIsZero) {
    const auto dir = test::scratch_dir("eval-self");
    const Context ctx(tiny_config(dir));
    cmd_gen_data(ctx);
    const auto rep = cmd_eval(ctx, ctx.paths.test_corpus(), ctx.paths.test_corpus());
    for (const auto* g : {&rep.exp, &rep.pose}) {
        EXPECT_LT(g->fd, 1e-6);
        EXPECT_EQ(g->rpcc, 0.0);
        EXPECT_EQ(g->dsid, 0.0);
        EXPECT_EQ(g->dvar, 0.0);
    }
    EXPECT_TRUE(fs::exists(dir / "report.csv"));
    EXPECT_TRUE(fs::exists(dir / "report.md"));
}

TEST(Cli, ExitCodes) {
    const auto dir = test::scratch_dir("cli-codes");
    const auto o = test::tiny_overrides(dir);
    EXPECT_EQ(test::run_cli(kCli, {"t2s.nope=1"}, "gen-data"), 2);
    EXPECT_EQ(test::run_cli(kCli, o, "frobnicate"), 2);
    EXPECT_EQ(test::run_cli(kCli, o, "train t2s"), 3);
    EXPECT_EQ(test::run_cli(kCli, o, "gen-data"), 0);
    EXPECT_EQ(test::run_cli(kCli, o, "train visual"), 3);
    EXPECT_EQ(test::run_cli(kCli, o, "eval"), 3);
    auto blowup = o;
    blowup.push_back("acoustic.lr=1e300");
    EXPECT_EQ(test::run_cli(kCli, blowup, "train acoustic"), 4);
    EXPECT_EQ(test::run_cli(kCli, {}, "--config /nonexistent.json gen-data"), 2);
}

TEST(Cli, OverridesAfterTheVerb) {
    const auto dir = test::scratch_dir("cli-after");
    const std::string args = "gen-data --set " + test::shell_quote("output_dir=\"" + dir.string() + "\"") +
                             " --set corpus.n_samples=3 --set corpus.test_samples=2";
    EXPECT_EQ(test::run_cli(kCli, {}, args), 0);
    EXPECT_EQ(data::load_corpus(dir / "data" / "corpus.jsonl").size(), 3u);
}
