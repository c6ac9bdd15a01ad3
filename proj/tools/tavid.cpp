// SPDX-License-Identifier: Apache-2.0
// tavid: command-line driver for the dual pipeline.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 missing prerequisite,
// 4 numerical failure.

#include <CLI11.hpp>

#include <iostream>

#include "tavid/harness/stages.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kNumerical = 4 };

}  // namespace

int main(int argc, char** argv) {
    using namespace tavid;
    CLI::App app{"tavid: synthetic dyadic talking-video and dialogue-speech pipeline"};
    app.require_subcommand(1);
    std::string config_file;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_file, "JSON config file; unknown keys are rejected");
    app.add_option("--set", overrides, "Override a config key, e.g. --set t2s.temperature=0.7")
        ->expected(1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    app.footer(std::string("Outputs go to <output_dir>, resolved against $") + harness::kOutputRootEnv + " when set.");

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic training and test corpora");
    auto* train = app.add_subcommand("train", "Train one stage");
    std::string stage;
    std::int64_t stop_after = -1;
    train->add_option("stage", stage, "t2s | acoustic | visual | mapper-motion | mapper-speaker")->required();
    train->add_option("--stop-after", stop_after, "Stop (and checkpoint) once this many steps are done");
    auto* infer = app.add_subcommand("infer", "Render speech and motion for scripts");
    std::string script_file;
    infer->add_option("--script", script_file, "JSONL scripts; defaults to the held-out test corpus");
    auto* ablate = app.add_subcommand("ablate", "Motion mapper strategy and speaker mapper input ablations");
    auto* eval = app.add_subcommand("eval", "Compare generated motion with the reference corpus");
    std::string gen_file, gt_file;
    eval->add_option("--generated", gen_file, "Generated corpus; defaults to the last infer output");
    eval->add_option("--reference", gt_file, "Reference corpus; defaults to the test corpus");
    auto* report = app.add_subcommand("report", "Assemble summary.md from the run's tables");
    for (auto* sub : {gen, train, infer, ablate, eval, report}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        const harness::Context ctx(harness::load_config(config_file, overrides), &std::cout);
        if (gen->parsed()) harness::cmd_gen_data(ctx);
        if (train->parsed()) harness::cmd_train(ctx, stage, stop_after);
        if (infer->parsed()) harness::cmd_infer(ctx, script_file);
        if (ablate->parsed()) harness::cmd_ablate(ctx);
        if (eval->parsed()) harness::cmd_eval(ctx, gen_file, gt_file);
        if (report->parsed()) harness::cmd_report(ctx);
        return kOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const MissingPrerequisite& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kMissing;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}
