#include <iostream>

#include <CLI11.hpp>

#include "mpsr/cli.hpp"

using namespace mpsr;

namespace {

void add_common(CLI::App* cmd, cli::CommonOptions& common)
{
    cmd->add_option("--seed", common.seed, "Random seed (overrides the config)");
    cmd->add_option("--config", common.config, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--out", common.out, "Output directory");
    cmd->add_option("--set", common.settings, "Override one setting, key=value (repeatable)");
    cmd->add_flag("--quiet,-q", common.quiet, "Suppress progress output");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multi-prior face super-resolution: data, training, evaluation and checks"};
    app.require_subcommand(1);

    cli::CommonOptions common;

    cli::SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic dataset in the directory layout");
    synth_cmd->add_option("--out", synth.out, "Dataset directory")->required();
    synth_cmd->add_option("--subjects", synth.subjects, "Number of subjects");
    synth_cmd->add_option("--frames", synth.frames, "Frames per subject");
    synth_cmd->add_option("--n-au", synth.n_au, "AU label width (12 or 8)")->check(CLI::IsMember({8, 12}));
    synth_cmd->add_option("--folds", synth.n_folds, "Number of subject-exclusive folds");
    synth_cmd->add_option("--seed", synth.seed, "Generator seed");
    synth_cmd->add_option("--config", common.config, "Accepted for uniformity; unused");

    std::filesystem::path resume;
    auto* train_cmd = app.add_subcommand("train", "Train the PSNR or GAN phase");
    add_common(train_cmd, common);
    train_cmd->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

    cli::EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint per SR step (PSNR, SSIM, AU F1/Acc)");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--detector", eval.detector, "Load a saved AU detector instead of training one")
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--save-detector", eval.save_detector, "Save the trained AU detector");
    eval_cmd->add_option("--split", eval.split, "eval (configured split) or all")->check(CLI::IsMember({"eval", "all"}));

    cli::SrOptions sr;
    auto* sr_cmd = app.add_subcommand("sr", "Super-resolve every PNG in a directory");
    add_common(sr_cmd, common);
    sr_cmd->add_option("--input", sr.input, "Directory of 16x16 (or larger) PNG images")->required();
    sr_cmd->add_option("--checkpoint", sr.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
    sr_cmd->add_flag("--emit-steps", sr.emit_steps, "Also write the step-1 and step-2 outputs");

    auto* ablate_cmd = app.add_subcommand("ablate", "Train the four prior ablation variants and compare them");
    add_common(ablate_cmd, common);

    cli::GradcheckOptions gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every loss and the SR graph");
    add_common(gc_cmd, common);
    gc_cmd->add_option("--corrupt", gc.corrupt_target, "Perturb this target's analytic gradient (self-test)")
        ->group("");
    gc_cmd->add_option("--only", gc.only, "Run only the named suites")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cli::kUserError;
    }

    return cli::guarded(
        [&]() -> int {
            if (*synth_cmd)
                return cli::cmd_synth_data(synth, std::cout);
            if (*train_cmd)
                return cli::cmd_train(common, resume, std::cout);
            if (*eval_cmd)
                return cli::cmd_eval(common, eval, std::cout);
            if (*sr_cmd)
                return cli::cmd_sr(common, sr, std::cout, std::cerr);
            if (*ablate_cmd)
                return cli::cmd_ablate(common, std::cout);
            if (common.seed)
                gc.seed = *common.seed;
            return cli::cmd_gradcheck(common, gc, std::cout);
        },
        std::cerr);
}
