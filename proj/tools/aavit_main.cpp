// aavit command-line tool: synthetic corpus generation, training, scoring,
// metric reports, and the three-head ablation runner.

#include <CLI11.hpp>

#include "aavit/cli.hpp"

int main(int argc, char** argv) {
    aavit::RunSpec spec;

    CLI::App app{"AAViT face anti-spoofing toolkit"};
    app.require_subcommand(1);

    auto add_common = [&spec](CLI::App* cmd) {
        cmd->add_option("--out", spec.out_dir, "output directory")->required();
        cmd->add_option("--seed", spec.seed, "seed override (pins model and train seeds)");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic real/spoof PPM corpus");
    add_common(synth);
    synth->add_option("--count", spec.synth_count, "train images per class (default 64)");
    synth->add_option("--count-dev", spec.synth_count_dev, "dev images per class (default 32)");
    synth->add_option("--count-test", spec.synth_count_test, "test images per class (default 32)");
    synth->add_option("--size", spec.synth_size, "square image size in pixels (default 32)");

    auto* trn = app.add_subcommand("train", "train a model on a manifest's train split");
    add_common(trn);
    trn->add_option("--config", spec.config_path, "JSON config with model/train sections")
        ->required();
    trn->add_option("--manifest", spec.manifest_path, "dataset manifest CSV")->required();
    trn->add_option("--set", spec.overrides, "dotted config override, e.g. model.depth=2");
    trn->add_flag("--select-best-dev", spec.select_best_dev,
                  "keep the checkpoint with the best dev EER");

    auto* evl = app.add_subcommand("eval", "score a manifest split with a checkpoint");
    add_common(evl);
    evl->add_option("--checkpoint", spec.checkpoint, "model checkpoint (.aavt)")->required();
    evl->add_option("--manifest", spec.manifest_path, "dataset manifest CSV")->required();
    evl->add_option("--split", spec.split, "auto | train | dev | test (default auto)");
    evl->add_flag("--per-video", spec.per_video, "aggregate frame scores by video id");

    auto* rep = app.add_subcommand("report", "compute metrics from a score CSV");
    add_common(rep);
    rep->add_option("--scores", spec.scores, "test score CSV")->required();
    rep->add_option("--scores-dev", spec.scores_dev, "optional dev score CSV");
    rep->add_option("--manifest", spec.manifest_path, "manifest (needed for --per-video)");
    rep->add_flag("--per-video", spec.per_video, "aggregate frame scores by video id");

    auto* abl = app.add_subcommand("ablate", "train and compare the three head variants");
    add_common(abl);
    abl->add_option("--config", spec.config_path, "JSON config with model/train sections")
        ->required();
    abl->add_option("--manifest", spec.manifest_path, "dataset manifest CSV")->required();
    abl->add_option("--set", spec.overrides, "dotted config override");
    abl->add_flag("--select-best-dev", spec.select_best_dev,
                  "evaluate the best-dev checkpoint instead of the final one");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message
        return 2;     // bad invocation is a config error
    }

    spec.command = app.get_subcommands().front()->get_name();
    return aavit::run_command(spec);
}
