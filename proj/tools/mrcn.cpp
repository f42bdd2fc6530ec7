// mrcn: synth / train / predict / evaluate / gradcheck / sweep

#include <CLI11.hpp>
#include <iostream>

#include "mrcn/cli.hpp"

namespace cli = mrcn::cli;

int main(int argc, char** argv) {
  CLI::App app{"Multiresolution land-cover networks: data synthesis, training, prediction, evaluation"};
  app.require_subcommand(1);

  cli::SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write a synthetic 5-tile dataset");
  synth->add_option("--config", sa.config, "config file");
  synth->add_option("--out-dir", sa.out_dir, "output directory")->required();
  synth->add_option("--seed", sa.seed, "dataset seed (overrides [data] seed)");

  cli::TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a network on a dataset directory");
  train->add_option("--config", ta.config, "config file");
  train->add_option("--data", ta.data, "dataset directory (manifest.txt)")->required();
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--seed", ta.seed, "training seed (overrides [train] seed)");

  cli::PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "label a whole tile");
  predict->add_option("--checkpoint", pa.checkpoint, "model.mckp")->required();
  predict->add_option("--config", pa.config, "config (default: effective.cfg next to the checkpoint)");
  predict->add_option("--pan", pa.pan, "PAN raster")->required();
  predict->add_option("--ms", pa.ms, "MS raster")->required();
  predict->add_option("--out-scores", pa.out_scores, "class-score raster (float32)");
  predict->add_option("--out-labels", pa.out_labels, "label raster (uint8)");
  predict->add_flag("--per-instance", pa.per_instance, "also write <scores stem>_inst<r> per unrolled instance");
  predict->add_option("--window", pa.window, "window side in PAN pixels (0: automatic)");
  predict->add_option("--overlap", pa.overlap, "window overlap in PAN pixels (default: receptive-field radius)");

  cli::EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "confusion-matrix metrics of label rasters");
  evaluate->add_option("--pred", ea.pred, "predicted label rasters")->required();
  evaluate->add_option("--ref", ea.ref, "reference label rasters (255 = unlabeled)")->required();
  evaluate->add_option("--classes", ea.classes, "number of classes")->required();
  evaluate->add_option("--report", ea.report, "write report (.csv for CSV, otherwise table)");
  evaluate->add_option("--aa-denominator", ea.aa_denominator, "predicted (default) or reference");

  cli::GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op and a small network");
  gradcheck->add_option("--arch", ga.arch, "variant of the small network");
  gradcheck->add_option("--tolerance", ga.tolerance, "relative tolerance");
  gradcheck->add_option("--seed", ga.seed, "seed");
  gradcheck->add_flag("--corrupt", ga.corrupt, "break the conv2d input gradient (negative control)");
  gradcheck->add_flag("--ops-only", ga.ops_only, "skip the small-network case");

  cli::SweepArgs wa;
  auto* sweep = app.add_subcommand("sweep", "train once per value of one parameter");
  sweep->add_option("--config", wa.config, "config file");
  sweep->add_option("--param", wa.param, "bottleneck_hw | extra_conv_layers | patch_size | upsampler | reuse_R")
      ->required();
  sweep->add_option("--values", wa.values, "comma list, e.g. 16,8,4 or (64,16),(96,24)")->required();
  sweep->add_option("--data", wa.data, "dataset directory")->required();
  sweep->add_option("--out", wa.out, "output directory")->required();
  sweep->add_option("--seed", wa.seed, "training seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kConfigError;
  }

  return cli::guarded(
      [&]() -> int {
        if (*synth) return cli::synth(sa, std::cout);
        if (*train) return cli::train(ta, std::cout);
        if (*predict) return cli::predict(pa, std::cout);
        if (*evaluate) return cli::evaluate(ea, std::cout);
        if (*gradcheck) return cli::gradcheck(ga, std::cout);
        return cli::sweep(wa, std::cout);
      },
      std::cerr);
}
