// volimp: train VAE-family models on gridded data with missing values, impute
// distributions over the gaps, and verify generated vol surfaces for static
// arbitrage. See README.md for file schemas.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "volimp/commands.hpp"

namespace {

using volimp::cli::RunConfig;

RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return volimp::cli::default_run_config();
  return volimp::cli::load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volimp: VAE training, distributional imputation and arbitrage checks"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "RunConfig JSON file")->envname("VOLIMP_CONFIG");

  // train
  auto* train = app.add_subcommand("train", "Train a model per config");
  std::string train_out, resume_dir;
  std::int64_t train_steps = -1;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false;
  train->add_option("--out", train_out, "Output directory (overrides config)");
  train->add_option("--resume", resume_dir, "Resume from an output directory");
  train->add_option("--steps", train_steps, "Override training steps");
  train->add_option("--seed", train_seed, "Override training seed")
      ->each([&](const std::string&) { train_seed_set = true; });

  // impute
  auto* imp = app.add_subcommand("impute", "Impute missing cells of surfaces");
  volimp::cli::ImputeArgs impute_args;
  imp->add_option("--checkpoint", impute_args.checkpoint, "Checkpoint JSON")->required();
  imp->add_option("--input", impute_args.input_csv, "Surface CSV")->required();
  imp->add_option("--out", impute_args.out_csv, "Imputed CSV path")->required();
  imp->add_option("--dump", impute_args.out_json, "ImputationResult JSON dump");
  imp->add_option("--mask-rate", impute_args.mask_rate,
                  "Mask this fraction of cells first (default: use native gaps)");
  imp->add_option("--mask-seed", impute_args.mask_seed, "Mask seed");
  imp->add_flag("--dump-weights", impute_args.dump_weights, "Include raw weights in dump");

  // eval
  auto* ev = app.add_subcommand("eval", "Full evaluation report");
  volimp::cli::EvalArgs eval_args;
  ev->add_option("--checkpoint", eval_args.checkpoints, "Checkpoint JSON (repeatable)")
      ->required();
  ev->add_option("--out", eval_args.out_path, "Report JSON path");

  // synth
  auto* sy = app.add_subcommand("synth", "Generate synthetic datasets");
  volimp::cli::SynthArgs synth_args;
  sy->add_option("--kind", synth_args.kind,
                 "two-gauss-equal|two-gauss-unequal|eight-gauss|surfaces")
      ->required();
  sy->add_option("--n", synth_args.n, "Points (toys) or days (surfaces)");
  sy->add_option("--seed", synth_args.seed, "Generator seed");
  sy->add_option("--out", synth_args.out_path, "Output CSV path")->required();

  // arb-check
  auto* ac = app.add_subcommand("arb-check", "Static-arbitrage check of a price grid");
  volimp::cli::ArbCheckArgs arb_args;
  ac->add_option("input", arb_args.input, "PriceGrid CSV (tenor,strike,price) or Surface CSV")
      ->required();
  ac->add_flag("--surface", arb_args.surface_input, "Input is a Surface CSV");
  ac->add_option("--forward", arb_args.forward, "Forward price (default 1.0)");
  ac->add_option("--report", arb_args.report_path, "Report JSON path");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Hyperparameter sweep with leaderboard");
  volimp::cli::SweepArgs sweep_args;
  sw->add_option("--out", sweep_args.out_path, "Leaderboard JSON path")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  std::uint64_t gc_seed = 1234;
  gc->add_option("--seed", gc_seed, "Seed for the random configs");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig config = load_config_or_default(config_path);
    if (train->parsed()) {
      if (!train_out.empty()) config.output_dir = train_out;
      if (train_steps >= 0) config.training.steps = train_steps;
      if (train_seed_set) config.training.seed = train_seed;
      return volimp::cli::cmd_train(config, resume_dir);
    }
    if (imp->parsed()) return volimp::cli::cmd_impute(impute_args, config);
    if (ev->parsed()) return volimp::cli::cmd_eval(eval_args, config);
    if (sy->parsed()) return volimp::cli::cmd_synth(synth_args);
    if (ac->parsed()) return volimp::cli::cmd_arb_check(arb_args);
    if (sw->parsed()) return volimp::cli::cmd_sweep(sweep_args, config);
    if (gc->parsed()) return volimp::cli::cmd_gradcheck(gc_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "volimp: %s\n", e.what());
    return volimp::cli::kExitFailure;
  }
  return volimp::cli::kExitFailure;
}
