#pragma once

#include <string>
#include <vector>

#include "volimp/runconfig.hpp"
#include "volimp/surfaces.hpp"

namespace volimp::cli {

/// Exit codes shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // bad input, config mismatch, runtime error
inline constexpr int kExitArbitrage = 2;  // arb-check found violations

/// Trains per config; writes effective_config.json, loss_log.csv, periodic
/// checkpoint_<step>.json files and a final checkpoint.json under output_dir.
/// A non-empty resume_dir must contain a config identical to `config`.
int cmd_train(const RunConfig& config, const std::string& resume_dir = "");

struct ImputeArgs {
  std::string checkpoint;
  std::string input_csv;
  double mask_rate = -1.0;  // < 0: impute the file's native gaps
  std::uint64_t mask_seed = 99;
  std::string out_csv;
  std::string out_json;  // optional ImputationResult dump
  bool dump_weights = false;
};
int cmd_impute(const ImputeArgs& args, const RunConfig& config);

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string out_path;  // report JSON
};
int cmd_eval(const EvalArgs& args, const RunConfig& config);

struct SynthArgs {
  std::string kind;  // two-gauss-equal|two-gauss-unequal|eight-gauss|surfaces
  int n = 1000;
  std::uint64_t seed = 7;
  std::string out_path;
};
int cmd_synth(const SynthArgs& args);

struct ArbCheckArgs {
  std::string input;        // PriceGrid CSV (tenor,strike,price) or Surface CSV
  bool surface_input = false;
  double forward = 1.0;
  std::string report_path;  // optional JSON report
};
int cmd_arb_check(const ArbCheckArgs& args);

struct SweepArgs {
  std::string out_path;  // leaderboard JSON
};
int cmd_sweep(const SweepArgs& args, const RunConfig& config);

/// Finite-difference check of every loss family on small random configs.
int cmd_gradcheck(std::uint64_t seed = 1234);

// Shared helpers (also used by tests).
struct LoadedData {
  surfaces::Bundle bundle;
  surfaces::Stats stats;
};
LoadedData load_surface_data(const DataConfig& data);

}  // namespace volimp::cli
