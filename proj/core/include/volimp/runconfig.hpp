#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volimp/imputer.hpp"
#include "volimp/losses.hpp"
#include "volimp/model.hpp"
#include "volimp/optim.hpp"

namespace volimp::cli {

struct TrainingConfig {
  std::int64_t steps = 100000;
  int batch_size = 64;
  std::uint64_t seed = 1234;
  double weight_decay = 1e-5;
  nd::AdamConstants adam;
  nd::LrSchedule lr;  // linear warmup 1e-7 -> 2e-4 over 5k, halved after 50k
  std::int64_t log_every = 100;
  std::int64_t checkpoint_every = 10000;
};

struct DataConfig {
  enum class Source { kSurfaceCsv, kToyCsv, kSynthetic };
  Source source = Source::kSynthetic;
  std::string csv_path;
  std::string synth_kind = "surfaces";  // two-gauss-equal|two-gauss-unequal|eight-gauss|surfaces
  int synth_n = 2750;                   // days (surfaces) or points (toys)
  std::uint64_t synth_seed = 7;

  enum class SplitMode { kDates, kCounts };
  SplitMode split_mode = SplitMode::kCounts;
  std::string train_end = "2020-02-29";
  std::string val_end = "2020-12-31";
  std::string test_end = "2022-12-31";
  int n_train = 2000, n_val = 250, n_test = 500;
};

struct EvalConfig {
  std::vector<double> rates = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::uint64_t mask_seed = 99;
  impute::ImputationConfig impute;
  int eval_k = 50;
  int calibration_bins = 12;
  bool calibration_quantile_bins = false;
  double collapse_threshold = 0.5;
  int arb_samples = 0;  // 0 = skip the arbitrage rate
  double forward = 1.0;
  int max_threads = 2;
};

struct SweepConfig {
  std::vector<int> hidden_dims = {64, 128};
  std::vector<int> num_blocks = {2, 3, 4};
  std::vector<double> dropouts = {0.1, 0.2, 0.3, 0.4};
  std::vector<int> latent_dims = {32, 64};
  std::int64_t steps = 20000;  // reduced-step sweep by default
  double mae_rate = 0.1;
  int workers = 1;
};

struct RunConfig {
  vae::VaeConfig model;
  loss::LossSpec objective;
  TrainingConfig training;
  DataConfig data;
  EvalConfig eval;
  SweepConfig sweep;
  std::string output_dir = "runs/out";
};

RunConfig default_run_config();
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& config);
std::string run_config_to_string(const RunConfig& config);
/// Derives the training objective from the noise model ("auto" in config).
loss::LossSpec derive_objective(const vae::VaeConfig& model, int iwae_k);

}  // namespace volimp::cli
