#include "volimp/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <utility>

#include <json.hpp>

#include "volimp/arbcheck.hpp"
#include "volimp/checkpoint.hpp"
#include "volimp/metrics.hpp"
#include "volimp/trainer.hpp"

namespace volimp::cli {

using nlohmann::json;
namespace fs = std::filesystem;
using nd::RngStream;
using nd::Tensor;

namespace {

/// Ordered parallel map with per-item isolation; results land by index.
template <typename Fn>
void parallel_for(int n, int threads, Fn fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  std::exception_ptr error;
  std::mutex error_mu;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

Tensor load_toy_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  std::vector<double> values;
  int cols = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string field;
    int c = 0;
    while (std::getline(is, field, ',')) {
      try {
        values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad numeric field");
      }
      ++c;
    }
    if (cols == 0) {
      cols = c;
    } else if (c != cols) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row");
    }
  }
  if (cols == 0) throw DataError(path + ": no data rows");
  const int rows = static_cast<int>(values.size()) / cols;
  return Tensor({rows, cols}, std::move(values));
}

void write_toy_csv(const Tensor& x, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (int j = 0; j < x.cols(); ++j) out << (j ? ",x" : "x") << j;
  out << '\n';
  char buf[64];
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", x.at(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

Tensor generate_toy(const std::string& kind, int n, std::uint64_t seed) {
  RngStream rng = RngStream(seed).child("toy");
  if (kind == "two-gauss-equal") return surfaces::gen_two_gauss(n, false, rng);
  if (kind == "two-gauss-unequal") return surfaces::gen_two_gauss(n, true, rng);
  if (kind == "eight-gauss") return surfaces::gen_eight_gauss(n, 4.0, 0.5, rng);
  throw ConfigError("unknown synthetic kind '" + kind + "'");
}

struct TrainData {
  Tensor x, mask;                       // training matrix
  std::optional<surfaces::Stats> stats; // present for surface data
  std::optional<surfaces::Bundle> bundle;
};

TrainData load_train_data(const DataConfig& data) {
  TrainData td;
  if (data.source == DataConfig::Source::kToyCsv) {
    td.x = load_toy_csv(data.csv_path);
    td.mask = Tensor::full(td.x.shape(), 1.0);
    return td;
  }
  if (data.source == DataConfig::Source::kSynthetic && data.synth_kind != "surfaces") {
    td.x = generate_toy(data.synth_kind, data.synth_n, data.synth_seed);
    td.mask = Tensor::full(td.x.shape(), 1.0);
    return td;
  }
  LoadedData ld = load_surface_data(data);
  surfaces::MaskedMatrix mm = surfaces::to_matrix(ld.bundle.train, ld.stats);
  td.x = std::move(mm.x);
  td.mask = std::move(mm.mask);
  td.stats = ld.stats;
  td.bundle = std::move(ld.bundle);
  return td;
}

void require_feature_dim(const vae::VaeConfig& model, const Tensor& x) {
  if (model.feature_dim != x.cols()) {
    throw ConfigError("model.feature_dim=" + std::to_string(model.feature_dim) +
                      " does not match data width " + std::to_string(x.cols()));
  }
}

void write_loss_log(const std::string& path, const std::vector<train::LossRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "step,total,recon,kl,lr\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.step), r.total, r.recon, r.kl, r.lr);
    out << buf;
  }
}

std::string config_diff(const RunConfig& a, const RunConfig& b) {
  const json ja = json::parse(run_config_to_string(a));
  const json jb = json::parse(run_config_to_string(b));
  std::ostringstream os;
  for (auto& [section, value] : ja.items()) {
    if (section == "output_dir") continue;
    if (!jb.contains(section) || jb.at(section) != value) {
      os << "  " << section << ": " << value.dump() << " vs "
         << (jb.contains(section) ? jb.at(section).dump() : "<missing>") << '\n';
    }
  }
  return os.str();
}

double destd_mean(const surfaces::Stats& st, int cell, double v) {
  return surfaces::destandardize_cell(st, cell, v);
}

double destd_var(const surfaces::Stats& st, int cell, double v) {
  const double sd = st.stddev[static_cast<std::size_t>(cell)];
  return v * sd * sd;
}

}  // namespace

LoadedData load_surface_data(const DataConfig& data) {
  surfaces::Dataset ds;
  if (data.source == DataConfig::Source::kSurfaceCsv) {
    ds = surfaces::load_csv(data.csv_path);
  } else if (data.source == DataConfig::Source::kSynthetic && data.synth_kind == "surfaces") {
    ds = surfaces::gen_synthetic_surfaces(data.synth_n, data.synth_seed);
  } else {
    throw ConfigError("load_surface_data: data source is not surface-shaped");
  }
  LoadedData ld;
  if (data.split_mode == DataConfig::SplitMode::kDates) {
    surfaces::SplitDates dates{surfaces::parse_date(data.train_end),
                               surfaces::parse_date(data.val_end),
                               surfaces::parse_date(data.test_end)};
    ld.bundle = surfaces::split_by_dates(ds, dates);
  } else {
    ld.bundle = surfaces::split_by_counts(ds, data.n_train, data.n_val, data.n_test);
  }
  ld.stats = surfaces::standardize(ld.bundle);
  return ld;
}

int cmd_train(const RunConfig& config, const std::string& resume_dir) {
  config.model.validate();
  loss::validate_spec(config.model, config.objective);
  fs::create_directories(config.output_dir);

  TrainData data = load_train_data(config.data);
  require_feature_dim(config.model, data.x);

  RngStream root(config.training.seed);
  vae::VaeParams params = [&] {
    if (resume_dir.empty()) {
      RngStream init_rng = root.child("init");
      return vae::VaeParams::init(config.model, init_rng);
    }
    const std::string prev_cfg_path = resume_dir + "/effective_config.json";
    RunConfig prev = load_run_config(prev_cfg_path);
    const std::string diff = config_diff(prev, config);
    if (!diff.empty()) {
      std::cerr << "refusing to resume: config mismatch with " << prev_cfg_path << "\n" << diff;
      throw ConfigError("resume config mismatch");
    }
    return ckpt::load_checkpoint(resume_dir + "/checkpoint.json").params;
  }();

  save_run_config(config.output_dir + "/effective_config.json", config);

  ckpt::CheckpointMeta meta;
  meta.seed = config.training.seed;
  meta.adam = config.training.adam;
  meta.weight_decay = config.training.weight_decay;
  meta.lr = config.training.lr;
  meta.stats = data.stats;

  train::Options opt;
  opt.loss = config.objective;
  opt.steps = config.training.steps;
  opt.batch_size = config.training.batch_size;
  opt.lr = config.training.lr;
  opt.weight_decay = config.training.weight_decay;
  opt.adam = config.training.adam;
  opt.seed = config.training.seed;
  opt.log_every = config.training.log_every;
  opt.checkpoint_every = config.training.checkpoint_every;
  opt.checkpoint_cb = [&](std::int64_t step, const vae::VaeParams& p) {
    ckpt::CheckpointMeta m = meta;
    m.step = step;
    ckpt::save_checkpoint(config.output_dir + "/checkpoint_" + std::to_string(step) + ".json",
                          p, m);
  };

  train::Result result = train::fit(std::move(params), data.x, data.mask, opt);

  meta.step = config.training.steps;
  ckpt::save_checkpoint(config.output_dir + "/checkpoint.json", result.params, meta);
  write_loss_log(config.output_dir + "/loss_log.csv", result.log);

  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::printf("trained %lld steps: total=%.6f recon=%.6f kl=%.6f\n",
                static_cast<long long>(config.training.steps), last.total, last.recon,
                last.kl);
  }
  return kExitOk;
}

int cmd_impute(const ImputeArgs& args, const RunConfig& config) {
  ckpt::Checkpoint ck = ckpt::load_checkpoint(args.checkpoint);
  if (!ck.meta.stats) {
    throw ConfigError("checkpoint has no standardization stats; cannot impute surfaces");
  }
  const surfaces::Stats& stats = *ck.meta.stats;
  surfaces::Dataset input = surfaces::load_csv(args.input_csv);
  if (input.surfaces.empty()) throw DataError("no surfaces in " + args.input_csv);

  // Build the working (possibly masked) surfaces and keep truth for the dump.
  std::vector<surfaces::Surface> work(input.surfaces.size());
  for (std::size_t i = 0; i < input.surfaces.size(); ++i) {
    if (args.mask_rate >= 0.0) {
      work[i] = surfaces::apply_mask(input.surfaces[i],
                                     surfaces::MaskSpec{args.mask_rate, args.mask_seed})
                    .surface;
    } else {
      work[i] = input.surfaces[i];
    }
  }

  vae::VaeParams params = ck.params;
  if (config.eval.impute.refit == impute::ImputationConfig::Refit::kEncoder) {
    surfaces::MaskedMatrix mm = surfaces::to_matrix(work, stats);
    RngStream refit_rng = RngStream(config.eval.mask_seed).child("impute_refit");
    params = impute::refit_encoder(params, mm.x, mm.mask, config.eval.impute, refit_rng);
  }

  const int n = static_cast<int>(work.size());
  std::vector<impute::ImputationResult> results(static_cast<std::size_t>(n));
  surfaces::MaskedMatrix mm = surfaces::to_matrix(work, stats);
  parallel_for(n, config.eval.max_threads, [&](int i) {
    Tensor xr({1, surfaces::kNumCells}), mr({1, surfaces::kNumCells});
    for (int c = 0; c < surfaces::kNumCells; ++c) {
      xr.at(0, c) = mm.x.at(i, c);
      mr.at(0, c) = mm.mask.at(i, c);
    }
    RngStream rng =
        RngStream(config.eval.mask_seed).child("impute").child(static_cast<std::uint64_t>(work[static_cast<std::size_t>(i)].date));
    results[static_cast<std::size_t>(i)] =
        impute::impute_moments(params, xr, mr, config.eval.impute, rng);
  });

  std::ofstream out(args.out_csv);
  if (!out) throw DataError("cannot write " + args.out_csv);
  out << "date,tenor,delta,value,variance\n";
  char buf[64];
  for (int i = 0; i < n; ++i) {
    const surfaces::Surface& s = work[static_cast<std::size_t>(i)];
    const auto& res = results[static_cast<std::size_t>(i)];
    const std::string date = surfaces::format_date(s.date);
    for (int t = 0; t < surfaces::kNumTenors; ++t) {
      for (int d = 0; d < surfaces::kNumDeltas; ++d) {
        const int cell = surfaces::cell_index(t, d);
        out << date << ',' << surfaces::kTenorLabels[static_cast<std::size_t>(t)] << ','
            << surfaces::kDeltas[static_cast<std::size_t>(d)] << ',';
        if (s.mask[static_cast<std::size_t>(cell)]) {
          std::snprintf(buf, sizeof(buf), "%.17g", s.values[static_cast<std::size_t>(cell)]);
          out << buf << ',';  // observed cells are echoed, variance left empty
        } else {
          std::snprintf(buf, sizeof(buf), "%.17g",
                        destd_mean(stats, cell, res.mean[static_cast<std::size_t>(cell)]));
          out << buf << ',';
          std::snprintf(buf, sizeof(buf), "%.17g",
                        destd_var(stats, cell, res.variance[static_cast<std::size_t>(cell)]));
          out << buf;
        }
        out << '\n';
      }
    }
  }

  if (!args.out_json.empty()) {
    json dump;
    dump["checkpoint"] = args.checkpoint;
    dump["n_samples"] = config.eval.impute.n_samples;
    json surfs = json::array();
    for (int i = 0; i < n; ++i) {
      const surfaces::Surface& s = work[static_cast<std::size_t>(i)];
      const auto& res = results[static_cast<std::size_t>(i)];
      json cells = json::array();
      for (int c = 0; c < surfaces::kNumCells; ++c) {
        if (s.mask[static_cast<std::size_t>(c)]) continue;
        cells.push_back(
            {{"tenor", surfaces::kTenorLabels[static_cast<std::size_t>(c / surfaces::kNumDeltas)]},
             {"delta", surfaces::kDeltas[static_cast<std::size_t>(c % surfaces::kNumDeltas)]},
             {"mean", destd_mean(stats, c, res.mean[static_cast<std::size_t>(c)])},
             {"variance", destd_var(stats, c, res.variance[static_cast<std::size_t>(c)])}});
      }
      json js = {{"date", surfaces::format_date(s.date)},
                 {"ess", res.ess},
                 {"cells", std::move(cells)}};
      if (args.dump_weights) js["weights"] = res.weights;
      surfs.push_back(std::move(js));
    }
    dump["surfaces"] = std::move(surfs);
    std::ofstream jout(args.out_json);
    if (!jout) throw DataError("cannot write " + args.out_json);
    jout << dump.dump(1) << '\n';
  }
  return kExitOk;
}

namespace {

struct RateEval {
  double rate = 0.0;
  double mae_missing = 0.0;
  double mae_observed = 0.0;
  std::array<double, surfaces::kNumTenors> mae_missing_by_tenor{};
};

}  // namespace

int cmd_eval(const EvalArgs& args, const RunConfig& config) {
  LoadedData ld = load_surface_data(config.data);
  json report;
  report["config"] = json::parse(run_config_to_string(config));
  json models = json::array();

  for (const std::string& ckpath : args.checkpoints) {
    ckpt::Checkpoint ck = ckpt::load_checkpoint(ckpath);
    const surfaces::Stats stats = ck.meta.stats ? *ck.meta.stats : ld.stats;
    if (ck.params.config.feature_dim != surfaces::kNumCells) {
      throw ConfigError("cmd_eval: checkpoint is not a surface model");
    }

    json jm;
    jm["checkpoint"] = ckpath;

    // Negative IWAE(k) per split, with the configured refit policy.
    const bool refit = config.eval.impute.refit == impute::ImputationConfig::Refit::kEncoder;
    RngStream eval_rng(config.eval.mask_seed);
    surfaces::MaskedMatrix train_mm = surfaces::to_matrix(ld.bundle.train, stats);
    surfaces::MaskedMatrix val_mm = surfaces::to_matrix(ld.bundle.validation, stats);
    RngStream r1 = eval_rng.child("neg_elbo_train");
    RngStream r2 = eval_rng.child("neg_elbo_val");
    jm["neg_elbo"] = {
        {"refit", refit},
        {"k", config.eval.eval_k},
        {"train", metrics::neg_elbo_eval(ck.params, train_mm.x, train_mm.mask, refit,
                                         config.eval.impute, r1, config.eval.eval_k)},
        {"validation", metrics::neg_elbo_eval(ck.params, val_mm.x, val_mm.mask, refit,
                                              config.eval.impute, r2, config.eval.eval_k)}};

    // Imputation metrics per missingness rate on the test split.
    std::vector<double> cal_pred_var, cal_sq_err;
    json rates = json::array();
    for (double rate : config.eval.rates) {
      const int n = static_cast<int>(ld.bundle.test.surfaces.size());
      if (n == 0) throw DataError("cmd_eval: empty test split");
      std::vector<surfaces::MaskedSurface> masked(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        masked[static_cast<std::size_t>(i)] = surfaces::apply_mask(
            ld.bundle.test.surfaces[static_cast<std::size_t>(i)],
            surfaces::MaskSpec{rate, config.eval.mask_seed});
      }
      std::vector<surfaces::Surface> work(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) work[static_cast<std::size_t>(i)] = masked[static_cast<std::size_t>(i)].surface;

      vae::VaeParams params = ck.params;
      if (refit) {
        surfaces::MaskedMatrix mm = surfaces::to_matrix(work, stats);
        RngStream refit_rng = eval_rng.child("rate_refit").child(static_cast<std::uint64_t>(rate * 100));
        params = impute::refit_encoder(params, mm.x, mm.mask, config.eval.impute, refit_rng);
      }

      surfaces::MaskedMatrix mm = surfaces::to_matrix(work, stats);
      std::vector<impute::ImputationResult> results(static_cast<std::size_t>(n));
      parallel_for(n, config.eval.max_threads, [&](int i) {
        Tensor xr({1, surfaces::kNumCells}), mr({1, surfaces::kNumCells});
        for (int c = 0; c < surfaces::kNumCells; ++c) {
          xr.at(0, c) = mm.x.at(i, c);
          mr.at(0, c) = mm.mask.at(i, c);
        }
        RngStream rng = RngStream(config.eval.mask_seed)
                            .child("eval_impute")
                            .child(static_cast<std::uint64_t>(rate * 100))
                            .child(static_cast<std::uint64_t>(work[static_cast<std::size_t>(i)].date));
        results[static_cast<std::size_t>(i)] =
            impute::impute_moments(params, xr, mr, config.eval.impute, rng);
      });

      RateEval re;
      re.rate = rate;
      double miss_acc = 0.0, obs_acc = 0.0;
      std::int64_t miss_n = 0, obs_n = 0;
      std::array<double, surfaces::kNumTenors> tenor_acc{};
      std::array<std::int64_t, surfaces::kNumTenors> tenor_n{};
      for (int i = 0; i < n; ++i) {
        const auto& ms = masked[static_cast<std::size_t>(i)];
        const auto& res = results[static_cast<std::size_t>(i)];
        for (int c = 0; c < surfaces::kNumCells; ++c) {
          const double imputed = destd_mean(stats, c, res.mean[static_cast<std::size_t>(c)]);
          const double truth = ms.truth[static_cast<std::size_t>(c)];
          const double err = std::abs(imputed - truth);
          if (ms.surface.mask[static_cast<std::size_t>(c)]) {
            obs_acc += err;
            ++obs_n;
          } else {
            miss_acc += err;
            ++miss_n;
            const int tenor = c / surfaces::kNumDeltas;
            tenor_acc[static_cast<std::size_t>(tenor)] += err;
            ++tenor_n[static_cast<std::size_t>(tenor)];
            cal_pred_var.push_back(destd_var(stats, c, res.variance[static_cast<std::size_t>(c)]));
            cal_sq_err.push_back((imputed - truth) * (imputed - truth));
          }
        }
      }
      re.mae_missing = miss_n ? miss_acc / miss_n * 1e4 : 0.0;
      re.mae_observed = obs_n ? obs_acc / obs_n * 1e4 : 0.0;
      json jt = json::object();
      for (int t = 0; t < surfaces::kNumTenors; ++t) {
        if (tenor_n[static_cast<std::size_t>(t)] > 0) {
          re.mae_missing_by_tenor[static_cast<std::size_t>(t)] =
              tenor_acc[static_cast<std::size_t>(t)] / tenor_n[static_cast<std::size_t>(t)] * 1e4;
        }
        jt[surfaces::kTenorLabels[static_cast<std::size_t>(t)]] =
            re.mae_missing_by_tenor[static_cast<std::size_t>(t)];
      }
      rates.push_back({{"rate", rate},
                       {"mae_missing_bps", re.mae_missing},
                       {"mae_observed_bps", re.mae_observed},
                       {"mae_missing_by_tenor_bps", std::move(jt)}});
      std::printf("rate %.1f: MAE missing %.2f bps, observed %.2f bps\n", rate,
                  re.mae_missing, re.mae_observed);
    }
    jm["rates"] = std::move(rates);

    // Variance calibration over all missing cells (pooled across rates).
    if (cal_pred_var.size() >= 4) {
      auto bins = metrics::variance_calibration(cal_pred_var, cal_sq_err,
                                                config.eval.calibration_bins,
                                                config.eval.calibration_quantile_bins);
      json jb = json::array();
      for (const auto& b : bins) {
        jb.push_back({{"lo", b.lo},
                      {"hi", b.hi},
                      {"count", b.count},
                      {"mean_pred_var", b.mean_pred_var},
                      {"mean_sq_err", b.mean_sq_err},
                      {"std_err", b.std_err},
                      {"normalized_distance", b.normalized_distance}});
      }
      jm["calibration"] = std::move(jb);
    }

    // Posterior collapse on the (fully observed) test split.
    {
      surfaces::MaskedMatrix test_mm = surfaces::to_matrix(ld.bundle.test, stats);
      metrics::CollapseReport cr =
          metrics::posterior_collapse(ck.params, test_mm.x, config.eval.collapse_threshold);
      jm["posterior_collapse"] = {{"active_dims", cr.active_dims},
                                  {"threshold", cr.threshold},
                                  {"dim_variance", cr.dim_variance},
                                  {"cumulative_fraction", cr.cumulative_fraction}};
      std::printf("posterior collapse: %d of %d dims active\n", cr.active_dims,
                  ck.params.config.latent_dim);
    }

    if (config.eval.arb_samples > 0) {
      RngStream arb_rng = eval_rng.child("arb");
      arb::ArbRate ar = arb::sample_arb_rate(ck.params, stats, config.eval.arb_samples,
                                             config.eval.forward, arb_rng,
                                             config.eval.max_threads);
      jm["arb_rate"] = {{"fraction_arb_free", ar.fraction_arb_free},
                        {"std_err", ar.std_err},
                        {"n_samples", ar.n_samples}};
      std::printf("arb-free fraction: %.4f +- %.4f\n", ar.fraction_arb_free, ar.std_err);
    }

    models.push_back(std::move(jm));
  }
  report["models"] = std::move(models);

  if (!args.out_path.empty()) {
    std::ofstream out(args.out_path);
    if (!out) throw DataError("cannot write " + args.out_path);
    out << report.dump(1) << '\n';
  }
  return kExitOk;
}

int cmd_synth(const SynthArgs& args) {
  json provenance = {{"kind", args.kind}, {"n", args.n}, {"seed", args.seed}};
  if (args.kind == "surfaces") {
    surfaces::Dataset ds = surfaces::gen_synthetic_surfaces(args.n, args.seed);
    surfaces::save_csv(ds, args.out_path);
    provenance["generator"] = "mean-reverting ATM level, per-tenor forward variance, "
                              "delta-quadratic smile";
  } else {
    Tensor x = generate_toy(args.kind, args.n, args.seed);
    write_toy_csv(x, args.out_path);
    if (args.kind == "eight-gauss") {
      provenance["radius"] = 4.0;
      provenance["component_std"] = 0.5;
      provenance["global_scale"] = "1/sqrt(2)";
    }
  }
  std::ofstream pout(args.out_path + ".provenance.json");
  if (!pout) throw DataError("cannot write provenance for " + args.out_path);
  pout << provenance.dump(2) << '\n';
  std::printf("wrote %s (%d %s)\n", args.out_path.c_str(), args.n,
              args.kind == "surfaces" ? "days" : "points");
  return kExitOk;
}

namespace {

arb::PriceGrid load_price_grid_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) ||
      (line != "tenor,strike,price" && line != "tenor,strike,price\r")) {
    throw ParseError(path + ": expected header 'tenor,strike,price'");
  }
  std::map<double, std::vector<std::pair<double, double>>> by_tenor;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    double tenor, strike, price;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &tenor, &strike, &price) != 3) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected tenor,strike,price");
    }
    by_tenor[tenor].emplace_back(strike, price);
  }
  arb::PriceGrid g;
  for (auto& [tenor, pts] : by_tenor) {
    std::sort(pts.begin(), pts.end());
    g.tenors.push_back(tenor);
    g.strikes.emplace_back();
    g.prices.emplace_back();
    for (auto& [k, p] : pts) {
      g.strikes.back().push_back(k);
      g.prices.back().push_back(p);
    }
  }
  g.validate();
  return g;
}

json report_to_json(const arb::ArbReport& rep) {
  json jc = json::array();
  for (const auto& v : rep.calendar_violations) {
    jc.push_back({{"tenor_a", v.tenor_a},
                  {"strike_a", v.strike_a},
                  {"tenor_b", v.tenor_b},
                  {"strike_b", v.strike_b},
                  {"price_a", v.price_a},
                  {"price_b", v.price_b}});
  }
  json js = json::array();
  for (const auto& v : rep.slope_violations) {
    js.push_back({{"tenor", v.tenor},
                  {"strike", v.strike},
                  {"sup_left", v.sup_left},
                  {"inf_right", v.inf_right}});
  }
  return json{{"arb_free", rep.arb_free},
              {"calendar_violations", std::move(jc)},
              {"slope_violations", std::move(js)},
              {"worst_margin", rep.worst_margin}};
}

}  // namespace

int cmd_arb_check(const ArbCheckArgs& args) {
  json out = json::array();
  bool any_arb = false;
  if (args.surface_input) {
    surfaces::Dataset ds = surfaces::load_csv(args.input);
    for (const surfaces::Surface& s : ds.surfaces) {
      if (!s.fully_observed()) {
        throw DataError("arb-check: surface " + surfaces::format_date(s.date) +
                        " has missing cells");
      }
      arb::ArbReport rep = arb::check_grid(arb::vol_grid_to_prices(s, args.forward));
      any_arb = any_arb || !rep.arb_free;
      json jr = report_to_json(rep);
      jr["date"] = surfaces::format_date(s.date);
      std::printf("%s: %s (worst margin %.3g)\n", surfaces::format_date(s.date).c_str(),
                  rep.arb_free ? "arb-free" : "ARBITRAGE", rep.worst_margin);
      for (const auto& v : rep.calendar_violations) {
        std::printf("  calendar: tenor %d strike#%d price %.6g >= tenor %d strike#%d price %.6g\n",
                    v.tenor_a, v.strike_a, v.price_a, v.tenor_b, v.strike_b, v.price_b);
      }
      for (const auto& v : rep.slope_violations) {
        std::printf("  slope: tenor %d strike#%d sup_left %.6g > min(0, inf_right %.6g)\n",
                    v.tenor, v.strike, v.sup_left, v.inf_right);
      }
      out.push_back(std::move(jr));
    }
  } else {
    arb::ArbReport rep = arb::check_grid(load_price_grid_csv(args.input));
    any_arb = !rep.arb_free;
    std::printf("%s (worst margin %.3g)\n", rep.arb_free ? "arb-free" : "ARBITRAGE",
                rep.worst_margin);
    for (const auto& v : rep.calendar_violations) {
      std::printf("  calendar: tenor %d strike#%d price %.6g >= tenor %d strike#%d price %.6g\n",
                  v.tenor_a, v.strike_a, v.price_a, v.tenor_b, v.strike_b, v.price_b);
    }
    for (const auto& v : rep.slope_violations) {
      std::printf("  slope: tenor %d strike#%d sup_left %.6g > min(0, inf_right %.6g)\n",
                  v.tenor, v.strike, v.sup_left, v.inf_right);
    }
    out.push_back(report_to_json(rep));
  }
  if (!args.report_path.empty()) {
    std::ofstream ro(args.report_path);
    if (!ro) throw DataError("cannot write " + args.report_path);
    ro << out.dump(1) << '\n';
  }
  return any_arb ? kExitArbitrage : kExitOk;
}

int cmd_sweep(const SweepArgs& args, const RunConfig& config) {
  LoadedData ld = load_surface_data(config.data);
  surfaces::MaskedMatrix train_mm = surfaces::to_matrix(ld.bundle.train, ld.stats);
  surfaces::MaskedMatrix val_mm = surfaces::to_matrix(ld.bundle.validation, ld.stats);

  struct Entry {
    vae::VaeConfig model;
    double neg_elbo = 0.0, mae = 0.0;
  };
  std::vector<Entry> entries;
  for (int h : config.sweep.hidden_dims)
    for (int b : config.sweep.num_blocks)
      for (double dr : config.sweep.dropouts)
        for (int d : config.sweep.latent_dims) {
          Entry e;
          e.model = config.model;
          e.model.hidden_dim = h;
          e.model.num_blocks = b;
          e.model.dropout = dr;
          e.model.latent_dim = d;
          entries.push_back(e);
        }

  parallel_for(static_cast<int>(entries.size()), config.sweep.workers, [&](int idx) {
    Entry& e = entries[static_cast<std::size_t>(idx)];
    train::Options opt;
    opt.loss = derive_objective(e.model, e.model.iwae_k);
    opt.steps = config.sweep.steps;
    opt.batch_size = config.training.batch_size;
    opt.lr = config.training.lr;
    opt.weight_decay = config.training.weight_decay;
    opt.adam = config.training.adam;
    opt.seed = config.training.seed;
    opt.log_every = 0;
    RngStream init_rng = RngStream(config.training.seed).child("init");
    vae::VaeParams params = vae::VaeParams::init(e.model, init_rng);
    train::Result r = train::fit(std::move(params), train_mm.x, train_mm.mask, opt);

    RngStream rng = RngStream(config.eval.mask_seed).child("sweep").child(static_cast<std::uint64_t>(idx));
    RngStream elbo_rng = rng.child("elbo");
    e.neg_elbo = metrics::neg_elbo_eval(r.params, val_mm.x, val_mm.mask, false,
                                        config.eval.impute, elbo_rng, config.eval.eval_k);

    // Validation MAE at the sweep rate.
    double acc = 0.0;
    std::int64_t cnt = 0;
    for (std::size_t i = 0; i < ld.bundle.validation.surfaces.size(); ++i) {
      surfaces::MaskedSurface ms = surfaces::apply_mask(
          ld.bundle.validation.surfaces[i],
          surfaces::MaskSpec{config.sweep.mae_rate, config.eval.mask_seed});
      Tensor xr({1, surfaces::kNumCells}), mr({1, surfaces::kNumCells});
      for (int c = 0; c < surfaces::kNumCells; ++c) {
        xr.at(0, c) = ms.surface.mask[static_cast<std::size_t>(c)]
                          ? surfaces::standardize_cell(ld.stats, c,
                                                       ms.surface.values[static_cast<std::size_t>(c)])
                          : 0.0;
        mr.at(0, c) = ms.surface.mask[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
      }
      RngStream irng = rng.child("impute").child(static_cast<std::uint64_t>(ms.surface.date));
      impute::ImputationResult res =
          impute::impute_moments(r.params, xr, mr, config.eval.impute, irng);
      for (int c = 0; c < surfaces::kNumCells; ++c) {
        if (ms.surface.mask[static_cast<std::size_t>(c)]) continue;
        acc += std::abs(destd_mean(ld.stats, c, res.mean[static_cast<std::size_t>(c)]) -
                        ms.truth[static_cast<std::size_t>(c)]);
        ++cnt;
      }
    }
    e.mae = cnt ? acc / cnt * 1e4 : 0.0;
    std::printf("sweep %2d: h=%3d blocks=%d dropout=%.1f d=%2d  neg_elbo=%9.3f mae=%7.2f\n",
                idx, e.model.hidden_dim, e.model.num_blocks, e.model.dropout,
                e.model.latent_dim, e.neg_elbo, e.mae);
  });

  std::vector<double> elbos, maes;
  for (const auto& e : entries) {
    elbos.push_back(e.neg_elbo);
    maes.push_back(e.mae);
  }
  const double corr = entries.size() >= 2 ? metrics::rank_correlation(elbos, maes) : 0.0;

  std::vector<int> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return entries[static_cast<std::size_t>(a)].neg_elbo <
           entries[static_cast<std::size_t>(b)].neg_elbo;
  });

  json rows = json::array();
  for (int i : order) {
    const Entry& e = entries[static_cast<std::size_t>(i)];
    rows.push_back({{"hidden_dim", e.model.hidden_dim},
                    {"num_blocks", e.model.num_blocks},
                    {"dropout", e.model.dropout},
                    {"latent_dim", e.model.latent_dim},
                    {"val_neg_elbo", e.neg_elbo},
                    {"val_mae_bps", e.mae}});
  }
  json leaderboard = {{"rows", std::move(rows)},
                      {"rank_correlation", corr},
                      {"steps", config.sweep.steps},
                      {"mae_rate", config.sweep.mae_rate}};
  std::ofstream out(args.out_path);
  if (!out) throw DataError("cannot write " + args.out_path);
  out << leaderboard.dump(1) << '\n';
  std::printf("rank correlation (val neg-ELBO vs val MAE): %.3f\n", corr);
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  RngStream root(seed);
  struct Case {
    const char* name;
    vae::NoiseKind noise;
    loss::LossSpec spec;
  };
  const std::vector<Case> cases = {
      {"beta", vae::NoiseKind::kFixedScalar, {loss::Kind::kBeta, 0.7, 1, 1}},
      {"sigma", vae::NoiseKind::kLearnableScalar, {loss::Kind::kSigma, 1.0, 1, 1}},
      {"sigma_vec", vae::NoiseKind::kLearnableVector, {loss::Kind::kSigmaVec, 1.0, 1, 1}},
      {"big_sigma", vae::NoiseKind::kConditional, {loss::Kind::kBigSigma, 1.0, 1, 1}},
      {"iwae_k1", vae::NoiseKind::kLearnableScalar, {loss::Kind::kIwae, 1.0, 1, 1}},
      {"iwae_k5", vae::NoiseKind::kConditional, {loss::Kind::kIwae, 1.0, 5, 1}},
  };
  bool ok = true;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const Case& c = cases[ci];
    RngStream case_rng = root.child(static_cast<std::uint64_t>(ci));
    vae::VaeConfig config;
    config.feature_dim = 2 + static_cast<int>(case_rng.next_u64() % 5);  // <= 6
    config.latent_dim = 1 + static_cast<int>(case_rng.next_u64() % 3);
    config.hidden_dim = 4 + static_cast<int>(case_rng.next_u64() % 13);  // <= 16
    config.num_blocks = 2;
    config.architecture = ci % 2 == 0 ? vae::Arch::kResidual : vae::Arch::kMlp;
    config.noise = c.noise;
    config.fixed_sigma = 0.8;
    RngStream init_rng = case_rng.child("init");
    vae::VaeParams params = vae::VaeParams::init(config, init_rng);

    const int n = 3;
    RngStream data_rng = case_rng.child("data");
    Tensor x = nd::normal_tensor(data_rng, {n, config.feature_dim});
    Tensor mask = Tensor::full({n, config.feature_dim}, 1.0);
    mask.at(0, 0) = 0.0;  // one missing cell
    const int r = c.spec.kind == loss::Kind::kIwae ? c.spec.k : c.spec.m;
    RngStream eps_rng = case_rng.child("eps");
    Tensor eps = loss::draw_eps_base(eps_rng, r, config.latent_dim);

    std::vector<Tensor> values;
    for (const Tensor* t : std::as_const(params).tensors()) values.push_back(*t);

    auto f = [&](nd::Tape& tape, const std::vector<nd::Var>& vs) {
      vae::VaeVars vars = vae::rebind_vars(params, vs);
      loss::LossGraph g =
          loss::build_loss(tape, vars, config, x, mask, c.spec, eps, false, nullptr);
      return g.total;
    };
    const double err = nd::gradcheck_multi(f, values, 1e-5);
    std::printf("gradcheck %-10s p=%d d=%d h=%d arch=%s: max rel err %.3g\n", c.name,
                config.feature_dim, config.latent_dim, config.hidden_dim,
                vae::arch_name(config.architecture), err);
    if (!(err < 1e-5)) ok = false;
  }
  std::printf("gradcheck: %s\n", ok ? "PASS" : "FAIL");
  return ok ? kExitOk : kExitFailure;
}

}  // namespace volimp::cli
