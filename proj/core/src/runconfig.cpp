#include "volimp/runconfig.hpp"

#include <fstream>

#include <json.hpp>

namespace volimp::cli {

using nlohmann::json;

namespace {

json lr_to_json(const nd::LrSchedule& s) {
  return json{{"warmup_start", s.warmup_start},
              {"warmup_end", s.warmup_end},
              {"warmup_steps", s.warmup_steps},
              {"decay_step", s.decay_step},
              {"decay_factor", s.decay_factor}};
}

void lr_from_json(const json& j, nd::LrSchedule& s) {
  s.warmup_start = j.value("warmup_start", s.warmup_start);
  s.warmup_end = j.value("warmup_end", s.warmup_end);
  s.warmup_steps = j.value("warmup_steps", s.warmup_steps);
  s.decay_step = j.value("decay_step", s.decay_step);
  s.decay_factor = j.value("decay_factor", s.decay_factor);
}

const char* source_name(DataConfig::Source s) {
  switch (s) {
    case DataConfig::Source::kSurfaceCsv: return "surface_csv";
    case DataConfig::Source::kToyCsv: return "toy_csv";
    case DataConfig::Source::kSynthetic: return "synthetic";
  }
  return "?";
}

DataConfig::Source source_from_name(const std::string& s) {
  if (s == "surface_csv") return DataConfig::Source::kSurfaceCsv;
  if (s == "toy_csv") return DataConfig::Source::kToyCsv;
  if (s == "synthetic") return DataConfig::Source::kSynthetic;
  throw ConfigError("unknown data source '" + s + "'");
}

json config_to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"feature_dim", c.model.feature_dim},
                {"latent_dim", c.model.latent_dim},
                {"hidden_dim", c.model.hidden_dim},
                {"num_blocks", c.model.num_blocks},
                {"dropout", c.model.dropout},
                {"architecture", vae::arch_name(c.model.architecture)},
                {"noise_model", vae::noise_name(c.model.noise)},
                {"fixed_sigma", c.model.fixed_sigma},
                {"iwae_k", c.model.iwae_k}};
  j["objective"] = {{"kind", loss::kind_name(c.objective.kind)},
                    {"beta", c.objective.beta},
                    {"k", c.objective.k},
                    {"m", c.objective.m}};
  j["training"] = {{"steps", c.training.steps},
                   {"batch_size", c.training.batch_size},
                   {"seed", c.training.seed},
                   {"weight_decay", c.training.weight_decay},
                   {"adam", {{"beta1", c.training.adam.beta1},
                             {"beta2", c.training.adam.beta2},
                             {"eps", c.training.adam.eps}}},
                   {"lr", lr_to_json(c.training.lr)},
                   {"log_every", c.training.log_every},
                   {"checkpoint_every", c.training.checkpoint_every}};
  j["data"] = {{"source", source_name(c.data.source)},
               {"csv_path", c.data.csv_path},
               {"synth_kind", c.data.synth_kind},
               {"synth_n", c.data.synth_n},
               {"synth_seed", c.data.synth_seed},
               {"split_mode", c.data.split_mode == DataConfig::SplitMode::kDates ? "dates"
                                                                                 : "counts"},
               {"train_end", c.data.train_end},
               {"val_end", c.data.val_end},
               {"test_end", c.data.test_end},
               {"n_train", c.data.n_train},
               {"n_val", c.data.n_val},
               {"n_test", c.data.n_test}};
  j["eval"] = {{"rates", c.eval.rates},
               {"mask_seed", c.eval.mask_seed},
               {"impute",
                {{"n_samples", c.eval.impute.n_samples},
                 {"refit", c.eval.impute.refit == impute::ImputationConfig::Refit::kEncoder
                               ? "encoder"
                               : "none"},
                 {"refit_steps", c.eval.impute.refit_steps},
                 {"refit_batch", c.eval.impute.refit_batch},
                 {"refit_k", c.eval.impute.refit_k},
                 {"refit_lr", lr_to_json(c.eval.impute.refit_lr)},
                 {"gibbs", {{"burn_in", c.eval.impute.gibbs.burn_in},
                            {"thinning", c.eval.impute.gibbs.thinning},
                            {"kept", c.eval.impute.gibbs.kept}}}}},
               {"eval_k", c.eval.eval_k},
               {"calibration_bins", c.eval.calibration_bins},
               {"calibration_quantile_bins", c.eval.calibration_quantile_bins},
               {"collapse_threshold", c.eval.collapse_threshold},
               {"arb_samples", c.eval.arb_samples},
               {"forward", c.eval.forward},
               {"max_threads", c.eval.max_threads}};
  j["sweep"] = {{"hidden_dims", c.sweep.hidden_dims},
                {"num_blocks", c.sweep.num_blocks},
                {"dropouts", c.sweep.dropouts},
                {"latent_dims", c.sweep.latent_dims},
                {"steps", c.sweep.steps},
                {"mae_rate", c.sweep.mae_rate},
                {"workers", c.sweep.workers}};
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  if (j.contains("model")) {
    const json& m = j.at("model");
    c.model.feature_dim = m.value("feature_dim", c.model.feature_dim);
    c.model.latent_dim = m.value("latent_dim", c.model.latent_dim);
    c.model.hidden_dim = m.value("hidden_dim", c.model.hidden_dim);
    c.model.num_blocks = m.value("num_blocks", c.model.num_blocks);
    c.model.dropout = m.value("dropout", c.model.dropout);
    if (m.contains("architecture")) {
      c.model.architecture = vae::arch_from_name(m.at("architecture").get<std::string>());
    }
    if (m.contains("noise_model")) {
      c.model.noise = vae::noise_from_name(m.at("noise_model").get<std::string>());
    }
    c.model.fixed_sigma = m.value("fixed_sigma", c.model.fixed_sigma);
    c.model.iwae_k = m.value("iwae_k", c.model.iwae_k);
  }
  if (j.contains("objective")) {
    const json& o = j.at("objective");
    const std::string kind = o.value("kind", "auto");
    if (kind == "auto") {
      c.objective = derive_objective(c.model, c.model.iwae_k);
    } else {
      c.objective.kind = loss::kind_from_name(kind);
    }
    c.objective.beta = o.value("beta", c.objective.beta);
    c.objective.k = o.value("k", c.objective.k);
    c.objective.m = o.value("m", c.objective.m);
  } else {
    c.objective = derive_objective(c.model, c.model.iwae_k);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    c.training.steps = t.value("steps", c.training.steps);
    c.training.batch_size = t.value("batch_size", c.training.batch_size);
    c.training.seed = t.value("seed", c.training.seed);
    c.training.weight_decay = t.value("weight_decay", c.training.weight_decay);
    if (t.contains("adam")) {
      const json& a = t.at("adam");
      c.training.adam.beta1 = a.value("beta1", c.training.adam.beta1);
      c.training.adam.beta2 = a.value("beta2", c.training.adam.beta2);
      c.training.adam.eps = a.value("eps", c.training.adam.eps);
    }
    if (t.contains("lr")) lr_from_json(t.at("lr"), c.training.lr);
    c.training.log_every = t.value("log_every", c.training.log_every);
    c.training.checkpoint_every = t.value("checkpoint_every", c.training.checkpoint_every);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    if (d.contains("source")) c.data.source = source_from_name(d.at("source").get<std::string>());
    c.data.csv_path = d.value("csv_path", c.data.csv_path);
    c.data.synth_kind = d.value("synth_kind", c.data.synth_kind);
    c.data.synth_n = d.value("synth_n", c.data.synth_n);
    c.data.synth_seed = d.value("synth_seed", c.data.synth_seed);
    if (d.contains("split_mode")) {
      const std::string sm = d.at("split_mode").get<std::string>();
      if (sm == "dates") {
        c.data.split_mode = DataConfig::SplitMode::kDates;
      } else if (sm == "counts") {
        c.data.split_mode = DataConfig::SplitMode::kCounts;
      } else {
        throw ConfigError("unknown split_mode '" + sm + "'");
      }
    }
    c.data.train_end = d.value("train_end", c.data.train_end);
    c.data.val_end = d.value("val_end", c.data.val_end);
    c.data.test_end = d.value("test_end", c.data.test_end);
    c.data.n_train = d.value("n_train", c.data.n_train);
    c.data.n_val = d.value("n_val", c.data.n_val);
    c.data.n_test = d.value("n_test", c.data.n_test);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    if (e.contains("rates")) c.eval.rates = e.at("rates").get<std::vector<double>>();
    c.eval.mask_seed = e.value("mask_seed", c.eval.mask_seed);
    if (e.contains("impute")) {
      const json& im = e.at("impute");
      c.eval.impute.n_samples = im.value("n_samples", c.eval.impute.n_samples);
      const std::string refit = im.value("refit", "none");
      if (refit == "encoder") {
        c.eval.impute.refit = impute::ImputationConfig::Refit::kEncoder;
      } else if (refit == "none") {
        c.eval.impute.refit = impute::ImputationConfig::Refit::kNone;
      } else {
        throw ConfigError("unknown refit mode '" + refit + "'");
      }
      c.eval.impute.refit_steps = im.value("refit_steps", c.eval.impute.refit_steps);
      c.eval.impute.refit_batch = im.value("refit_batch", c.eval.impute.refit_batch);
      c.eval.impute.refit_k = im.value("refit_k", c.eval.impute.refit_k);
      if (im.contains("refit_lr")) lr_from_json(im.at("refit_lr"), c.eval.impute.refit_lr);
      if (im.contains("gibbs")) {
        const json& g = im.at("gibbs");
        c.eval.impute.gibbs.burn_in = g.value("burn_in", c.eval.impute.gibbs.burn_in);
        c.eval.impute.gibbs.thinning = g.value("thinning", c.eval.impute.gibbs.thinning);
        c.eval.impute.gibbs.kept = g.value("kept", c.eval.impute.gibbs.kept);
      }
    }
    c.eval.eval_k = e.value("eval_k", c.eval.eval_k);
    c.eval.calibration_bins = e.value("calibration_bins", c.eval.calibration_bins);
    c.eval.calibration_quantile_bins =
        e.value("calibration_quantile_bins", c.eval.calibration_quantile_bins);
    c.eval.collapse_threshold = e.value("collapse_threshold", c.eval.collapse_threshold);
    c.eval.arb_samples = e.value("arb_samples", c.eval.arb_samples);
    c.eval.forward = e.value("forward", c.eval.forward);
    c.eval.max_threads = e.value("max_threads", c.eval.max_threads);
  }
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    if (s.contains("hidden_dims")) c.sweep.hidden_dims = s.at("hidden_dims").get<std::vector<int>>();
    if (s.contains("num_blocks")) c.sweep.num_blocks = s.at("num_blocks").get<std::vector<int>>();
    if (s.contains("dropouts")) c.sweep.dropouts = s.at("dropouts").get<std::vector<double>>();
    if (s.contains("latent_dims")) c.sweep.latent_dims = s.at("latent_dims").get<std::vector<int>>();
    c.sweep.steps = s.value("steps", c.sweep.steps);
    c.sweep.mae_rate = s.value("mae_rate", c.sweep.mae_rate);
    c.sweep.workers = s.value("workers", c.sweep.workers);
  }
  c.output_dir = j.value("output_dir", c.output_dir);
  c.model.validate();
  loss::validate_spec(c.model, c.objective);
  return c;
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

loss::LossSpec derive_objective(const vae::VaeConfig& model, int iwae_k) {
  loss::LossSpec spec;
  if (iwae_k > 1) {
    spec.kind = loss::Kind::kIwae;
    spec.k = iwae_k;
    return spec;
  }
  switch (model.noise) {
    case vae::NoiseKind::kFixedScalar:
    case vae::NoiseKind::kLearnableScalar:
      spec.kind = loss::Kind::kSigma;
      break;
    case vae::NoiseKind::kLearnableVector:
      spec.kind = loss::Kind::kSigmaVec;
      break;
    case vae::NoiseKind::kConditional:
      spec.kind = loss::Kind::kBigSigma;
      break;
  }
  return spec;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_run_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config " + path);
  out << config_to_json(config).dump(2) << '\n';
}

std::string run_config_to_string(const RunConfig& config) {
  return config_to_json(config).dump(2);
}

}  // namespace volimp::cli
