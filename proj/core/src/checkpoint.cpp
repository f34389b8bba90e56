#include "volimp/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace volimp::ckpt {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json config_to_json(const vae::VaeConfig& c) {
  return json{{"feature_dim", c.feature_dim},
              {"latent_dim", c.latent_dim},
              {"hidden_dim", c.hidden_dim},
              {"num_blocks", c.num_blocks},
              {"dropout", c.dropout},
              {"architecture", vae::arch_name(c.architecture)},
              {"noise_model", vae::noise_name(c.noise)},
              {"fixed_sigma", c.fixed_sigma},
              {"iwae_k", c.iwae_k}};
}

vae::VaeConfig config_from_json(const json& j) {
  vae::VaeConfig c;
  c.feature_dim = j.at("feature_dim").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.num_blocks = j.at("num_blocks").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.architecture = vae::arch_from_name(j.at("architecture").get<std::string>());
  c.noise = vae::noise_from_name(j.at("noise_model").get<std::string>());
  c.fixed_sigma = j.at("fixed_sigma").get<double>();
  c.iwae_k = j.at("iwae_k").get<int>();
  c.validate();
  return c;
}

json lr_to_json(const nd::LrSchedule& s) {
  return json{{"warmup_start", s.warmup_start},
              {"warmup_end", s.warmup_end},
              {"warmup_steps", s.warmup_steps},
              {"decay_step", s.decay_step},
              {"decay_factor", s.decay_factor}};
}

nd::LrSchedule lr_from_json(const json& j) {
  nd::LrSchedule s;
  s.warmup_start = j.at("warmup_start").get<double>();
  s.warmup_end = j.at("warmup_end").get<double>();
  s.warmup_steps = j.at("warmup_steps").get<std::int64_t>();
  s.decay_step = j.at("decay_step").get<std::int64_t>();
  s.decay_factor = j.at("decay_factor").get<double>();
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const vae::VaeParams& params,
                     const CheckpointMeta& meta) {
  json j;
  j["format"] = "volimp-checkpoint";
  j["version"] = kFormatVersion;
  j["model"] = config_to_json(params.config);
  j["seed"] = meta.seed;
  j["step"] = meta.step;
  j["init"] = meta.init_scheme;
  j["optimizer"] = {{"beta1", meta.adam.beta1},
                    {"beta2", meta.adam.beta2},
                    {"eps", meta.adam.eps},
                    {"weight_decay", meta.weight_decay},
                    {"lr", lr_to_json(meta.lr)}};
  if (meta.stats) {
    j["stats"] = {{"mean", meta.stats->mean}, {"stddev", meta.stats->stddev}};
  }
  json tensors = json::object();
  auto ptrs = params.tensors();
  auto names = params.names();
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    tensors[names[i]] = {{"shape", ptrs[i]->shape()}, {"values", ptrs[i]->raw()}};
  }
  j["params"] = std::move(tensors);

  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << j.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  if (j.value("format", "") != "volimp-checkpoint" || j.value("version", 0) != kFormatVersion) {
    throw ParseError("checkpoint " + path + ": unknown format/version");
  }
  Checkpoint ck;
  // Rebuild the parameter skeleton from the config, then overwrite values.
  const vae::VaeConfig config = config_from_json(j.at("model"));
  nd::RngStream init_rng(0);
  ck.params = vae::VaeParams::init(config, init_rng);
  auto ptrs = ck.params.tensors();
  auto names = ck.params.names();
  const json& tensors = j.at("params");
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    if (!tensors.contains(names[i])) {
      throw ParseError("checkpoint " + path + ": missing tensor " + names[i]);
    }
    const json& tj = tensors.at(names[i]);
    const auto shape = tj.at("shape").get<std::vector<int>>();
    auto values = tj.at("values").get<std::vector<double>>();
    if (shape != ptrs[i]->shape() || values.size() != ptrs[i]->size()) {
      throw ParseError("checkpoint " + path + ": shape mismatch for " + names[i]);
    }
    *ptrs[i] = nd::Tensor(shape, std::move(values));
  }
  ck.meta.seed = j.value("seed", 0ull);
  ck.meta.step = j.value("step", 0ll);
  ck.meta.init_scheme = j.value("init", "uniform_fan_in");
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    ck.meta.adam.beta1 = o.value("beta1", 0.9);
    ck.meta.adam.beta2 = o.value("beta2", 0.999);
    ck.meta.adam.eps = o.value("eps", 1e-8);
    ck.meta.weight_decay = o.value("weight_decay", 0.0);
    if (o.contains("lr")) ck.meta.lr = lr_from_json(o.at("lr"));
  }
  if (j.contains("stats")) {
    surfaces::Stats st;
    auto mean = j.at("stats").at("mean").get<std::vector<double>>();
    auto sd = j.at("stats").at("stddev").get<std::vector<double>>();
    if (mean.size() != st.mean.size() || sd.size() != st.stddev.size()) {
      throw ParseError("checkpoint " + path + ": bad stats block");
    }
    std::copy(mean.begin(), mean.end(), st.mean.begin());
    std::copy(sd.begin(), sd.end(), st.stddev.begin());
    ck.meta.stats = st;
  }
  return ck;
}

}  // namespace volimp::ckpt
