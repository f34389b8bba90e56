#include "volimp/imputer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "volimp/trainer.hpp"

namespace volimp::impute {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

constexpr int kDecodeChunk = 2048;

bool any_observed(const Tensor& mask_row) {
  for (std::size_t i = 0; i < mask_row.size(); ++i) {
    if (mask_row[i] != 0.0) return true;
  }
  return false;
}

Tensor as_row(const Tensor& t) {
  if (t.ndim() == 1) return Tensor({1, t.dim(0)}, t.raw());
  return t;
}

}  // namespace

double effective_sample_size(const std::vector<double>& weights) {
  double s2 = 0.0;
  for (double w : weights) s2 += w * w;
  return s2 > 0.0 ? 1.0 / s2 : 0.0;
}

Tensor importance_weights(const vae::VaeParams& params, const Tensor& x_row,
                          const Tensor& mask_row, const Tensor& z_draws) {
  const Tensor x = as_row(x_row);
  const Tensor mask = as_row(mask_row);
  const int n = z_draws.rows();
  const int d = params.config.latent_dim;
  if (z_draws.cols() != d) throw DimensionError("importance_weights: z_draws width");

  vae::Posterior post = vae::encode_eval(params, x);

  std::vector<double> logw(static_cast<std::size_t>(n));
  for (int start = 0; start < n; start += kDecodeChunk) {
    const int c = std::min(kDecodeChunk, n - start);
    Tensor zc({c, d});
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < d; ++j) zc.at(i, j) = z_draws.at(start + i, j);
    vae::DecoderOutput dec = vae::decode_eval(params, zc);
    for (int i = 0; i < c; ++i) {
      double ll = 0.0;
      for (int j = 0; j < x.cols(); ++j) {
        if (mask.at(0, j) == 0.0) continue;
        const double s = dec.sigma.at(i, j);
        const double zs = (x.at(0, j) - dec.mu.at(i, j)) / s;
        ll += -0.5 * zs * zs - std::log(s) - kHalfLog2Pi;
      }
      double lpz = 0.0, lqz = 0.0;
      for (int j = 0; j < d; ++j) {
        const double zv = zc.at(i, j);
        lpz += -0.5 * zv * zv - kHalfLog2Pi;
        const double qs = post.sigma.at(0, j);
        const double qz = (zv - post.mu.at(0, j)) / qs;
        lqz += -0.5 * qz * qz - std::log(qs) - kHalfLog2Pi;
      }
      logw[static_cast<std::size_t>(start + i)] = ll + lpz - lqz;
    }
  }

  const double m = *std::max_element(logw.begin(), logw.end());
  if (!std::isfinite(m)) {
    throw DegeneratePosteriorError("importance_weights: all log weights are -inf");
  }
  double denom = 0.0;
  for (double lw : logw) denom += std::exp(lw - m);
  Tensor w({n});
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(logw[static_cast<std::size_t>(i)] - m) / denom;
  }
  return w;
}

ImputationResult impute_moments(const vae::VaeParams& params, const Tensor& x_row,
                                const Tensor& mask_row, const ImputationConfig& cfg,
                                RngStream& rng) {
  if (cfg.n_samples < 1) throw ParameterError("impute_moments: n_samples must be >= 1");
  const Tensor x = as_row(x_row);
  const Tensor mask = as_row(mask_row);
  const int p = x.cols();
  const int d = params.config.latent_dim;
  const int n = cfg.n_samples;
  const bool observed = any_observed(mask);

  RngStream z_rng = rng.child("impute_z");
  Tensor z({n, d});
  ImputationResult res;
  if (observed) {
    vae::Posterior post = vae::encode_eval(params, x);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        z.at(i, j) = post.mu.at(0, j) + post.sigma.at(0, j) * z_rng.normal();
    Tensor w = importance_weights(params, x, mask, z);
    res.weights.assign(w.data(), w.data() + w.size());
  } else {
    // No observed cells: prior-predictive via uniform weights over prior draws.
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = z_rng.normal();
    res.weights.assign(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
  }

  res.mean = Tensor({p});
  res.variance = Tensor({p});
  Tensor second({p});
  for (int start = 0; start < n; start += kDecodeChunk) {
    const int c = std::min(kDecodeChunk, n - start);
    Tensor zc({c, d});
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < d; ++j) zc.at(i, j) = z.at(start + i, j);
    vae::DecoderOutput dec = vae::decode_eval(params, zc);
    for (int i = 0; i < c; ++i) {
      const double w = res.weights[static_cast<std::size_t>(start + i)];
      if (w == 0.0) continue;
      for (int j = 0; j < p; ++j) {
        const double mu = dec.mu.at(i, j), s = dec.sigma.at(i, j);
        res.mean[static_cast<std::size_t>(j)] += w * mu;
        second[static_cast<std::size_t>(j)] += w * (s * s + mu * mu);
      }
    }
  }
  for (int j = 0; j < p; ++j) {
    const double m = res.mean[static_cast<std::size_t>(j)];
    res.variance[static_cast<std::size_t>(j)] =
        std::max(second[static_cast<std::size_t>(j)] - m * m, 0.0);
  }
  res.ess = effective_sample_size(res.weights);
  return res;
}

vae::VaeParams refit_encoder(const vae::VaeParams& params, const Tensor& x,
                             const Tensor& mask, const ImputationConfig& cfg,
                             RngStream& rng) {
  if (cfg.refit != ImputationConfig::Refit::kEncoder) {
    throw ConfigError("refit_encoder: cfg.refit must be encoder");
  }
  if (cfg.refit_steps <= 0) return params;

  vae::VaeParams work = params;
  const std::vector<bool> trainable = work.encoder_mask();

  loss::LossSpec spec{loss::Kind::kIwae, 1.0, cfg.refit_k, 1};
  const std::uint64_t seed = rng.child("refit").seed();

  // Track the best encoder on a fixed evaluation draw; refits that wander off
  // are rolled back ("early stop on worse").
  auto eval_neg_iwae = [&](const vae::VaeParams& p) {
    RngStream eval_rng = RngStream(seed).child("refit_eval");
    return loss::eval_loss(p, x, mask, spec, eval_rng).total;
  };
  double best = eval_neg_iwae(work);
  vae::VaeParams best_params = work;
  const std::int64_t eval_every = std::max<std::int64_t>(cfg.refit_steps / 10, 1);

  train::Options opt;
  opt.loss = spec;
  opt.steps = cfg.refit_steps;
  opt.batch_size = cfg.refit_batch;
  opt.lr = cfg.refit_lr;
  opt.weight_decay = 0.0;
  opt.seed = seed;
  opt.log_every = 0;
  opt.trainable = &trainable;
  opt.eval_mode = true;  // dropout forced off
  opt.step_cb = [&](std::int64_t step, const vae::VaeParams& p) {
    if (step % eval_every == 0 || step == cfg.refit_steps) {
      const double v = eval_neg_iwae(p);
      if (v < best) {
        best = v;
        best_params = p;
      }
    }
    return false;
  };

  train::fit(std::move(work), x, mask, opt);
  return best_params;
}

std::vector<Tensor> pseudo_gibbs(const vae::VaeParams& params, const Tensor& x_row,
                                 const Tensor& mask_row, int iters, const GibbsConfig& gibbs,
                                 RngStream& rng) {
  if (iters < 1) throw ParameterError("pseudo_gibbs: iters must be >= 1");
  const Tensor mask = as_row(mask_row);
  Tensor x = as_row(x_row);
  const int p = x.cols();
  const int d = params.config.latent_dim;
  // Step 1: impute with zeros.
  for (int j = 0; j < p; ++j) {
    if (mask.at(0, j) == 0.0) x.at(0, j) = 0.0;
  }

  RngStream z_rng = rng.child("gibbs_z");
  RngStream x_rng = rng.child("gibbs_x");
  std::vector<Tensor> kept;
  for (int it = 0; it < iters; ++it) {
    vae::Posterior post = vae::encode_eval(params, x);
    Tensor z({1, d});
    for (int j = 0; j < d; ++j) {
      z.at(0, j) = post.mu.at(0, j) + post.sigma.at(0, j) * z_rng.normal();
    }
    vae::DecoderOutput dec = vae::decode_eval(params, z);
    for (int j = 0; j < p; ++j) {
      if (mask.at(0, j) != 0.0) continue;  // observed cells never change
      x.at(0, j) = dec.mu.at(0, j) + dec.sigma.at(0, j) * x_rng.normal();
    }
    if (it >= gibbs.burn_in && (it - gibbs.burn_in) % gibbs.thinning == 0) {
      kept.push_back(x);
      if (static_cast<int>(kept.size()) >= gibbs.kept) break;
    }
  }
  return kept;
}

}  // namespace volimp::impute
