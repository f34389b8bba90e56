#include "volimp/losses.hpp"

#include <cmath>
#include <numbers>

namespace volimp::loss {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)

/// Expand per-replicate draws [r×d] to [n*r×d]: row i*r+j reuses base row j.
Tensor expand_shared(const Tensor& base, int n) {
  const int r = base.rows(), d = base.cols();
  Tensor out({n * r, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j)
      for (int c = 0; c < d; ++c) out.at(i * r + j, c) = base.at(j, c);
  return out;
}

/// Repeat each data row r consecutive times (plain-tensor mirror of tile_rows).
Tensor tile_plain(const Tensor& x, int r) {
  const int n = x.rows(), p = x.cols();
  Tensor out({n * r, p});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j)
      for (int c = 0; c < p; ++c) out.at(i * r + j, c) = x.at(i, c);
  return out;
}

}  // namespace

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kElbo: return "elbo";
    case Kind::kBeta: return "beta";
    case Kind::kSigma: return "sigma";
    case Kind::kSigmaVec: return "sigma_vec";
    case Kind::kBigSigma: return "big_sigma";
    case Kind::kIwae: return "iwae";
  }
  return "?";
}

Kind kind_from_name(const std::string& s) {
  if (s == "elbo") return Kind::kElbo;
  if (s == "beta") return Kind::kBeta;
  if (s == "sigma") return Kind::kSigma;
  if (s == "sigma_vec") return Kind::kSigmaVec;
  if (s == "big_sigma") return Kind::kBigSigma;
  if (s == "iwae") return Kind::kIwae;
  throw ConfigError("unknown loss kind '" + s + "'");
}

Var gaussian_loglik_rows(Tape& tape, Var value, Var mu, Var sigma, const Tensor* mask) {
  Var z = nd::div(tape, nd::sub(tape, value, mu), sigma);
  Var cell = nd::scale(tape, nd::square(tape, z), -0.5);
  cell = nd::sub(tape, cell, nd::log_e(tape, sigma));
  cell = nd::add_const(tape, cell, -kHalfLog2Pi);
  if (mask != nullptr) cell = nd::mul_mask(tape, cell, *mask);
  return nd::row_sum(tape, cell);
}

Var masked_gaussian_loglik_rows(Tape& tape, const Tensor& x, const Tensor& mask, Var mu,
                                Var sigma) {
  Var xv = tape.constant(x);
  return gaussian_loglik_rows(tape, xv, mu, sigma, &mask);
}

Var std_normal_loglik_rows(Tape& tape, Var z) {
  Var cell = nd::add_const(tape, nd::scale(tape, nd::square(tape, z), -0.5), -kHalfLog2Pi);
  return nd::row_sum(tape, cell);
}

Tensor masked_gaussian_loglik(const Tensor& x, const Tensor& mask, const Tensor& mu,
                              const Tensor& sigma) {
  require_same_shape(x, mu, "masked_gaussian_loglik");
  require_same_shape(x, mask, "masked_gaussian_loglik");
  require_same_shape(x, sigma, "masked_gaussian_loglik");
  const int n = x.rows(), p = x.cols();
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < p; ++j) {
      if (mask.at(i, j) == 0.0) continue;
      const double s = sigma.at(i, j);
      const double zs = (x.at(i, j) - mu.at(i, j)) / s;
      acc += -0.5 * zs * zs - std::log(s) - kHalfLog2Pi;
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

void validate_spec(const vae::VaeConfig& config, const LossSpec& spec) {
  using vae::NoiseKind;
  if (spec.m < 1) throw ConfigError("loss: m must be >= 1");
  if (spec.k < 1) throw ConfigError("loss: k must be >= 1");
  switch (spec.kind) {
    case Kind::kBeta:
      if (!(spec.beta > 0.0)) throw ConfigError("beta_vae_loss: beta must be positive");
      break;
    case Kind::kSigma:
      if (config.noise != NoiseKind::kFixedScalar &&
          config.noise != NoiseKind::kLearnableScalar) {
        throw ConfigError("sigma_vae_loss needs a scalar noise model");
      }
      break;
    case Kind::kSigmaVec:
      if (config.noise != NoiseKind::kLearnableVector) {
        throw ConfigError("sigma_vec_vae_loss needs the vector noise model");
      }
      break;
    case Kind::kBigSigma:
      if (config.noise != NoiseKind::kConditional) {
        throw ConfigError("big_sigma_vae_loss needs the conditional noise model");
      }
      break;
    default:
      break;
  }
}

LossGraph build_loss(Tape& tape, const vae::VaeVars& vars, const vae::VaeConfig& config,
                     const Tensor& x, const Tensor& mask, const LossSpec& spec,
                     const Tensor& eps_base, bool training, RngStream* dropout_rng) {
  validate_spec(config, spec);
  require_same_shape(x, mask, "build_loss");
  const int n = x.rows();
  const int r = spec.kind == Kind::kIwae ? spec.k : spec.m;
  // Draws are either one row per replicate (shared across the batch, the
  // evaluation contract) or [n*r] rows of independent draws (training).
  if ((eps_base.rows() != r && eps_base.rows() != n * r) ||
      eps_base.cols() != config.latent_dim) {
    throw DimensionError("build_loss: eps must be [r x latent] or [n*r x latent]");
  }

  LossGraph g;
  g.k = spec.kind == Kind::kIwae ? spec.k : 1;
  g.m = spec.kind == Kind::kIwae ? 1 : spec.m;

  Var xv = tape.constant(x);
  g.post = vae::encode(tape, vars, config, xv, training, dropout_rng);
  g.kl_rows = vae::kl_standard_normal_rows(tape, g.post);

  Var mu_t = nd::tile_rows(tape, g.post.mu, r);
  Var sig_t = nd::tile_rows(tape, g.post.sigma, r);
  Var eps = tape.constant(eps_base.rows() == n * r ? eps_base : expand_shared(eps_base, n));
  Var z = nd::add(tape, mu_t, nd::mul(tape, sig_t, eps));
  vae::DecoderVars dec = vae::decode(tape, vars, config, z, training, dropout_rng);

  const Tensor x_t = tile_plain(x, r);
  const Tensor mask_t = tile_plain(mask, r);

  if (spec.kind == Kind::kBeta) {
    Var diff = nd::sub(tape, tape.constant(x_t), dec.mu);
    Var se_cells = nd::mul_mask(tape, nd::square(tape, diff), mask_t);
    Var se = nd::row_sum(tape, se_cells);                       // [n*r]
    se = nd::reshape(tape, se, {n, r});
    Var se_rows = nd::scale(tape, nd::row_sum(tape, se), 1.0 / r);  // [n]
    g.recon_rows = nd::neg(tape, se_rows);
    g.per_sample = nd::add(tape, se_rows, nd::scale(tape, g.kl_rows, spec.beta));
  } else if (spec.kind == Kind::kIwae) {
    Var ll = masked_gaussian_loglik_rows(tape, x_t, mask_t, dec.mu, dec.sigma);  // [n*k]
    Var lpz = std_normal_loglik_rows(tape, z);
    Var lqz = gaussian_loglik_rows(tape, z, mu_t, sig_t, nullptr);
    Var lw = nd::sub(tape, nd::add(tape, ll, lpz), lqz);
    Var lse = nd::logsumexp_rows(tape, nd::reshape(tape, lw, {n, r}));  // [n]
    Var bound = nd::add_const(tape, lse, -std::log(static_cast<double>(r)));
    g.per_sample = nd::neg(tape, bound);
    Var ll_mean = nd::scale(tape, nd::row_sum(tape, nd::reshape(tape, ll, {n, r})), 1.0 / r);
    g.recon_rows = ll_mean;
  } else {
    Var ll = masked_gaussian_loglik_rows(tape, x_t, mask_t, dec.mu, dec.sigma);  // [n*r]
    ll = nd::reshape(tape, ll, {n, r});
    g.recon_rows = nd::scale(tape, nd::row_sum(tape, ll), 1.0 / r);  // [n]
    g.per_sample = nd::sub(tape, g.kl_rows, g.recon_rows);           // -ELBO per row
  }

  g.total = nd::mean_all(tape, g.per_sample);
  g.recon_scalar = nd::mean_all(tape, g.recon_rows);
  g.kl_scalar = nd::mean_all(tape, g.kl_rows);
  return g;
}

LossBreakdown breakdown(Tape& tape, const LossGraph& graph) {
  LossBreakdown b;
  b.k = graph.k;
  b.m = graph.m;
  b.total = tape.val(graph.total).item();
  b.recon_loglik = tape.val(graph.recon_scalar).item();
  b.kl = tape.val(graph.kl_scalar).item();
  const Tensor& ps = tape.val(graph.per_sample);
  const Tensor& pr = tape.val(graph.recon_rows);
  const Tensor& pk = tape.val(graph.kl_rows);
  b.per_sample_total.assign(ps.data(), ps.data() + ps.size());
  b.per_sample_recon.assign(pr.data(), pr.data() + pr.size());
  b.per_sample_kl.assign(pk.data(), pk.data() + pk.size());
  return b;
}

Tensor draw_eps_base(RngStream& rng, int replicates, int latent_dim) {
  return nd::normal_tensor(rng, {replicates, latent_dim});
}

LossBreakdown eval_loss_eps(const vae::VaeParams& params, const Tensor& x,
                            const Tensor& mask, const LossSpec& spec,
                            const Tensor& eps_base) {
  Tape tape;
  vae::VaeVars vars = vae::load_vars(tape, params);
  LossGraph g = build_loss(tape, vars, params.config, x, mask, spec, eps_base, false, nullptr);
  return breakdown(tape, g);
}

LossBreakdown eval_loss(const vae::VaeParams& params, const Tensor& x, const Tensor& mask,
                        const LossSpec& spec, RngStream& rng) {
  const int r = spec.kind == Kind::kIwae ? spec.k : spec.m;
  Tensor eps = draw_eps_base(rng, r, params.config.latent_dim);
  return eval_loss_eps(params, x, mask, spec, eps);
}

namespace {

LossBreakdown negate_headline(LossBreakdown b) {
  b.total = -b.total;
  for (double& v : b.per_sample_total) v = -v;
  return b;
}

}  // namespace

LossBreakdown elbo(const vae::VaeParams& params, const Tensor& x, const Tensor& mask, int m,
                   RngStream& rng) {
  LossSpec spec{Kind::kElbo, 1.0, 1, m};
  return negate_headline(eval_loss(params, x, mask, spec, rng));
}

LossBreakdown beta_vae_loss(const vae::VaeParams& params, const Tensor& x,
                            const Tensor& mask, double beta, RngStream& rng) {
  return eval_loss(params, x, mask, LossSpec{Kind::kBeta, beta, 1, 1}, rng);
}

LossBreakdown sigma_vae_loss(const vae::VaeParams& params, const Tensor& x,
                             const Tensor& mask, RngStream& rng) {
  return eval_loss(params, x, mask, LossSpec{Kind::kSigma, 1.0, 1, 1}, rng);
}

LossBreakdown sigma_vec_vae_loss(const vae::VaeParams& params, const Tensor& x,
                                 const Tensor& mask, RngStream& rng) {
  return eval_loss(params, x, mask, LossSpec{Kind::kSigmaVec, 1.0, 1, 1}, rng);
}

LossBreakdown big_sigma_vae_loss(const vae::VaeParams& params, const Tensor& x,
                                 const Tensor& mask, RngStream& rng) {
  return eval_loss(params, x, mask, LossSpec{Kind::kBigSigma, 1.0, 1, 1}, rng);
}

LossBreakdown iwae_loss(const vae::VaeParams& params, const Tensor& x, const Tensor& mask,
                        int k, RngStream& rng) {
  return eval_loss(params, x, mask, LossSpec{Kind::kIwae, 1.0, k, 1}, rng);
}

}  // namespace volimp::loss
