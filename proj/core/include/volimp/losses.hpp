#pragma once

#include <vector>

#include "volimp/model.hpp"

namespace volimp::loss {

using nd::RngStream;
using nd::Tape;
using nd::Tensor;
using nd::Var;

enum class Kind { kElbo, kBeta, kSigma, kSigmaVec, kBigSigma, kIwae };

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& s);

struct LossSpec {
  Kind kind = Kind::kSigma;
  double beta = 1.0;  // used by kBeta
  int k = 1;          // IWAE draws
  int m = 1;          // variance-reduction replicates for the ELBO family
};

struct LossBreakdown {
  double total = 0.0;         // headline value (minimization sign for the *_loss ops)
  double recon_loglik = 0.0;  // batch mean E_q[log p(x_obs|z)] estimate
  double kl = 0.0;            // batch mean closed-form KL
  std::vector<double> per_sample_total, per_sample_recon, per_sample_kl;
  int k = 1;
  int m = 1;
};

/// Handles into a loss graph built on a caller-owned tape, so callers can run
/// backward on the total or on the individual terms.
struct LossGraph {
  vae::PosteriorVars post;
  Var recon_rows = -1;  // [n]
  Var kl_rows = -1;     // [n]
  Var per_sample = -1;  // [n] minimization-signed
  Var total = -1;       // [1]
  Var recon_scalar = -1, kl_scalar = -1;
  int k = 1, m = 1;
};

/// Per-row diagonal Gaussian log density of `value` under (mu, sigma); cells
/// where mask is 0 contribute exactly nothing. mask may be null (all cells).
Var gaussian_loglik_rows(Tape& tape, Var value, Var mu, Var sigma, const Tensor* mask);
/// Same with a constant observation x.
Var masked_gaussian_loglik_rows(Tape& tape, const Tensor& x, const Tensor& mask, Var mu,
                                Var sigma);
Var std_normal_loglik_rows(Tape& tape, Var z);

/// Plain version for tests and imputation: sum over observed cells of the
/// Gaussian log density. Returns [n].
Tensor masked_gaussian_loglik(const Tensor& x, const Tensor& mask, const Tensor& mu,
                              const Tensor& sigma);

void validate_spec(const vae::VaeConfig& config, const LossSpec& spec);

/// eps_base holds the shared reparameterization draws, one row per replicate
/// ([m×d], or [k×d] for IWAE); every batch row reuses the same draws so
/// per-sample values are comparable across the batch.
LossGraph build_loss(Tape& tape, const vae::VaeVars& vars, const vae::VaeConfig& config,
                     const Tensor& x, const Tensor& mask, const LossSpec& spec,
                     const Tensor& eps_base, bool training, RngStream* dropout_rng);

LossBreakdown breakdown(Tape& tape, const LossGraph& graph);

Tensor draw_eps_base(RngStream& rng, int replicates, int latent_dim);

LossBreakdown eval_loss(const vae::VaeParams& params, const Tensor& x, const Tensor& mask,
                        const LossSpec& spec, RngStream& rng);
LossBreakdown eval_loss_eps(const vae::VaeParams& params, const Tensor& x,
                            const Tensor& mask, const LossSpec& spec,
                            const Tensor& eps_base);

// Named entry points. elbo() reports the bound itself (higher is better); the
// *_loss functions report minimization objectives.
LossBreakdown elbo(const vae::VaeParams& params, const Tensor& x, const Tensor& mask, int m,
                   RngStream& rng);
LossBreakdown beta_vae_loss(const vae::VaeParams& params, const Tensor& x,
                            const Tensor& mask, double beta, RngStream& rng);
LossBreakdown sigma_vae_loss(const vae::VaeParams& params, const Tensor& x,
                             const Tensor& mask, RngStream& rng);
LossBreakdown sigma_vec_vae_loss(const vae::VaeParams& params, const Tensor& x,
                                 const Tensor& mask, RngStream& rng);
LossBreakdown big_sigma_vae_loss(const vae::VaeParams& params, const Tensor& x,
                                 const Tensor& mask, RngStream& rng);
LossBreakdown iwae_loss(const vae::VaeParams& params, const Tensor& x, const Tensor& mask,
                        int k, RngStream& rng);

}  // namespace volimp::loss
