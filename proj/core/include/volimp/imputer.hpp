#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "volimp/losses.hpp"
#include "volimp/model.hpp"
#include "volimp/optim.hpp"

namespace volimp::impute {

using nd::RngStream;
using nd::Tensor;

struct GibbsConfig {
  int burn_in = 100;
  int thinning = 5;
  int kept = 1000;
};

struct ImputationConfig {
  int n_samples = 10000;
  enum class Refit { kNone, kEncoder };
  Refit refit = Refit::kNone;
  int refit_steps = 10000;
  int refit_batch = 32;
  int refit_k = 50;
  nd::LrSchedule refit_lr{0.0, 2e-4, 100, std::numeric_limits<std::int64_t>::max(), 1.0};
  GibbsConfig gibbs;
};

/// Mixture moments of p(x_missing | x_observed) for one row, plus the
/// self-normalized weights that produced them. mean/variance cover every
/// cell; for observed cells they are the posterior-weighted reconstruction.
struct ImputationResult {
  Tensor mean;      // [p]
  Tensor variance;  // [p]
  std::vector<double> weights;
  double ess = 0.0;
};

/// Self-normalized importance weights w_i of z_draws (from q(z|x_obs)) for the
/// target p(z|x_obs); computed in log space. Throws DegeneratePosteriorError
/// if every log weight is -inf.
Tensor importance_weights(const vae::VaeParams& params, const Tensor& x_row,
                          const Tensor& mask_row, const Tensor& z_draws);

ImputationResult impute_moments(const vae::VaeParams& params, const Tensor& x_row,
                                const Tensor& mask_row, const ImputationConfig& cfg,
                                RngStream& rng);

/// Re-optimizes only the encoder with the IWAE(refit_k) objective on the
/// observed cells; the decoder and noise parameters are returned bit-identical
/// to the input. Keeps the best encoder seen on a fixed evaluation draw.
vae::VaeParams refit_encoder(const vae::VaeParams& params, const Tensor& x,
                             const Tensor& mask, const ImputationConfig& cfg,
                             RngStream& rng);

/// Iterative impute-encode-decode-overwrite chain; observed cells never
/// change. Returns the kept samples (after burn-in, thinned).
std::vector<Tensor> pseudo_gibbs(const vae::VaeParams& params, const Tensor& x_row,
                                 const Tensor& mask_row, int iters, const GibbsConfig& gibbs,
                                 RngStream& rng);

double effective_sample_size(const std::vector<double>& weights);

}  // namespace volimp::impute
