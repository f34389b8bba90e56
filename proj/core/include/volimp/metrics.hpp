#pragma once

#include <utility>
#include <vector>

#include "volimp/imputer.hpp"
#include "volimp/model.hpp"

namespace volimp::metrics {

using nd::RngStream;
using nd::Tensor;

/// Mean absolute error over selected cells, in basis points of implied vol
/// (inputs are decimals; 1 vol point = 100 bps). selector is a 0/1 tensor;
/// an empty selection is a MetricError.
double mae_bps(const Tensor& imputed, const Tensor& truth, const Tensor& selector);

/// Mean negative IWAE(k) per row; when refit is set the encoder is first
/// re-optimized on this dataset (generative parameters untouched).
double neg_elbo_eval(const vae::VaeParams& params, const Tensor& x, const Tensor& mask,
                     bool refit, const impute::ImputationConfig& cfg, RngStream& rng,
                     int k = 50);

struct CalibrationBin {
  double lo = 0.0, hi = 0.0;        // predicted-variance range
  double mean_pred_var = 0.0;
  double mean_sq_err = 0.0;
  double std_err = 0.0;             // standard error of mean_sq_err
  double normalized_distance = 0.0; // (mean_sq_err - mean_pred_var) / std_err
  int count = 0;
};

/// Bins squared errors by predicted variance (log-spaced by default, quantile
/// bins optional). Bins with fewer than two points are merged into their
/// neighbor.
std::vector<CalibrationBin> variance_calibration(const std::vector<double>& pred_var,
                                                 const std::vector<double>& sq_err,
                                                 int n_bins, bool quantile_bins = false);

struct CollapseReport {
  std::vector<double> dim_variance;          // descending
  std::vector<double> cumulative_fraction;   // of total variance
  int active_dims = 0;
  double threshold = 0.5;
};

/// Variance of the posterior mean per latent dimension over a dataset; counts
/// dimensions above the activity threshold.
CollapseReport posterior_collapse(const vae::VaeParams& params, const Tensor& x,
                                  double threshold = 0.5);

struct GradNormDiag {
  double recon_grad_norm = 0.0;  // wrt the posterior mean
  double kl_grad_norm = 0.0;
};

/// Gradient norms of the reconstruction and KL terms with respect to the
/// posterior mean, averaged across batches.
GradNormDiag grad_norm_diag(const vae::VaeParams& params,
                            const std::vector<std::pair<Tensor, Tensor>>& batches,
                            RngStream& rng);

/// Spearman rank correlation.
double rank_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace volimp::metrics
