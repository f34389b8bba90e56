#include "volimp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace volimp::metrics {

double mae_bps(const Tensor& imputed, const Tensor& truth, const Tensor& selector) {
  require_same_shape(imputed, truth, "mae_bps");
  require_same_shape(imputed, selector, "mae_bps");
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < imputed.size(); ++i) {
    if (selector[i] == 0.0) continue;
    acc += std::abs(imputed[i] - truth[i]);
    ++count;
  }
  if (count == 0) throw MetricError("mae_bps: empty cell selection");
  return acc / static_cast<double>(count) * 1e4;
}

double neg_elbo_eval(const vae::VaeParams& params, const Tensor& x, const Tensor& mask,
                     bool refit, const impute::ImputationConfig& cfg, RngStream& rng,
                     int k) {
  const vae::VaeParams* use = &params;
  vae::VaeParams refitted;
  if (refit) {
    impute::ImputationConfig rc = cfg;
    rc.refit = impute::ImputationConfig::Refit::kEncoder;
    RngStream refit_rng = rng.child("neg_elbo_refit");
    refitted = impute::refit_encoder(params, x, mask, rc, refit_rng);
    use = &refitted;
  }
  RngStream eval_rng = rng.child("neg_elbo_eval");
  loss::LossSpec spec{loss::Kind::kIwae, 1.0, k, 1};
  return loss::eval_loss(*use, x, mask, spec, eval_rng).total;
}

namespace {

CalibrationBin make_bin(const std::vector<double>& pv, const std::vector<double>& se,
                        const std::vector<int>& members, double lo, double hi) {
  CalibrationBin b;
  b.lo = lo;
  b.hi = hi;
  b.count = static_cast<int>(members.size());
  for (int i : members) {
    b.mean_pred_var += pv[static_cast<std::size_t>(i)];
    b.mean_sq_err += se[static_cast<std::size_t>(i)];
  }
  b.mean_pred_var /= b.count;
  b.mean_sq_err /= b.count;
  double var = 0.0;
  for (int i : members) {
    const double d = se[static_cast<std::size_t>(i)] - b.mean_sq_err;
    var += d * d;
  }
  var /= std::max(b.count - 1, 1);
  b.std_err = std::sqrt(var / b.count);
  b.normalized_distance =
      b.std_err > 0.0 ? (b.mean_sq_err - b.mean_pred_var) / b.std_err : 0.0;
  return b;
}

}  // namespace

std::vector<CalibrationBin> variance_calibration(const std::vector<double>& pred_var,
                                                 const std::vector<double>& sq_err,
                                                 int n_bins, bool quantile_bins) {
  if (n_bins < 2) throw ParameterError("variance_calibration: n_bins must be >= 2");
  if (pred_var.size() != sq_err.size() || pred_var.empty()) {
    throw MetricError("variance_calibration: inputs empty or mismatched");
  }
  for (double v : pred_var) {
    if (!(v > 0.0)) throw MetricError("variance_calibration: predicted variances must be > 0");
  }

  const int n = static_cast<int>(pred_var.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return pred_var[static_cast<std::size_t>(a)] <
                                       pred_var[static_cast<std::size_t>(b)]; });

  // Assign members per bin.
  std::vector<std::vector<int>> members(static_cast<std::size_t>(n_bins));
  std::vector<double> lo(static_cast<std::size_t>(n_bins)), hi(static_cast<std::size_t>(n_bins));
  if (quantile_bins) {
    for (int b = 0; b < n_bins; ++b) {
      const int a = n * b / n_bins, z = n * (b + 1) / n_bins;
      for (int i = a; i < z; ++i) members[static_cast<std::size_t>(b)].push_back(order[static_cast<std::size_t>(i)]);
      lo[static_cast<std::size_t>(b)] = pred_var[static_cast<std::size_t>(order[static_cast<std::size_t>(std::min(a, n - 1))])];
      hi[static_cast<std::size_t>(b)] = pred_var[static_cast<std::size_t>(order[static_cast<std::size_t>(std::max(z - 1, 0))])];
    }
  } else {
    const double vmin = pred_var[static_cast<std::size_t>(order.front())];
    const double vmax = pred_var[static_cast<std::size_t>(order.back())];
    const double lmin = std::log(vmin), lmax = std::log(vmax);
    const double width = (lmax - lmin) > 0.0 ? (lmax - lmin) / n_bins : 1.0;
    for (int b = 0; b < n_bins; ++b) {
      lo[static_cast<std::size_t>(b)] = std::exp(lmin + b * width);
      hi[static_cast<std::size_t>(b)] = std::exp(lmin + (b + 1) * width);
    }
    for (int i = 0; i < n; ++i) {
      const double v = pred_var[static_cast<std::size_t>(i)];
      int b = (lmax - lmin) > 0.0
                  ? static_cast<int>((std::log(v) - lmin) / width)
                  : 0;
      b = std::clamp(b, 0, n_bins - 1);
      members[static_cast<std::size_t>(b)].push_back(i);
    }
  }

  // Merge bins with < 2 points into their (preceding when possible) neighbor.
  std::vector<CalibrationBin> bins;
  std::vector<std::vector<int>> merged;
  std::vector<double> mlo, mhi;
  for (int b = 0; b < n_bins; ++b) {
    auto& mem = members[static_cast<std::size_t>(b)];
    if (mem.empty()) continue;
    if (!merged.empty() && static_cast<int>(merged.back().size()) < 2) {
      merged.back().insert(merged.back().end(), mem.begin(), mem.end());
      mhi.back() = hi[static_cast<std::size_t>(b)];
    } else {
      merged.push_back(mem);
      mlo.push_back(lo[static_cast<std::size_t>(b)]);
      mhi.push_back(hi[static_cast<std::size_t>(b)]);
    }
  }
  if (merged.size() >= 2 && static_cast<int>(merged.back().size()) < 2) {
    auto tail = merged.back();
    merged.pop_back();
    merged.back().insert(merged.back().end(), tail.begin(), tail.end());
    mhi[merged.size() - 1] = mhi.back();
    mhi.pop_back();
    mlo.pop_back();
  }
  for (std::size_t b = 0; b < merged.size(); ++b) {
    bins.push_back(make_bin(pred_var, sq_err, merged[b], mlo[b], mhi[b]));
  }
  return bins;
}

CollapseReport posterior_collapse(const vae::VaeParams& params, const Tensor& x,
                                  double threshold) {
  if (x.rows() < 1) throw DataError("posterior_collapse: empty dataset");
  vae::Posterior post = vae::encode_eval(params, x);
  const int n = post.mu.rows(), d = post.mu.cols();
  CollapseReport rep;
  rep.threshold = threshold;
  rep.dim_variance.resize(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += post.mu.at(i, j);
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const double dd = post.mu.at(i, j) - mean;
      var += dd * dd;
    }
    rep.dim_variance[static_cast<std::size_t>(j)] = var / n;
  }
  std::sort(rep.dim_variance.begin(), rep.dim_variance.end(), std::greater<>());
  const double total =
      std::accumulate(rep.dim_variance.begin(), rep.dim_variance.end(), 0.0);
  double cum = 0.0;
  for (double v : rep.dim_variance) {
    cum += v;
    rep.cumulative_fraction.push_back(total > 0.0 ? cum / total : 0.0);
    if (v > threshold) ++rep.active_dims;
  }
  return rep;
}

GradNormDiag grad_norm_diag(const vae::VaeParams& params,
                            const std::vector<std::pair<Tensor, Tensor>>& batches,
                            RngStream& rng) {
  if (batches.empty()) throw DataError("grad_norm_diag: need at least one batch");
  using nd::Tape;
  using nd::Var;
  GradNormDiag diag;
  RngStream eps_rng = rng.child("grad_norm_eps");
  loss::LossSpec spec{loss::Kind::kElbo, 1.0, 1, 1};
  for (const auto& [bx, bm] : batches) {
    Tensor eps = loss::draw_eps_base(eps_rng, 1, params.config.latent_dim);
    Tape tape;
    vae::VaeVars vars = vae::load_vars(tape, params);
    loss::LossGraph g =
        loss::build_loss(tape, vars, params.config, bx, bm, spec, eps, false, nullptr);
    const int n = bx.rows(), d = params.config.latent_dim;

    // d(batch mean)/d(mu_ij) = (1/n) d(recon_i)/d(mu_ij), so the column sum of
    // the scalar's gradient is exactly the batch-mean per-row gradient.
    auto mean_grad_norm = [&](Var term) {
      tape.backward(term);
      const Tensor& gmu = tape.grad(g.post.mu);
      double norm2 = 0.0;
      for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += gmu.at(i, j);
        norm2 += acc * acc;
      }
      return std::sqrt(norm2);
    };
    diag.recon_grad_norm += mean_grad_norm(g.recon_scalar);
    diag.kl_grad_norm += mean_grad_norm(g.kl_scalar);
  }
  diag.recon_grad_norm /= static_cast<double>(batches.size());
  diag.kl_grad_norm /= static_cast<double>(batches.size());
  return diag;
}

double rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw MetricError("rank_correlation: need two same-length series");
  }
  auto ranks = [](const std::vector<double>& v) {
    const int n = static_cast<int>(v.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int x, int y) { return v[static_cast<std::size_t>(x)] <
                                         v[static_cast<std::size_t>(y)]; });
    std::vector<double> r(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) r[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i;
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double mean = (static_cast<double>(a.size()) - 1.0) / 2.0;
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - mean) * (rb[i] - mean);
    da += (ra[i] - mean) * (ra[i] - mean);
    db += (rb[i] - mean) * (rb[i] - mean);
  }
  return num / std::sqrt(da * db);
}

}  // namespace volimp::metrics
