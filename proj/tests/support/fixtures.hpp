#pragma once

// Hand-wired model fixtures with closed forms, used as independent oracles.
// Kept out of the library on purpose: tests must not depend on the code paths
// they are checking.

#include <cmath>
#include <vector>

#include "volimp/model.hpp"

namespace fixtures {

using volimp::nd::Tensor;
using volimp::vae::VaeConfig;
using volimp::vae::VaeParams;

inline double softplus_inv(double y) { return std::log(std::expm1(y)); }

/// Residual-architecture params whose decoder computes exactly mu(z) = A z + b
/// (residual branches zeroed, heads wired through the skip path). Noise is the
/// fixed scalar sigma_x. Requires hidden_dim >= max(feature_dim, latent_dim).
inline VaeParams make_affine_decoder(int p, int d, int h, const std::vector<double>& A,
                                     const std::vector<double>& b, double sigma_x) {
  VaeConfig cfg;
  cfg.feature_dim = p;
  cfg.latent_dim = d;
  cfg.hidden_dim = h;
  cfg.num_blocks = 2;
  cfg.architecture = volimp::vae::Arch::kResidual;
  cfg.noise = volimp::vae::NoiseKind::kFixedScalar;
  cfg.fixed_sigma = sigma_x;
  volimp::nd::RngStream rng(0);
  VaeParams params = VaeParams::init(cfg, rng);

  auto zero = [](Tensor& t) { std::fill(t.raw().begin(), t.raw().end(), 0.0); };
  auto zero_stack_branches = [&](volimp::vae::StackParams& s) {
    for (auto& blk : s.blocks) {
      zero(blk.w_mid);
      zero(blk.b_mid);
      zero(blk.w_out);
      zero(blk.b_out);
    }
  };
  zero_stack_branches(params.enc);
  zero_stack_branches(params.dec);

  // Decoder: in_w = [I_d; 0] so the trunk carries z; mu head multiplies by A.
  zero(params.dec.in_w);
  zero(params.dec.in_b);
  for (int j = 0; j < d; ++j) params.dec.in_w.at(j, j) = 1.0;
  zero(params.dec.mu_w);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < d; ++j) params.dec.mu_w.at(i, j) = A[static_cast<std::size_t>(i * d + j)];
  for (int i = 0; i < p; ++i) params.dec.mu_b[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(i)];
  zero(params.dec.sig_w);
  zero(params.dec.sig_b);
  return params;
}

/// Wires the encoder of `params` to the exact linear map q(z|x) =
/// N(M x + c, diag(sigma_q)). Requires hidden_dim >= feature_dim.
inline void set_linear_encoder(VaeParams& params, const std::vector<double>& M,
                               const std::vector<double>& c,
                               const std::vector<double>& sigma_q) {
  const int p = params.config.feature_dim;
  const int d = params.config.latent_dim;
  auto zero = [](Tensor& t) { std::fill(t.raw().begin(), t.raw().end(), 0.0); };
  for (auto& blk : params.enc.blocks) {
    zero(blk.w_mid);
    zero(blk.b_mid);
    zero(blk.w_out);
    zero(blk.b_out);
  }
  zero(params.enc.in_w);
  zero(params.enc.in_b);
  for (int j = 0; j < p; ++j) params.enc.in_w.at(j, j) = 1.0;
  zero(params.enc.mu_w);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < p; ++j) params.enc.mu_w.at(i, j) = M[static_cast<std::size_t>(i * p + j)];
  for (int i = 0; i < d; ++i) params.enc.mu_b[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i)];
  zero(params.enc.sig_w);
  for (int i = 0; i < d; ++i) {
    // account for the tiny positivity floor on realized sigmas
    params.enc.sig_b[static_cast<std::size_t>(i)] =
        softplus_inv(sigma_q[static_cast<std::size_t>(i)] - volimp::vae::kSigmaFloor);
  }
}

/// The 1-d-latent imputation fixture: mu(z) = [z, z], sigma_x, with the
/// encoder set to the exact posterior for "x0 observed, x1 missing".
inline VaeParams make_impute_fixture(double sigma_x) {
  VaeParams params = make_affine_decoder(2, 1, 8, {1.0, 1.0}, {0.0, 0.0}, sigma_x);
  const double prec = 1.0 + 1.0 / (sigma_x * sigma_x);
  set_linear_encoder(params, {1.0 / (sigma_x * sigma_x * prec), 0.0}, {0.0},
                     {1.0 / std::sqrt(prec)});
  return params;
}

struct QuadMoments {
  double mean_z = 0.0, var_z = 0.0;
  std::vector<double> mean_x, var_x;  // per cell, all cells
};

/// Dense z-grid integration of the posterior for a 1-d-latent affine decoder
/// mu(z) = A z + b with scalar noise; integrates p(x_obs|z) p(z) over
/// [lo, hi] with the given step.
inline QuadMoments quadrature_moments(const std::vector<double>& A,
                                      const std::vector<double>& b, double sigma_x,
                                      const std::vector<double>& x,
                                      const std::vector<double>& mask, double lo = -8.0,
                                      double hi = 8.0, double step = 1e-3) {
  const int p = static_cast<int>(x.size());
  double w_sum = 0.0, wz = 0.0, wz2 = 0.0;
  std::vector<double> wx(static_cast<std::size_t>(p), 0.0),
      wx2(static_cast<std::size_t>(p), 0.0);
  for (double z = lo; z <= hi; z += step) {
    double loglik = -0.5 * z * z;
    for (int j = 0; j < p; ++j) {
      if (mask[static_cast<std::size_t>(j)] == 0.0) continue;
      const double mu = A[static_cast<std::size_t>(j)] * z + b[static_cast<std::size_t>(j)];
      const double zs = (x[static_cast<std::size_t>(j)] - mu) / sigma_x;
      loglik += -0.5 * zs * zs;
    }
    const double w = std::exp(loglik);
    w_sum += w;
    wz += w * z;
    wz2 += w * z * z;
    for (int j = 0; j < p; ++j) {
      const double mu = A[static_cast<std::size_t>(j)] * z + b[static_cast<std::size_t>(j)];
      wx[static_cast<std::size_t>(j)] += w * mu;
      wx2[static_cast<std::size_t>(j)] += w * mu * mu;
    }
  }
  QuadMoments q;
  q.mean_z = wz / w_sum;
  q.var_z = wz2 / w_sum - q.mean_z * q.mean_z;
  q.mean_x.resize(static_cast<std::size_t>(p));
  q.var_x.resize(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) {
    q.mean_x[static_cast<std::size_t>(j)] = wx[static_cast<std::size_t>(j)] / w_sum;
    q.var_x[static_cast<std::size_t>(j)] = wx2[static_cast<std::size_t>(j)] / w_sum -
                                           q.mean_x[static_cast<std::size_t>(j)] *
                                               q.mean_x[static_cast<std::size_t>(j)] +
                                           sigma_x * sigma_x;
  }
  return q;
}

/// Exact log density of the affine-decoder model with A = [diag(a); 0]
/// (orthogonal columns): x ~ N(b, A A^T + sigma_x^2 I) is then diagonal.
inline double exact_log_density_diag(const std::vector<double>& a, const std::vector<double>& b,
                                     double sigma_x, const std::vector<double>& x) {
  const int p = static_cast<int>(x.size());
  const int d = static_cast<int>(a.size());
  double ll = 0.0;
  for (int j = 0; j < p; ++j) {
    const double var =
        sigma_x * sigma_x + (j < d ? a[static_cast<std::size_t>(j)] * a[static_cast<std::size_t>(j)] : 0.0);
    const double diff = x[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)];
    ll += -0.5 * diff * diff / var - 0.5 * std::log(2.0 * M_PI * var);
  }
  return ll;
}

inline Tensor row(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor({1, n}, std::move(v));
}

}  // namespace fixtures
