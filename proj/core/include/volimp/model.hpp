#pragma once

#include <array>
#include <string>
#include <vector>

#include "volimp/rng.hpp"
#include "volimp/tape.hpp"
#include "volimp/tensor.hpp"

namespace volimp::vae {

using nd::RngStream;
using nd::Tape;
using nd::Tensor;
using nd::Var;

enum class Arch { kMlp, kResidual };
enum class NoiseKind { kFixedScalar, kLearnableScalar, kLearnableVector, kConditional };

const char* arch_name(Arch a);
const char* noise_name(NoiseKind k);
Arch arch_from_name(const std::string& s);
NoiseKind noise_from_name(const std::string& s);

struct VaeConfig {
  int feature_dim = 2;
  int latent_dim = 4;
  int hidden_dim = 64;
  int num_blocks = 2;  // residual blocks per side; hidden layers for the MLP form
  double dropout = 0.0;
  Arch architecture = Arch::kResidual;
  NoiseKind noise = NoiseKind::kLearnableScalar;
  double fixed_sigma = 1.0;  // used when noise == kFixedScalar
  int iwae_k = 1;

  void validate() const;  // throws ConfigError
};

/// One residual block: y = x + W_out * swish(W_mid * LN(x)) with dropout after
/// the activation and after the second linear map.
struct ResidualBlockParams {
  Tensor ln_gain, ln_shift;  // [h]
  Tensor w_mid, b_mid;       // [h×h], [h]
  Tensor w_out, b_out;       // [h×h], [h]
};

/// One extra hidden layer of the MLP form (first hidden layer is in_w/in_b).
struct MlpLayerParams {
  Tensor w, b;  // [h×h], [h]
};

/// Encoder or decoder stack. The sigma head is always allocated; whether it is
/// used depends on the noise model (the decoder sigma head is active only for
/// kConditional).
struct StackParams {
  Tensor in_w, in_b;  // [h×in]
  std::vector<ResidualBlockParams> blocks;
  std::vector<MlpLayerParams> layers;
  Tensor mu_w, mu_b;    // [out×h], [out]
  Tensor sig_w, sig_b;  // [out×h], [out]
};

struct VaeParams {
  VaeConfig config;
  StackParams enc, dec;
  Tensor noise_param;  // [1] scalar s, [p] vector s, or empty

  static VaeParams init(const VaeConfig& config, RngStream& rng);

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> names() const;
  /// True for encoder-owned tensors; decoder and noise entries false.
  std::vector<bool> encoder_mask() const;
};

bool same_values(const VaeParams& a, const VaeParams& b);

// Realized sigmas get a tiny floor on top of Softplus so they stay strictly
// positive even for extreme head pre-activations.
inline constexpr double kSigmaFloor = 1e-12;

// ---- tape-side forward ----

struct StackVars {
  Var in_w, in_b;
  std::vector<std::array<Var, 6>> blocks;  // ln_gain, ln_shift, w_mid, b_mid, w_out, b_out
  std::vector<std::array<Var, 2>> layers;
  Var mu_w, mu_b, sig_w, sig_b;
};

struct VaeVars {
  StackVars enc, dec;
  Var noise_param = -1;
  std::vector<Var> all;  // canonical order, matches VaeParams::tensors()
};

VaeVars load_vars(Tape& tape, const VaeParams& params);
/// Rebuilds the structured handles from a flat canonical-order var list (for
/// gradient checks over caller-supplied inputs); params only supplies shape.
VaeVars rebind_vars(const VaeParams& params, const std::vector<Var>& flat);

struct PosteriorVars {
  Var mu, sigma;  // [n×d]
};

struct DecoderVars {
  Var mu, sigma;  // [n×p]
};

PosteriorVars encode(Tape& tape, const VaeVars& vars, const VaeConfig& config, Var x,
                     bool training, RngStream* dropout_rng);
DecoderVars decode(Tape& tape, const VaeVars& vars, const VaeConfig& config, Var z,
                   bool training, RngStream* dropout_rng);

/// z = mu + sigma * eps (the reparameterization; eps supplied by the caller).
Var reparam_sample(Tape& tape, const PosteriorVars& post, Var eps);

/// Closed-form KL(q || N(0, I)) per row: 0.5 * sum_d(mu^2 + sigma^2 - 1 - 2 ln sigma).
Var kl_standard_normal_rows(Tape& tape, const PosteriorVars& post);

// ---- plain (inference) forward ----

struct Posterior {
  Tensor mu, sigma;
};

struct DecoderOutput {
  Tensor mu, sigma;
};

Posterior encode_eval(const VaeParams& params, const Tensor& x);
DecoderOutput decode_eval(const VaeParams& params, const Tensor& z);
Tensor reparam_sample(const Posterior& post, const Tensor& eps);
Tensor kl_standard_normal(const Posterior& post);  // [n]

/// Two-step generative sampling: z ~ N(0, I), then x = mu(z) + sigma(z) * eps2
/// when include_output_noise, else x = mu(z).
Tensor sample_generative(const VaeParams& params, int n, RngStream& rng,
                         bool include_output_noise);

}  // namespace volimp::vae
