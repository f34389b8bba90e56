#include "volimp/model.hpp"

#include <cmath>
#include <cstring>

namespace volimp::vae {

const char* arch_name(Arch a) { return a == Arch::kMlp ? "mlp" : "residual"; }

const char* noise_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::kFixedScalar: return "fixed_scalar";
    case NoiseKind::kLearnableScalar: return "learnable_scalar";
    case NoiseKind::kLearnableVector: return "learnable_vector";
    case NoiseKind::kConditional: return "conditional";
  }
  return "?";
}

Arch arch_from_name(const std::string& s) {
  if (s == "mlp") return Arch::kMlp;
  if (s == "residual") return Arch::kResidual;
  throw ConfigError("unknown architecture '" + s + "' (expected mlp|residual)");
}

NoiseKind noise_from_name(const std::string& s) {
  if (s == "fixed_scalar") return NoiseKind::kFixedScalar;
  if (s == "learnable_scalar") return NoiseKind::kLearnableScalar;
  if (s == "learnable_vector") return NoiseKind::kLearnableVector;
  if (s == "conditional") return NoiseKind::kConditional;
  throw ConfigError("unknown noise model '" + s + "'");
}

void VaeConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (iwae_k < 1) throw ConfigError("iwae_k must be >= 1");
  if (noise == NoiseKind::kFixedScalar && !(fixed_sigma > 0.0)) {
    throw ConfigError("fixed_sigma must be positive");
  }
  if (architecture == Arch::kResidual && hidden_dim < 2) {
    throw ConfigError("residual architecture needs hidden_dim >= 2 for layer norm");
  }
}

namespace {

Tensor init_weight(int out, int in, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return nd::uniform_tensor(rng, {out, in}, -bound, bound);
}

StackParams init_stack(int in_dim, int out_dim, const VaeConfig& c, RngStream rng) {
  StackParams s;
  s.in_w = init_weight(c.hidden_dim, in_dim, rng);
  s.in_b = Tensor::zeros({c.hidden_dim});
  if (c.architecture == Arch::kResidual) {
    for (int b = 0; b < c.num_blocks; ++b) {
      ResidualBlockParams blk;
      blk.ln_gain = Tensor::full({c.hidden_dim}, 1.0);
      blk.ln_shift = Tensor::zeros({c.hidden_dim});
      blk.w_mid = init_weight(c.hidden_dim, c.hidden_dim, rng);
      blk.b_mid = Tensor::zeros({c.hidden_dim});
      blk.w_out = init_weight(c.hidden_dim, c.hidden_dim, rng);
      blk.b_out = Tensor::zeros({c.hidden_dim});
      s.blocks.push_back(std::move(blk));
    }
  } else {
    for (int b = 1; b < c.num_blocks; ++b) {
      s.layers.push_back(
          MlpLayerParams{init_weight(c.hidden_dim, c.hidden_dim, rng),
                         Tensor::zeros({c.hidden_dim})});
    }
  }
  s.mu_w = init_weight(out_dim, c.hidden_dim, rng);
  s.mu_b = Tensor::zeros({out_dim});
  s.sig_w = init_weight(out_dim, c.hidden_dim, rng);
  s.sig_b = Tensor::zeros({out_dim});
  return s;
}

// softplus(s) == 1 at init
double noise_param_init() { return std::log(std::exp(1.0) - 1.0); }

template <typename Self, typename Fn>
void visit_params(Self& self, Fn&& fn) {
  auto stack = [&fn](auto& s, const std::string& side) {
    fn(s.in_w, side + ".in.w");
    fn(s.in_b, side + ".in.b");
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
      auto& b = s.blocks[i];
      const std::string p = side + ".block" + std::to_string(i);
      fn(b.ln_gain, p + ".ln_gain");
      fn(b.ln_shift, p + ".ln_shift");
      fn(b.w_mid, p + ".w_mid");
      fn(b.b_mid, p + ".b_mid");
      fn(b.w_out, p + ".w_out");
      fn(b.b_out, p + ".b_out");
    }
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
      auto& l = s.layers[i];
      const std::string p = side + ".layer" + std::to_string(i + 1);
      fn(l.w, p + ".w");
      fn(l.b, p + ".b");
    }
    fn(s.mu_w, side + ".mu.w");
    fn(s.mu_b, side + ".mu.b");
    fn(s.sig_w, side + ".sig.w");
    fn(s.sig_b, side + ".sig.b");
  };
  stack(self.enc, "enc");
  stack(self.dec, "dec");
  if (!self.noise_param.empty()) fn(self.noise_param, std::string("noise.s"));
}

}  // namespace

VaeParams VaeParams::init(const VaeConfig& config, RngStream& rng) {
  config.validate();
  VaeParams p;
  p.config = config;
  p.enc = init_stack(config.feature_dim, config.latent_dim, config, rng.child("enc"));
  p.dec = init_stack(config.latent_dim, config.feature_dim, config, rng.child("dec"));
  switch (config.noise) {
    case NoiseKind::kLearnableScalar:
      p.noise_param = Tensor::full({1}, noise_param_init());
      break;
    case NoiseKind::kLearnableVector:
      p.noise_param = Tensor::full({config.feature_dim}, noise_param_init());
      break;
    default:
      break;
  }
  return p;
}

std::vector<Tensor*> VaeParams::tensors() {
  std::vector<Tensor*> out;
  visit_params(*this, [&out](Tensor& t, const std::string&) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor*> VaeParams::tensors() const {
  std::vector<const Tensor*> out;
  visit_params(*this, [&out](const Tensor& t, const std::string&) { out.push_back(&t); });
  return out;
}

std::vector<std::string> VaeParams::names() const {
  std::vector<std::string> out;
  visit_params(*this, [&out](const Tensor&, const std::string& n) { out.push_back(n); });
  return out;
}

std::vector<bool> VaeParams::encoder_mask() const {
  std::vector<bool> out;
  visit_params(*this, [&out](const Tensor&, const std::string& n) {
    out.push_back(n.rfind("enc.", 0) == 0);
  });
  return out;
}

bool same_values(const VaeParams& a, const VaeParams& b) {
  auto ta = a.tensors();
  auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!ta[i]->same_shape(*tb[i])) return false;
    if (std::memcmp(ta[i]->data(), tb[i]->data(), ta[i]->size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {

StackVars load_stack(Tape& tape, const StackParams& s, std::vector<Var>& all) {
  StackVars v;
  auto push = [&tape, &all](const Tensor& t) {
    Var x = tape.input(t);
    all.push_back(x);
    return x;
  };
  v.in_w = push(s.in_w);
  v.in_b = push(s.in_b);
  for (const auto& b : s.blocks) {
    v.blocks.push_back({push(b.ln_gain), push(b.ln_shift), push(b.w_mid), push(b.b_mid),
                        push(b.w_out), push(b.b_out)});
  }
  for (const auto& l : s.layers) {
    v.layers.push_back({push(l.w), push(l.b)});
  }
  v.mu_w = push(s.mu_w);
  v.mu_b = push(s.mu_b);
  v.sig_w = push(s.sig_w);
  v.sig_b = push(s.sig_b);
  return v;
}

/// Shared trunk of encode/decode: input projection plus blocks.
Var run_stack(Tape& tape, const StackVars& sv, const VaeConfig& c, Var x, bool training,
              RngStream* dropout_rng) {
  const bool want_dropout = training && c.dropout > 0.0;
  if (want_dropout && dropout_rng == nullptr) {
    throw ParameterError("dropout enabled but no rng stream supplied");
  }
  auto drop = [&](Var h) {
    if (!want_dropout) return h;
    return nd::dropout(tape, h, c.dropout, true, *dropout_rng);
  };
  Var h = nd::affine(tape, x, sv.in_w, sv.in_b);
  if (c.architecture == Arch::kResidual) {
    for (const auto& b : sv.blocks) {
      Var branch = nd::layer_norm(tape, h, b[0], b[1]);
      branch = nd::affine(tape, branch, b[2], b[3]);
      branch = nd::swish(tape, branch);
      branch = drop(branch);
      branch = nd::affine(tape, branch, b[4], b[5]);
      branch = drop(branch);
      h = nd::add(tape, h, branch);
    }
  } else {
    h = drop(nd::swish(tape, h));
    for (const auto& l : sv.layers) {
      h = drop(nd::swish(tape, nd::affine(tape, h, l[0], l[1])));
    }
  }
  return h;
}

Var softplus_head(Tape& tape, Var h, Var w, Var b) {
  return nd::add_const(tape, nd::softplus(tape, nd::affine(tape, h, w, b)), kSigmaFloor);
}

}  // namespace

VaeVars load_vars(Tape& tape, const VaeParams& params) {
  VaeVars v;
  v.enc = load_stack(tape, params.enc, v.all);
  v.dec = load_stack(tape, params.dec, v.all);
  if (!params.noise_param.empty()) {
    v.noise_param = tape.input(params.noise_param);
    v.all.push_back(v.noise_param);
  }
  return v;
}

VaeVars rebind_vars(const VaeParams& params, const std::vector<Var>& flat) {
  const std::size_t expected = params.tensors().size();
  if (flat.size() != expected) {
    throw DimensionError("rebind_vars: expected " + std::to_string(expected) + " vars, got " +
                         std::to_string(flat.size()));
  }
  VaeVars v;
  v.all = flat;
  std::size_t i = 0;
  auto take = [&flat, &i] { return flat[i++]; };
  auto bind_stack = [&](const StackParams& s) {
    StackVars sv;
    sv.in_w = take();
    sv.in_b = take();
    for (std::size_t b = 0; b < s.blocks.size(); ++b) {
      sv.blocks.push_back({take(), take(), take(), take(), take(), take()});
    }
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
      sv.layers.push_back({take(), take()});
    }
    sv.mu_w = take();
    sv.mu_b = take();
    sv.sig_w = take();
    sv.sig_b = take();
    return sv;
  };
  v.enc = bind_stack(params.enc);
  v.dec = bind_stack(params.dec);
  if (!params.noise_param.empty()) v.noise_param = take();
  return v;
}

PosteriorVars encode(Tape& tape, const VaeVars& vars, const VaeConfig& config, Var x,
                     bool training, RngStream* dropout_rng) {
  Var h = run_stack(tape, vars.enc, config, x, training, dropout_rng);
  PosteriorVars post;
  post.mu = nd::affine(tape, h, vars.enc.mu_w, vars.enc.mu_b);
  post.sigma = softplus_head(tape, h, vars.enc.sig_w, vars.enc.sig_b);
  return post;
}

DecoderVars decode(Tape& tape, const VaeVars& vars, const VaeConfig& config, Var z,
                   bool training, RngStream* dropout_rng) {
  Var h = run_stack(tape, vars.dec, config, z, training, dropout_rng);
  const int n = tape.val(h).rows();
  DecoderVars out;
  out.mu = nd::affine(tape, h, vars.dec.mu_w, vars.dec.mu_b);
  switch (config.noise) {
    case NoiseKind::kConditional:
      out.sigma = softplus_head(tape, h, vars.dec.sig_w, vars.dec.sig_b);
      break;
    case NoiseKind::kLearnableScalar: {
      Var s = nd::add_const(tape, nd::softplus(tape, vars.noise_param), kSigmaFloor);
      out.sigma = nd::broadcast_scalar(tape, s, {n, config.feature_dim});
      break;
    }
    case NoiseKind::kLearnableVector: {
      Var s = nd::add_const(tape, nd::softplus(tape, vars.noise_param), kSigmaFloor);
      out.sigma = nd::broadcast_rowvec(tape, s, n);
      break;
    }
    case NoiseKind::kFixedScalar:
      out.sigma = tape.constant(Tensor::full({n, config.feature_dim}, config.fixed_sigma));
      break;
  }
  return out;
}

Var reparam_sample(Tape& tape, const PosteriorVars& post, Var eps) {
  return nd::add(tape, post.mu, nd::mul(tape, post.sigma, eps));
}

Var kl_standard_normal_rows(Tape& tape, const PosteriorVars& post) {
  Var t = nd::add(tape, nd::square(tape, post.mu), nd::square(tape, post.sigma));
  t = nd::sub(tape, t, nd::scale(tape, nd::log_e(tape, post.sigma), 2.0));
  t = nd::add_const(tape, t, -1.0);
  return nd::scale(tape, nd::row_sum(tape, t), 0.5);
}

// ---------------------------------------------------------------------------

Posterior encode_eval(const VaeParams& params, const Tensor& x) {
  Tape tape;
  VaeVars vars = load_vars(tape, params);
  Var xv = tape.constant(x);
  PosteriorVars post = encode(tape, vars, params.config, xv, false, nullptr);
  return Posterior{tape.val(post.mu), tape.val(post.sigma)};
}

DecoderOutput decode_eval(const VaeParams& params, const Tensor& z) {
  Tape tape;
  VaeVars vars = load_vars(tape, params);
  Var zv = tape.constant(z);
  DecoderVars dec = decode(tape, vars, params.config, zv, false, nullptr);
  return DecoderOutput{tape.val(dec.mu), tape.val(dec.sigma)};
}

Tensor reparam_sample(const Posterior& post, const Tensor& eps) {
  require_same_shape(post.mu, eps, "reparam_sample");
  Tensor z(post.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = post.mu[i] + post.sigma[i] * eps[i];
  return z;
}

Tensor kl_standard_normal(const Posterior& post) {
  const int n = post.mu.rows(), d = post.mu.cols();
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double mu = post.mu.at(i, j), s = post.sigma.at(i, j);
      acc += mu * mu + s * s - 1.0 - 2.0 * std::log(s);
    }
    out[static_cast<std::size_t>(i)] = 0.5 * acc;
  }
  return out;
}

Tensor sample_generative(const VaeParams& params, int n, RngStream& rng,
                         bool include_output_noise) {
  RngStream z_rng = rng.child("gen_z");
  RngStream x_rng = rng.child("gen_x");
  Tensor z = nd::normal_tensor(z_rng, {n, params.config.latent_dim});
  DecoderOutput dec = decode_eval(params, z);
  if (!include_output_noise) return dec.mu;
  Tensor out(dec.mu.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = dec.mu[i] + dec.sigma[i] * x_rng.normal();
  }
  return out;
}

}  // namespace volimp::vae
