#include "volimp/optim.hpp"

#include <cmath>
#include <limits>

namespace volimp::nd {

AdamState::AdamState(const std::vector<const Tensor*>& params, AdamConstants constants,
                     double weight_decay)
    : constants_(constants), weight_decay_(weight_decay) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor* p : params) {
    m_.push_back(Tensor::zeros(p->shape()));
    v_.push_back(Tensor::zeros(p->shape()));
  }
}

void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, const std::vector<std::string>& names,
               const std::vector<bool>* trainable) {
  if (params.size() != grads.size() || params.size() != state.m_.size()) {
    throw DimensionError("adam_step: parameter/gradient/state count mismatch");
  }
  if (!(lr > 0.0)) throw ParameterError("adam_step: lr must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    if (!grads[i].all_finite()) {
      const std::string& name = i < names.size() ? names[i] : std::to_string(i);
      throw NumericError("non-finite gradient for parameter " + name);
    }
    require_same_shape(*params[i], grads[i], "adam_step");
  }

  state.t_ += 1;
  const auto& c = state.constants_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (trainable && !(*trainable)[i]) continue;
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& m = state.m_[i];
    Tensor& v = state.v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      const double pj = p[j];
      p[j] = pj - lr * mhat / (std::sqrt(vhat) + c.eps) - lr * state.weight_decay_ * pj;
    }
  }
}

LrSchedule LrSchedule::constant(double rate) {
  return LrSchedule{rate, rate, 0, std::numeric_limits<std::int64_t>::max(), 1.0};
}

double lr_at(const LrSchedule& s, std::int64_t step) {
  if (step < 0) throw ParameterError("lr_at: step must be >= 0");
  if (step < s.warmup_steps) {
    const double frac = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.warmup_start + (s.warmup_end - s.warmup_start) * frac;
  }
  if (step <= s.decay_step) return s.warmup_end;
  return s.warmup_end * s.decay_factor;
}

}  // namespace volimp::nd
