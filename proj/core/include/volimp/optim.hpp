#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volimp/tensor.hpp"

namespace volimp::nd {

struct AdamConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments with decoupled weight decay (decay applied directly to the
/// parameters, scaled by the learning rate, outside the moment estimates).
class AdamState {
 public:
  AdamState(const std::vector<const Tensor*>& params, AdamConstants constants,
            double weight_decay);

  std::int64_t step_count() const { return t_; }
  const AdamConstants& constants() const { return constants_; }
  double weight_decay() const { return weight_decay_; }

  friend void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                        AdamState& state, double lr, const std::vector<std::string>& names,
                        const std::vector<bool>* trainable);

 private:
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
  AdamConstants constants_;
  double weight_decay_ = 0.0;
};

/// One bias-corrected Adam update. `names` is used only for error messages;
/// `trainable`, when given, freezes parameters whose flag is false (their
/// moments and values are left untouched). Throws NumericError on non-finite
/// gradients, naming the offending parameter.
void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, const std::vector<std::string>& names,
               const std::vector<bool>* trainable = nullptr);

/// Piecewise learning-rate schedule: linear warmup on [0, warmup_steps],
/// constant until decay_step, then warmup_end * decay_factor.
struct LrSchedule {
  double warmup_start = 1e-7;
  double warmup_end = 2e-4;
  std::int64_t warmup_steps = 5000;
  std::int64_t decay_step = 50000;
  double decay_factor = 0.5;

  static LrSchedule constant(double rate);
};

double lr_at(const LrSchedule& schedule, std::int64_t step);

}  // namespace volimp::nd
