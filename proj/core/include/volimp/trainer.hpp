#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "volimp/losses.hpp"
#include "volimp/model.hpp"
#include "volimp/optim.hpp"

namespace volimp::train {

using nd::Tensor;

struct LossRow {
  std::int64_t step;
  double total, recon, kl, lr;
};

struct Options {
  loss::LossSpec loss;
  std::int64_t steps = 100000;
  int batch_size = 64;
  nd::LrSchedule lr;
  double weight_decay = 1e-5;
  nd::AdamConstants adam;
  std::uint64_t seed = 1;
  std::int64_t log_every = 100;
  std::int64_t checkpoint_every = 0;  // 0 = no periodic checkpoints
  std::function<void(std::int64_t, const vae::VaeParams&)> checkpoint_cb;
  const std::vector<bool>* trainable = nullptr;  // freeze entries whose flag is false
  bool eval_mode = false;                        // force dropout off (encoder refits)
  std::function<bool(std::int64_t, const vae::VaeParams&)> step_cb;  // true = stop early
};

struct Result {
  vae::VaeParams params;
  std::vector<LossRow> log;
};

/// Minibatch training of a VAE on rows of X with observation mask. Fully
/// deterministic for a given seed: batch sampling, reparameterization draws
/// and dropout each consume their own child stream.
Result fit(vae::VaeParams params, const Tensor& x, const Tensor& mask, const Options& opt);

}  // namespace volimp::train
