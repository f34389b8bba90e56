#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "volimp/model.hpp"
#include "volimp/optim.hpp"
#include "volimp/surfaces.hpp"

namespace volimp::ckpt {

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  nd::AdamConstants adam;
  double weight_decay = 0.0;
  nd::LrSchedule lr;
  std::string init_scheme = "uniform_fan_in";
  std::optional<surfaces::Stats> stats;  // standardization used at train time
};

struct Checkpoint {
  vae::VaeParams params;
  CheckpointMeta meta;
};

/// Versioned self-describing JSON; weights round-trip bit-exactly (decimal
/// shortest-round-trip rendering).
void save_checkpoint(const std::string& path, const vae::VaeParams& params,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace volimp::ckpt
