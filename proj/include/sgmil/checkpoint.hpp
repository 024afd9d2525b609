#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "sgmil/model.hpp"

namespace sgmil {

struct ScaleModel {
  Magnification magnification = Magnification::X20;
  ModelParams online;
  ModelParams ema;

  friend bool operator==(const ScaleModel&, const ScaleModel&) = default;
};

struct Checkpoint {
  std::vector<ScaleModel> scales;
  std::array<double, 3> ensemble_weights = {1.0 / 3, 1.0 / 3, 1.0 / 3};

  const ScaleModel* find(Magnification m) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Layout (little-endian): "SGMCK", u32 version, f64[3] ensemble weights,
// u32 scale count; per scale: u8 magnification, u32 input_dim, width,
// attn_dim, blocks, u32 tensor count, then per tensor u32 name length,
// name bytes ("online/<name>" or "ema/<name>"), u32 rows, u32 cols, f64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sgmil
