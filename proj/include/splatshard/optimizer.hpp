#pragma once

#include "splatshard/remap.hpp"
#include "splatshard/scene.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace splatshard {

struct AdamConfig {
  double position_lr_init = 1.6e-4;  // times the scene extent
  double position_lr_final = 1.6e-6;
  std::int64_t position_lr_max_steps = 30000;
  double sh_dc_lr = 2.5e-3;
  double sh_rest_lr = 2.5e-3 / 20.0;
  double opacity_lr = 5e-2;
  double scale_lr = 5e-3;
  double rotation_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

struct AdamState {
  std::vector<ParamVector> m;
  std::vector<ParamVector> v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n)
      : m(n, ParamVector::Zero()), v(n, ParamVector::Zero()) {}
  std::size_t size() const { return m.size(); }
  /// New Gaussians start from their source's moments.
  void remap(const IdRemap& remap);
  bool operator==(const AdamState&) const = default;
};

/// Per-parameter step sizes at a given step (log-linear position decay).
ParamVector learning_rates(const AdamConfig& cfg, std::int64_t step, double scene_extent);

/// One Adam update of the listed Gaussians; `grads` is model-sized. Rotations are renormalised.
/// Call `begin_step` once per iteration before updating any shard.
void adam_update(GaussianModel& model, AdamState& state, std::span<const std::int64_t> ids,
                 std::span<const ParamVector> grads, const ParamVector& lr, const AdamConfig& cfg);

inline void begin_step(AdamState& state) { ++state.step; }

}  // namespace splatshard
