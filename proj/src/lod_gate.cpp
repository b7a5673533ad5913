#include "splatshard/lod_gate.hpp"

#include "splatshard/errors.hpp"

#include <algorithm>
#include <cmath>

namespace splatshard {

void LodConfig::validate() const {
  require(f > 1, "lod: f must exceed 1");
  require(levels >= 1, "lod: level count must be at least 1");
  require(d0 > 0, "lod: d0 must be positive");
  for (std::size_t k = 1; k < unlock_schedule.size(); ++k)
    require(unlock_schedule[k] > unlock_schedule[k - 1], "lod: unlock schedule must be strictly increasing");
}

int max_level(std::int64_t t, const LodConfig& cfg) {
  int level = 0;
  for (std::int64_t step : cfg.unlock_schedule)
    if (t >= step) ++level;
  return std::min(level, cfg.levels - 1);
}

int level_at(double distance, std::int64_t t, const LodConfig& cfg) {
  require(distance > 0, "level_at: distance must be positive");
  const double raw = std::log(cfg.d0 / distance) / std::log(cfg.f);
  const double rounded = cfg.rounding == LevelRounding::Floor ? std::floor(raw) : std::nearbyint(raw);
  return int(std::clamp(rounded, 0.0, double(max_level(t, cfg))));
}

int apply_heritage(int parent_level, Heritage op, int levels) {
  require(levels >= 1 && parent_level >= 0 && parent_level < levels, "apply_heritage: level out of range");
  return op == Heritage::Clone ? parent_level : std::min(parent_level + 1, levels - 1);
}

GateResult lod_filter(const GaussianModel& model, std::span<const std::int64_t> shard,
                      const Camera& camera, std::int64_t t, const LodConfig& cfg) {
  GateResult out;
  out.ids.assign(shard.begin(), shard.end());
  out.passed = shard.size();
  if (t < cfg.gate_enabled_after || shard.empty()) return out;
  out.gate_active = true;
  const Eigen::Vector3d c = camera.center();
  std::vector<std::int64_t> kept;
  for (std::int64_t id : shard) {
    const Gaussian& g = model[std::size_t(id)];
    const double d = std::max((g.position() - c).norm(), 1e-12);
    if (g.lod_level <= level_at(d, t, cfg)) kept.push_back(id);
  }
  out.passed = kept.size();
  if (double(kept.size()) / double(shard.size()) > cfg.fallback_ratio) {
    out.fell_back = true;
    return out;
  }
  out.ids = std::move(kept);
  return out;
}

std::vector<std::int64_t> apply_cull(std::span<const std::int64_t> ids, const CullMatrix& cull,
                                     int column, std::size_t model_size) {
  require(cull.rows() == model_size, "active_set: cull column length does not match the model");
  require(column >= 0 && std::size_t(column) < cull.cols(), "active_set: cull column out of range");
  std::vector<std::int64_t> out;
  out.reserve(ids.size());
  for (std::int64_t id : ids)
    if (!cull.get(std::size_t(id), std::size_t(column))) out.push_back(id);
  return out;
}

std::vector<std::int64_t> active_set(const GaussianModel& model,
                                     std::span<const std::int64_t> shard, const Camera& camera,
                                     std::int64_t t, const LodConfig& cfg, const CullMatrix* cull,
                                     int column) {
  GateResult gated = lod_filter(model, shard, camera, t, cfg);
  if (!cull || column < 0) return std::move(gated.ids);
  return apply_cull(gated.ids, *cull, column, model.size());
}

}  // namespace splatshard
