#pragma once

#include "splatshard/remap.hpp"
#include "splatshard/scene.hpp"
#include "splatshard/shard_engine.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace splatshard {

struct DensifyConfig {
  double grad_threshold = 2e-4;
  double scale_fraction = 0.01;  // of the scene extent; the clone/split boundary
  double split_factor = 1.6;
  double min_opacity = 0.005;
  std::int64_t start = 2000;
  std::int64_t stop = 20000;
  std::int64_t interval = 500;
  bool opacity_reset = false;
  std::int64_t opacity_reset_interval = 3000;
  double skew_threshold = 1.25;

  bool scheduled(std::int64_t step) const {
    return step >= start && step <= stop && interval > 0 && step % interval == 0;
  }
};

struct DensifyStats {
  std::vector<double> grad_accum;
  std::vector<std::int32_t> count;
  std::vector<double> phi;  // 1 until a report exists

  DensifyStats() = default;
  explicit DensifyStats(std::size_t n) { reset(n); }
  std::size_t size() const { return grad_accum.size(); }
  void reset(std::size_t n);
  /// Adds phi_i * norm for every listed Gaussian and counts one observation.
  void accumulate(std::span<const std::int64_t> ids, std::span<const double> norms);
  double mean(std::size_t i) const { return grad_accum[i] / double(std::max(1, count[i])); }
};

struct DensifyOutcome {
  GaussianModel model;
  IdRemap remap;
  ShardMap shards;
  std::int64_t clones = 0;
  std::int64_t splits = 0;
  std::int64_t prunes = 0;
  bool redistributed = false;
};

/// Clone / split / opacity-prune at a scheduled step. Throws ContractViolation off schedule.
DensifyOutcome apply_density_control(const GaussianModel& model, const DensifyStats& stats,
                                     const ShardMap& shards, const DensifyConfig& cfg,
                                     std::int64_t step, double scene_extent, int lod_levels,
                                     std::uint64_t seed);

/// Two children of a split parent, drawn from its Gaussian with scales divided by the factor.
std::pair<Gaussian, Gaussian> split_children(const Gaussian& parent, double split_factor,
                                             int lod_levels, std::mt19937_64& rng);

/// Caps every opacity at 0.01.
void reset_opacity(GaussianModel& model);

}  // namespace splatshard
