#pragma once

#include "splatshard/importance.hpp"
#include "splatshard/scene.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace splatshard {

enum class LevelRounding { NearestEven, Floor };

struct LodConfig {
  double f = 2.0;
  double d0 = 1.0;
  int levels = 4;
  std::vector<std::int64_t> unlock_schedule{2000, 4000, 8000, 16000};
  std::int64_t gate_enabled_after = 20000;
  double fallback_ratio = 0.95;
  LevelRounding rounding = LevelRounding::NearestEven;

  /// Throws ContractViolation when f <= 1, levels < 1 or the schedule is not strictly increasing.
  void validate() const;
};

/// Finest unlocked level at iteration t.
int max_level(std::int64_t t, const LodConfig& cfg);

/// round(log_f(d0 / d)) clamped to [0, max_level(t)].
int level_at(double distance, std::int64_t t, const LodConfig& cfg);

enum class Heritage { Clone, Split };

int apply_heritage(int parent_level, Heritage op, int levels);

struct GateResult {
  std::vector<std::int64_t> ids;
  std::size_t passed = 0;  // ids that satisfied the level predicate
  bool gate_active = false;
  bool fell_back = false;
};

/// Level predicate over `shard` (ascending ids); returns the whole shard before the gate opens
/// or when the kept ratio exceeds the fallback ratio.
GateResult lod_filter(const GaussianModel& model, std::span<const std::int64_t> shard,
                      const Camera& camera, std::int64_t t, const LodConfig& cfg);

/// Removes ids flagged in column `column` of the cull matrix. The matrix must cover the model.
std::vector<std::int64_t> apply_cull(std::span<const std::int64_t> ids, const CullMatrix& cull,
                                     int column, std::size_t model_size);

/// Gate then cull. `cull` may be null (no report yet) and `column` -1 (view not scored).
std::vector<std::int64_t> active_set(const GaussianModel& model,
                                     std::span<const std::int64_t> shard, const Camera& camera,
                                     std::int64_t t, const LodConfig& cfg, const CullMatrix* cull,
                                     int column);

}  // namespace splatshard
