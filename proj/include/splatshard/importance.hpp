#pragma once

#include "splatshard/remap.hpp"
#include "splatshard/scene.hpp"
#include "splatshard/shard_engine.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace splatshard {

inline constexpr double kImportanceEpsilon = 1e-8;
inline constexpr double kContributionMass = 0.99;

/// N x V bit matrix stored column-major, one bit per entry (bit i % 64 of word i / 64).
class CullMatrix {
 public:
  CullMatrix() = default;
  CullMatrix(std::size_t rows, std::size_t cols, bool value = false);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t words_per_column() const { return words_per_column_; }

  bool get(std::size_t row, std::size_t col) const;
  void set(std::size_t row, std::size_t col, bool value);
  std::span<const std::uint64_t> column_words(std::size_t col) const;
  std::vector<bool> column(std::size_t col) const;
  std::size_t count_column(std::size_t col) const;

  /// Rows gathered through the remap; new rows copy their source row.
  CullMatrix remap(const IdRemap& remap) const;

  /// 8-byte header (uint32 rows, uint32 cols, little-endian) then each column as
  /// ceil(rows / 8) bytes, LSB-first.
  std::vector<std::uint8_t> to_blob() const;
  static CullMatrix from_blob(std::span<const std::uint8_t> blob);

  bool operator==(const CullMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_per_column_ = 0;
  std::vector<std::uint64_t> words_;
};

struct ImportanceReport {
  std::vector<double> s;
  std::vector<std::int32_t> c_rad;
  std::vector<std::int32_t> c_vis;
  std::vector<double> phi;
  CullMatrix cull;                   // N x V, columns follow `view_camera_ids`
  std::vector<int> view_camera_ids;
  std::int64_t pass_step = 0;

  std::size_t size() const { return s.size(); }
  /// Column of a camera id, or -1 when the camera was not scored.
  int column_of(int camera_id) const;
  ImportanceReport remap(const IdRemap& remap) const;

  bool operator==(const ImportanceReport&) const = default;
};

/// Membership of the smallest prefix, sorted by w descending then id ascending, whose sum
/// reaches `mass` of the total. Aligned with `ids`.
std::vector<bool> contribution_prefix(std::span<const double> w,
                                      std::span<const std::int64_t> ids, double mass);

/// One instrumented sweep over every train camera; the model is not touched. Training scores in
/// float; the double instantiation exists for reference checks.
template <typename Scalar = float>
ImportanceReport scoring_pass(const GaussianModel& model, std::span<const Camera> cameras,
                              const ShardMap& shards, std::int64_t step = 0);

template <typename Scalar = float>
ImportanceReport scoring_pass(const Scene& scene, const ShardMap& shards, std::int64_t step = 0);

struct PruneResult {
  GaussianModel model;
  IdRemap remap;
  bool all_zero_scores = false;
};

/// Exponential-race keys log(u) / s; the round(keep_fraction * N) largest keys survive.
std::vector<bool> stochastic_keep_mask(std::span<const double> scores, double keep_fraction,
                                       std::uint64_t seed);

/// Smallest prefix by score (descending, ties by id) reaching target_mass of the total.
std::vector<bool> mass_cut_keep_mask(std::span<const double> scores, double target_mass,
                                     bool* all_zero = nullptr);

PruneResult prune_stochastic(const GaussianModel& model, const ImportanceReport& report,
                             double keep_fraction, std::uint64_t seed);

PruneResult prune_mass_cut(const GaussianModel& model, const ImportanceReport& report,
                           double target_mass);

/// global_id,s,c_rad,c_vis,phi with full double precision.
std::string report_csv(const ImportanceReport& report);

GaussianModel apply_keep(const GaussianModel& model, const IdRemap& remap);

}  // namespace splatshard
