#pragma once

#include "splatshard/density_control.hpp"
#include "splatshard/importance.hpp"
#include "splatshard/lod_gate.hpp"
#include "splatshard/optimizer.hpp"
#include "splatshard/scene.hpp"
#include "splatshard/shard_engine.hpp"
#include "splatshard/train_config.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace splatshard {

/// Event counts per component; a disabled component leaves its own counters at zero.
struct Counters {
  std::int64_t steps = 0;
  std::int64_t gate_views = 0;      // views where the level predicate was evaluated
  std::int64_t gate_fallbacks = 0;
  std::int64_t gate_excluded = 0;   // ids dropped by the gate, summed over views
  std::int64_t mask_views = 0;
  std::int64_t mask_culled = 0;
  std::int64_t phi_steps = 0;       // steps whose statistic used the visibility ratio
  std::int64_t scoring_passes = 0;
  std::int64_t pass1_prunes = 0;
  std::int64_t pass1_removed = 0;
  std::int64_t pass2_prunes = 0;
  std::int64_t pass2_removed = 0;
  std::int64_t densify_events = 0;
  std::int64_t clones = 0;
  std::int64_t splits = 0;
  std::int64_t prunes = 0;
  std::int64_t redistributions = 0;
  std::int64_t opacity_resets = 0;

  std::vector<std::pair<std::string, std::int64_t>> items() const;
  /// Inverse of items(); unknown names are rejected.
  void set(const std::string& name, std::int64_t value);
  bool operator==(const Counters&) const = default;
};

/// Everything a run needs to continue bit-exactly from `step`.
struct TrainState {
  std::int64_t step = 0;
  GaussianModel model;
  ShardMap shards;
  AdamState adam;
  DensifyStats stats;
  std::optional<ImportanceReport> report;
  Counters counters;
  std::uint64_t config_hash = 0;
  double d0 = 0;

  bool operator==(const TrainState& o) const;
};

struct MetricsRow {
  std::int64_t step = 0;
  double loss = 0, l1 = 0, ssim = 0, scale_term = 0;
  std::int64_t n_gaussians = 0;
  std::int64_t active = 0;   // summed over the batch views
  std::int64_t visible = 0;  // union of projected ids
  std::int64_t exchange_volume = 0;
  double wall_seconds = 0;
  double its_per_sec = 0;
  std::optional<double> test_psnr, test_ssim;
};

struct ShardRow {
  std::int64_t step = 0;
  std::vector<std::size_t> shard_sizes;
  std::vector<std::int64_t> received;
  std::int64_t volume = 0;
  double tile_cost_ratio = 1;
};

struct EventRow {
  std::int64_t step = 0;
  std::string event;
  std::int64_t n_before = 0, n_after = 0;
  std::int64_t clones = 0, splits = 0, prunes = 0;
};

struct ViewMetrics {
  int camera_id = 0;
  double psnr = 0, ssim = 0;
};

struct EvalSummary {
  std::vector<ViewMetrics> views;
  double mean_psnr = 0, mean_ssim = 0;
};

struct RenderOptions {
  int sh_degree = kMaxShDegree;
  bool early_termination = true;
  const LodConfig* gate = nullptr;  // applied at `step` when set
  std::int64_t step = 0;
};

/// Single-rank render of the model, optionally through the LOD gate.
Image<float> render_view(const GaussianModel& model, const Camera& camera, const RenderOptions& options);

/// PSNR and SSIM for every camera in `cameras` that has an image.
EvalSummary evaluate(const GaussianModel& model, std::span<const Camera> cameras,
                     const std::map<int, Image<float>>& images, const RenderOptions& options);

/// Replacement points for the optional components; empty members use the real implementation.
struct TrainHooks {
  std::function<GateResult(const GaussianModel&, std::span<const std::int64_t>, const Camera&,
                           std::int64_t, const LodConfig&)>
      gate;
  std::function<std::optional<ImportanceReport>(const GaussianModel&, std::span<const Camera>,
                                                const ShardMap&, std::int64_t)>
      scoring;
  std::function<PruneResult(const GaussianModel&, const ImportanceReport&, double, std::uint64_t)>
      pass1;
  std::function<PruneResult(const GaussianModel&, const ImportanceReport&, double)> pass2;
  std::function<std::vector<double>(const ImportanceReport&)> phi;
  std::function<std::vector<std::int64_t>(std::span<const std::int64_t>, const ImportanceReport&,
                                          int, std::size_t)>
      mask;
};

struct TrainOptions {
  std::optional<TrainState> resume;
  TrainHooks hooks;
  /// Called with the state after every checkpoint_interval steps.
  std::function<void(const TrainState&)> on_checkpoint;
  std::int64_t stop_after = -1;  // end early after this step (the state is still complete)
  bool progress = false;          // one line per 100 steps on stderr
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRow> metrics;
  std::vector<ShardRow> shard_rows;
  std::vector<EventRow> events;
  std::optional<EvalSummary> final_eval;
  double wall_seconds = 0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& message, std::string dump)
      : std::runtime_error(message), dump_(std::move(dump)) {}
  const std::string& dump() const noexcept { return dump_; }

 private:
  std::string dump_;
};

/// Configuration with d0 and LOD labels taken from the scene.
LodConfig effective_lod(const TrainConfig& config, double d0);

TrainState initial_state(const Scene& scene, const TrainConfig& config);

/// Train camera ids of step `step` (1-based): seeded permutation per epoch.
std::vector<int> batch_cameras(std::span<const int> train_indices, int batch, std::int64_t step,
                               std::uint64_t seed);

TrainResult train(const Scene& scene, const TrainConfig& config, const TrainOptions& options = {});

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string shard_csv(const std::vector<ShardRow>& rows, int m_ranks);
std::string events_csv(const std::vector<EventRow>& rows);
std::string eval_csv(const EvalSummary& summary);
std::string counters_json(const Counters& counters);

}  // namespace splatshard
