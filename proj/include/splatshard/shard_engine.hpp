#pragma once

#include "splatshard/rasterizer.hpp"
#include "splatshard/remap.hpp"
#include "splatshard/scene.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace splatshard {

/// Ownership of the dense global id space across simulated ranks.
struct ShardMap {
  int m_ranks = 1;
  std::vector<int> owner_of;                          // per global id
  std::vector<std::vector<std::int64_t>> per_rank_ids;  // ascending

  std::size_t size() const { return owner_of.size(); }
  std::vector<std::size_t> shard_sizes() const;

  static ShardMap from_owners(std::vector<int> owners, int m_ranks);
  /// Throws ContractViolation unless every id in [0, n) has exactly one owner.
  void validate(std::size_t n) const;
};

/// owner_of(i) = i mod m_ranks.
ShardMap build_shard_map(std::int64_t n, int m_ranks);

/// Survivors keep their owner; Gaussians created by the change go to their source's owner.
ShardMap remap_shard_map(const ShardMap& map, const IdRemap& remap);

/// Largest shard over max(1, smallest shard).
double shard_skew(const ShardMap& map);

/// Re-shards by index parity when the skew exceeds the threshold; otherwise returns the map.
ShardMap maybe_redistribute(const ShardMap& map, double skew_threshold,
                            bool* redistributed = nullptr);

struct TileAssignment {
  std::vector<int> owner;  // per tile
  std::vector<std::int64_t> cost;
  std::vector<std::size_t> boundaries;  // m_ranks + 1 run offsets

  std::vector<std::int64_t> rank_costs() const;
  /// max/min rank cost (min clamped to 1).
  double cost_ratio() const;
};

/// Contiguous runs of ascending tile ids with the largest run cost minimised.
TileAssignment partition_tiles(std::span<const std::int64_t> costs, int m_ranks);

struct ExchangeStats {
  std::vector<std::int64_t> projected_per_rank;
  std::vector<std::int64_t> received_per_rank;
  std::int64_t volume = 0;  // sum over splats of distinct receiving ranks
  std::vector<std::int64_t> rank_tile_costs;
  double tile_cost_ratio = 1;
};

/// One view of a batch: the camera and, per rank, the ids it rasterizes (ascending, owned).
struct ViewRequest {
  const Camera* camera = nullptr;
  std::vector<std::vector<std::int64_t>> active_ids;  // empty: every rank uses its whole shard
};

template <typename Scalar>
struct RankArtifacts {
  std::vector<ProjectedSplat<Scalar>> local;  // own projected splats, ordered by (view, id)
  std::vector<int> local_view;

  std::vector<ProjectedSplat<Scalar>> received;  // copies routed to this rank
  std::vector<int> received_view;
  std::vector<int> received_from_rank;
  std::vector<std::int32_t> received_from_index;  // index into the sender's `local`

  std::vector<int> owned_tiles;                  // batch tile ids, ascending
  std::vector<std::vector<std::int32_t>> bins;   // per owned tile, indices into `received`
};

/// Retained state of one batched distributed render.
template <typename Scalar>
struct DistributedFrame {
  int m_ranks = 1;
  RasterSettings settings;
  std::vector<const Camera*> cameras;
  std::vector<TileLayout> layouts;
  std::vector<int> tile_offset;  // first batch tile id of each view
  TileAssignment assignment;
  std::vector<RankArtifacts<Scalar>> ranks;
  std::vector<Image<Scalar>> images;
  std::vector<std::vector<Scalar>> transmittance;
  ExchangeStats stats;

  int total_tiles() const;
  /// (view, tile within the view) of a batch tile id.
  std::pair<int, int> locate(int batch_tile) const;
};

/// Projects each rank's shard, routes splats to tile owners in one exchange, composites and
/// stitches. The images equal a single-rank render_forward bit for bit.
template <typename Scalar>
DistributedFrame<Scalar> distributed_render(const GaussianModel& model, const ShardMap& shards,
                                            std::span<const ViewRequest> views,
                                            const RasterSettings& settings = {});

template <typename Scalar>
DistributedFrame<Scalar> distributed_render(const GaussianModel& model, const ShardMap& shards,
                                            const Camera& camera,
                                            const RasterSettings& settings = {});

struct ScreenMeanGrad {
  int view;
  std::int64_t global_id;
  Eigen::Vector2d grad;  // dL/dmean2d in pixels
};

struct DistributedGradients {
  std::vector<ParamVector> params;          // model-sized; owner ranks write their own ids
  std::vector<ScreenMeanGrad> mean2d;       // one per projected splat, ordered by (view, id)
  std::vector<std::int64_t> partials_sent;  // per rank, tile partials routed back to owners
};

/// Tile-local gradients routed back to owners and folded in ascending batch-tile order.
template <typename Scalar>
DistributedGradients distributed_backward(const GaussianModel& model,
                                          const DistributedFrame<Scalar>& frame,
                                          std::span<const Image<Scalar>> grad_images);

struct ViewCoverage {
  std::vector<std::int64_t> ids;             // projected (c_rad = 1) ids, ascending
  std::vector<SplatCoverage> coverage;       // aligned with ids
};

/// Instrumented sweep of one view through the sharded engine.
template <typename Scalar>
ViewCoverage distributed_instrumented(const GaussianModel& model, const ShardMap& shards,
                                      const Camera& camera, const RasterSettings& settings = {});

}  // namespace splatshard
