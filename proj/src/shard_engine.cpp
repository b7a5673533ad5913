#include "splatshard/shard_engine.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/linear_partition.hpp"
#include "splatshard/parallel.hpp"

#include <algorithm>
#include <numeric>

namespace splatshard {

std::vector<std::size_t> ShardMap::shard_sizes() const {
  std::vector<std::size_t> sizes(std::size_t(m_ranks), 0);
  for (std::size_t r = 0; r < per_rank_ids.size(); ++r) sizes[r] = per_rank_ids[r].size();
  return sizes;
}

ShardMap ShardMap::from_owners(std::vector<int> owners, int m_ranks) {
  require(m_ranks >= 1, "shard map needs at least one rank");
  ShardMap map;
  map.m_ranks = m_ranks;
  map.owner_of = std::move(owners);
  map.per_rank_ids.assign(std::size_t(m_ranks), {});
  for (std::size_t i = 0; i < map.owner_of.size(); ++i) {
    const int r = map.owner_of[i];
    require(r >= 0 && r < m_ranks, "shard map owner out of range");
    map.per_rank_ids[std::size_t(r)].push_back(std::int64_t(i));
  }
  return map;
}

void ShardMap::validate(std::size_t n) const {
  require(owner_of.size() == n, "shard map does not cover the model (" +
                                    std::to_string(owner_of.size()) + " owners for " +
                                    std::to_string(n) + " Gaussians)");
  require(int(per_rank_ids.size()) == m_ranks, "shard map rank count mismatch");
  std::vector<int> seen(n, 0);
  for (int r = 0; r < m_ranks; ++r) {
    for (std::int64_t id : per_rank_ids[std::size_t(r)]) {
      require(id >= 0 && std::size_t(id) < n, "shard map holds an id outside the model");
      require(owner_of[std::size_t(id)] == r, "shard map owner table disagrees with shard lists");
      require(++seen[std::size_t(id)] == 1, "shard map holds a duplicate id");
    }
  }
  for (std::size_t i = 0; i < n; ++i) require(seen[i] == 1, "shard map misses a live id");
}

ShardMap build_shard_map(std::int64_t n, int m_ranks) {
  require(n >= 0, "build_shard_map: negative size");
  require(m_ranks >= 1, "build_shard_map: need at least one rank");
  std::vector<int> owners(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) owners[std::size_t(i)] = int(i % m_ranks);
  return ShardMap::from_owners(std::move(owners), m_ranks);
}

ShardMap remap_shard_map(const ShardMap& map, const IdRemap& remap) {
  return ShardMap::from_owners(apply_remap(map.owner_of, remap), map.m_ranks);
}

double shard_skew(const ShardMap& map) {
  const auto sizes = map.shard_sizes();
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  return double(*hi) / double(std::max<std::size_t>(1, *lo));
}

ShardMap maybe_redistribute(const ShardMap& map, double skew_threshold, bool* redistributed) {
  require(skew_threshold > 1, "maybe_redistribute: threshold must exceed 1");
  const bool skewed = shard_skew(map) > skew_threshold;
  if (redistributed) *redistributed = skewed;
  // Ids are already dense, so renumbering in ascending old-id order is the identity.
  return skewed ? build_shard_map(std::int64_t(map.size()), map.m_ranks) : map;
}

std::vector<std::int64_t> TileAssignment::rank_costs() const {
  std::vector<std::int64_t> out(boundaries.empty() ? 0 : boundaries.size() - 1, 0);
  for (std::size_t t = 0; t < owner.size(); ++t) out[std::size_t(owner[t])] += cost[t];
  return out;
}

double TileAssignment::cost_ratio() const {
  const auto c = rank_costs();
  if (c.empty()) return 1;
  const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
  return double(*hi) / double(std::max<std::int64_t>(1, *lo));
}

TileAssignment partition_tiles(std::span<const std::int64_t> costs, int m_ranks) {
  TileAssignment out;
  out.cost.assign(costs.begin(), costs.end());
  out.boundaries = linear_partition(costs, m_ranks);
  out.owner.resize(costs.size());
  for (int r = 0; r < m_ranks; ++r)
    for (std::size_t t = out.boundaries[std::size_t(r)]; t < out.boundaries[std::size_t(r) + 1];
         ++t)
      out.owner[t] = r;
  return out;
}

template <typename Scalar>
int DistributedFrame<Scalar>::total_tiles() const {
  return tile_offset.empty() ? 0 : tile_offset.back() + layouts.back().tile_count();
}

template <typename Scalar>
std::pair<int, int> DistributedFrame<Scalar>::locate(int batch_tile) const {
  const auto it = std::upper_bound(tile_offset.begin(), tile_offset.end(), batch_tile);
  const int view = int(it - tile_offset.begin()) - 1;
  return {view, batch_tile - tile_offset[std::size_t(view)]};
}

namespace {

template <typename Scalar>
void for_each_tile(const ProjectedSplat<Scalar>& s, const TileLayout& layout, int offset,
                   auto&& fn) {
  const TileRange r = tile_footprint(s, layout);
  for (int ty = r.y0; ty < r.y1; ++ty)
    for (int tx = r.x0; tx < r.x1; ++tx) fn(offset + ty * layout.tiles_x + tx);
}

/// Projection, cost-aware tile partition, exchange and binning; everything but compositing.
template <typename Scalar>
DistributedFrame<Scalar> prepare_frame(const GaussianModel& model, const ShardMap& shards,
                                       std::span<const ViewRequest> views,
                                       const RasterSettings& settings) {
  shards.validate(model.size());
  const int m = shards.m_ranks;
  DistributedFrame<Scalar> f;
  f.m_ranks = m;
  f.settings = settings;
  int offset = 0;
  for (const auto& view : views) {
    require(view.camera != nullptr, "distributed_render: view without camera");
    require(view.active_ids.empty() || int(view.active_ids.size()) == m,
            "distributed_render: active set must list every rank");
    f.cameras.push_back(view.camera);
    f.layouts.emplace_back(view.camera->width, view.camera->height);
    f.tile_offset.push_back(offset);
    offset += f.layouts.back().tile_count();
  }
  const int total = offset;
  f.ranks.resize(std::size_t(m));

  // Each rank projects only what it owns and counts its per-tile overlaps.
  std::vector<std::vector<std::int64_t>> counts(std::size_t(m),
                                                std::vector<std::int64_t>(std::size_t(total), 0));
  parallel_for(std::size_t(m), [&](std::size_t r) {
    auto& rank = f.ranks[r];
    for (std::size_t v = 0; v < views.size(); ++v) {
      const auto& ids = views[v].active_ids.empty() ? shards.per_rank_ids[r]
                                                    : views[v].active_ids[r];
      for (std::int64_t id : ids)
        require(shards.owner_of[std::size_t(id)] == int(r),
                "distributed_render: active set holds a Gaussian the rank does not own");
      auto splats = project<Scalar>(model, ids, *views[v].camera, settings.sh_degree);
      for (auto& s : splats) {
        for_each_tile(s, f.layouts[v], f.tile_offset[v],
                      [&](int t) { ++counts[r][std::size_t(t)]; });
        rank.local.push_back(s);
        rank.local_view.push_back(int(v));
      }
    }
  });

  std::vector<std::int64_t> costs(std::size_t(total), 0);
  for (int r = 0; r < m; ++r)
    for (int t = 0; t < total; ++t) costs[std::size_t(t)] += counts[std::size_t(r)][std::size_t(t)];
  f.assignment = partition_tiles(costs, m);

  // All-to-all: every splat goes once to each distinct rank owning a tile it lands on.
  std::vector<std::vector<std::vector<std::int32_t>>> outbox(
      static_cast<std::size_t>(m), std::vector<std::vector<std::int32_t>>(static_cast<std::size_t>(m)));
  parallel_for(std::size_t(m), [&](std::size_t src) {
    const auto& rank = f.ranks[src];
    std::vector<int> dests;
    for (std::size_t i = 0; i < rank.local.size(); ++i) {
      const int v = rank.local_view[i];
      dests.clear();
      for_each_tile(rank.local[i], f.layouts[std::size_t(v)], f.tile_offset[std::size_t(v)],
                    [&](int t) { dests.push_back(f.assignment.owner[std::size_t(t)]); });
      std::sort(dests.begin(), dests.end());
      dests.erase(std::unique(dests.begin(), dests.end()), dests.end());
      for (int d : dests) outbox[src][std::size_t(d)].push_back(std::int32_t(i));
    }
  });

  parallel_for(std::size_t(m), [&](std::size_t dst) {
    auto& rank = f.ranks[dst];
    for (std::size_t src = 0; src < std::size_t(m); ++src) {
      for (std::int32_t i : outbox[src][dst]) {
        rank.received.push_back(f.ranks[src].local[std::size_t(i)]);
        rank.received_view.push_back(f.ranks[src].local_view[std::size_t(i)]);
        rank.received_from_rank.push_back(int(src));
        rank.received_from_index.push_back(i);
      }
    }
    const auto first = f.assignment.boundaries[dst];
    const auto last = f.assignment.boundaries[dst + 1];
    for (std::size_t t = first; t < last; ++t) rank.owned_tiles.push_back(int(t));
    rank.bins.assign(last - first, {});
    for (std::size_t k = 0; k < rank.received.size(); ++k) {
      const int v = rank.received_view[k];
      for_each_tile(rank.received[k], f.layouts[std::size_t(v)], f.tile_offset[std::size_t(v)],
                    [&](int t) {
                      if (f.assignment.owner[std::size_t(t)] == int(dst))
                        rank.bins[std::size_t(t) - first].push_back(std::int32_t(k));
                    });
    }
    for (auto& bin : rank.bins)
      sort_by_depth<Scalar>(bin, std::span<const ProjectedSplat<Scalar>>(rank.received));
  });

  f.stats.rank_tile_costs = f.assignment.rank_costs();
  f.stats.tile_cost_ratio = f.assignment.cost_ratio();
  for (const auto& rank : f.ranks) {
    f.stats.projected_per_rank.push_back(std::int64_t(rank.local.size()));
    f.stats.received_per_rank.push_back(std::int64_t(rank.received.size()));
    f.stats.volume += std::int64_t(rank.received.size());
  }
  return f;
}

}  // namespace

template <typename Scalar>
DistributedFrame<Scalar> distributed_render(const GaussianModel& model, const ShardMap& shards,
                                            std::span<const ViewRequest> views,
                                            const RasterSettings& settings) {
  auto f = prepare_frame<Scalar>(model, shards, views, settings);
  for (const auto& layout : f.layouts) {
    f.images.emplace_back(layout.width, layout.height);
    f.transmittance.emplace_back(std::size_t(layout.width) * std::size_t(layout.height),
                                 Scalar(1));
  }
  // Tiles are disjoint, so every rank writes its pixels straight into the stitched images.
  parallel_for(std::size_t(f.m_ranks), [&](std::size_t r) {
    const auto& rank = f.ranks[r];
    for (std::size_t k = 0; k < rank.owned_tiles.size(); ++k) {
      const auto [v, tile] = f.locate(rank.owned_tiles[k]);
      composite_tile<Scalar>(f.layouts[std::size_t(v)], tile,
                             std::span<const ProjectedSplat<Scalar>>(rank.received), rank.bins[k],
                             settings, f.images[std::size_t(v)], f.transmittance[std::size_t(v)]);
    }
  });
  return f;
}

template <typename Scalar>
DistributedFrame<Scalar> distributed_render(const GaussianModel& model, const ShardMap& shards,
                                            const Camera& camera, const RasterSettings& settings) {
  const ViewRequest view{&camera, {}};
  return distributed_render<Scalar>(model, shards, std::span<const ViewRequest>(&view, 1),
                                    settings);
}

namespace {

template <typename Payload>
struct Returned {
  int tile;
  std::int32_t index;  // into the owner's `local`
  Payload value;
};

/// Sorts partials by (owner-local index, batch tile) and folds each splat's run in tile order.
template <typename Payload, typename Fold>
void fold_returned(std::vector<Returned<Payload>>& parts, Fold&& fold) {
  std::sort(parts.begin(), parts.end(), [](const auto& a, const auto& b) {
    return a.index != b.index ? a.index < b.index : a.tile < b.tile;
  });
  for (const auto& p : parts) fold(p.index, p.value);
}

}  // namespace

template <typename Scalar>
DistributedGradients distributed_backward(const GaussianModel& model,
                                          const DistributedFrame<Scalar>& f,
                                          std::span<const Image<Scalar>> grad_images) {
  require(grad_images.size() == f.layouts.size(),
          "distributed_backward: one gradient image per view required");
  for (std::size_t v = 0; v < f.layouts.size(); ++v)
    require(grad_images[v].width == f.layouts[v].width &&
                grad_images[v].height == f.layouts[v].height,
            "distributed_backward: gradient image shape mismatch");
  const auto m = std::size_t(f.m_ranks);

  std::vector<std::vector<std::vector<Returned<ScreenGrad>>>> outbox(
      m, std::vector<std::vector<Returned<ScreenGrad>>>(m));
  parallel_for(m, [&](std::size_t r) {
    const auto& rank = f.ranks[r];
    std::vector<ScreenGrad> partial;
    for (std::size_t k = 0; k < rank.owned_tiles.size(); ++k) {
      const auto& bin = rank.bins[k];
      if (bin.empty()) continue;
      const auto [v, tile] = f.locate(rank.owned_tiles[k]);
      partial.assign(bin.size(), ScreenGrad::Zero());
      backward_tile<Scalar>(f.layouts[std::size_t(v)], tile,
                            std::span<const ProjectedSplat<Scalar>>(rank.received), bin,
                            f.settings, grad_images[std::size_t(v)], partial);
      for (std::size_t j = 0; j < bin.size(); ++j) {
        const auto idx = std::size_t(bin[j]);
        outbox[r][std::size_t(rank.received_from_rank[idx])].push_back(
            {rank.owned_tiles[k], rank.received_from_index[idx], partial[j]});
      }
    }
  });

  DistributedGradients out;
  out.params.assign(model.size(), ParamVector::Zero());
  for (std::size_t r = 0; r < m; ++r) {
    std::int64_t sent = 0;
    for (std::size_t d = 0; d < m; ++d) sent += std::int64_t(outbox[r][d].size());
    out.partials_sent.push_back(sent);
  }
  std::vector<std::vector<ScreenMeanGrad>> mean_grads(m);
  parallel_for(m, [&](std::size_t owner) {
    const auto& rank = f.ranks[owner];
    std::vector<Returned<ScreenGrad>> parts;
    for (std::size_t src = 0; src < m; ++src)
      parts.insert(parts.end(), outbox[src][owner].begin(), outbox[src][owner].end());
    std::vector<ScreenGrad> folded(rank.local.size(), ScreenGrad::Zero());
    fold_returned(parts, [&](std::int32_t i, const ScreenGrad& g) { folded[std::size_t(i)] += g; });
    // `local` is ordered by (view, id), so each Gaussian sums its views in ascending order.
    for (std::size_t i = 0; i < rank.local.size(); ++i) {
      const auto& s = rank.local[i];
      const auto id = std::size_t(s.global_id);
      const int v = rank.local_view[i];
      out.params[id] += parameter_gradient(model[id], *f.cameras[std::size_t(v)], folded[i],
                                           f.settings.sh_degree, s.color_clamped);
      mean_grads[owner].push_back({v, s.global_id, folded[i].segment<2>(screen::kMean)});
    }
  });
  for (auto& g : mean_grads) out.mean2d.insert(out.mean2d.end(), g.begin(), g.end());
  std::sort(out.mean2d.begin(), out.mean2d.end(), [](const auto& a, const auto& b) {
    return a.view != b.view ? a.view < b.view : a.global_id < b.global_id;
  });
  return out;
}

template <typename Scalar>
ViewCoverage distributed_instrumented(const GaussianModel& model, const ShardMap& shards,
                                      const Camera& camera, const RasterSettings& settings) {
  const ViewRequest view{&camera, {}};
  const auto f =
      prepare_frame<Scalar>(model, shards, std::span<const ViewRequest>(&view, 1), settings);
  const auto m = std::size_t(f.m_ranks);

  std::vector<std::vector<std::vector<Returned<SplatCoverage>>>> outbox(
      m, std::vector<std::vector<Returned<SplatCoverage>>>(m));
  parallel_for(m, [&](std::size_t r) {
    const auto& rank = f.ranks[r];
    std::vector<SplatCoverage> partial;
    for (std::size_t k = 0; k < rank.owned_tiles.size(); ++k) {
      const auto& bin = rank.bins[k];
      if (bin.empty()) continue;
      const auto [v, tile] = f.locate(rank.owned_tiles[k]);
      partial.assign(bin.size(), SplatCoverage{});
      instrument_tile<Scalar>(f.layouts[std::size_t(v)], tile,
                              std::span<const ProjectedSplat<Scalar>>(rank.received), bin,
                              settings, partial);
      for (std::size_t j = 0; j < bin.size(); ++j) {
        const auto idx = std::size_t(bin[j]);
        outbox[r][std::size_t(rank.received_from_rank[idx])].push_back(
            {rank.owned_tiles[k], rank.received_from_index[idx], partial[j]});
      }
    }
  });

  std::vector<std::vector<std::pair<std::int64_t, SplatCoverage>>> per_owner(m);
  parallel_for(m, [&](std::size_t owner) {
    const auto& rank = f.ranks[owner];
    std::vector<Returned<SplatCoverage>> parts;
    for (std::size_t src = 0; src < m; ++src)
      parts.insert(parts.end(), outbox[src][owner].begin(), outbox[src][owner].end());
    std::vector<SplatCoverage> folded(rank.local.size());
    fold_returned(parts, [&](std::int32_t i, const SplatCoverage& c) {
      folded[std::size_t(i)].w += c.w;
      folded[std::size_t(i)].a += c.a;
    });
    for (std::size_t i = 0; i < rank.local.size(); ++i)
      per_owner[owner].emplace_back(rank.local[i].global_id, folded[i]);
  });

  std::vector<std::pair<std::int64_t, SplatCoverage>> all;
  for (auto& p : per_owner) all.insert(all.end(), p.begin(), p.end());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  ViewCoverage out;
  for (const auto& [id, c] : all) {
    out.ids.push_back(id);
    out.coverage.push_back(c);
  }
  return out;
}

#define SPLATSHARD_INSTANTIATE(S)                                                               \
  template struct DistributedFrame<S>;                                                          \
  template DistributedFrame<S> distributed_render<S>(const GaussianModel&, const ShardMap&,     \
                                                     std::span<const ViewRequest>,              \
                                                     const RasterSettings&);                    \
  template DistributedFrame<S> distributed_render<S>(const GaussianModel&, const ShardMap&,     \
                                                     const Camera&, const RasterSettings&);     \
  template DistributedGradients distributed_backward<S>(                                        \
      const GaussianModel&, const DistributedFrame<S>&, std::span<const Image<S>>);             \
  template ViewCoverage distributed_instrumented<S>(const GaussianModel&, const ShardMap&,      \
                                                    const Camera&, const RasterSettings&);

SPLATSHARD_INSTANTIATE(float)
SPLATSHARD_INSTANTIATE(double)

#undef SPLATSHARD_INSTANTIATE

}  // namespace splatshard
