#include "splatshard/density_control.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/lod_gate.hpp"
#include "splatshard/seeding.hpp"

#include <algorithm>
#include <cmath>

namespace splatshard {

void DensifyStats::reset(std::size_t n) {
  grad_accum.assign(n, 0.0);
  count.assign(n, 0);
  phi.assign(n, 1.0);
}

void DensifyStats::accumulate(std::span<const std::int64_t> ids, std::span<const double> norms) {
  require(ids.size() == norms.size(), "DensifyStats::accumulate: size mismatch");
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto i = std::size_t(ids[k]);
    require(i < size(), "DensifyStats::accumulate: id out of range");
    grad_accum[i] += phi[i] * norms[k];
    count[i] += 1;
  }
}

std::pair<Gaussian, Gaussian> split_children(const Gaussian& parent, double split_factor,
                                             int lod_levels, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Matrix3d r = rotation_from_quaternion<double>(parent.rotation());
  const Eigen::Vector3d scale = parent.scale();
  const double log_factor = std::log(split_factor);
  auto child = [&] {
    Gaussian c = parent;
    Eigen::Vector3d z;
    for (int k = 0; k < 3; ++k) z[k] = normal(rng);
    c.position() = parent.position() + r * scale.cwiseProduct(z);
    c.log_scale().array() -= log_factor;
    c.lod_level = apply_heritage(parent.lod_level, Heritage::Split, lod_levels);
    return c;
  };
  Gaussian a = child();
  Gaussian b = child();
  return {a, b};
}

DensifyOutcome apply_density_control(const GaussianModel& model, const DensifyStats& stats,
                                     const ShardMap& shards, const DensifyConfig& cfg,
                                     std::int64_t step, double scene_extent, int lod_levels,
                                     std::uint64_t seed) {
  require(cfg.scheduled(step), "apply_density_control called off schedule");
  require(stats.size() == model.size(), "apply_density_control: stale statistics");
  const std::size_t n = model.size();
  const double boundary = scene_extent * cfg.scale_fraction;

  std::vector<bool> clone(n, false), split(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (stats.mean(i) < cfg.grad_threshold) continue;
    if (model[i].scale().maxCoeff() < boundary)
      clone[i] = true;
    else
      split[i] = true;
  }

  // Candidate population: untouched and cloned originals, then clones, then split children.
  GaussianModel candidates;
  std::vector<std::int64_t> source;
  std::vector<bool> fresh;
  candidates.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (split[i]) continue;
    candidates.push_back(model[i]);
    source.push_back(std::int64_t(i));
    fresh.push_back(false);
  }
  DensifyOutcome out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!clone[i]) continue;
    Gaussian c = model[i];
    c.lod_level = apply_heritage(model[i].lod_level, Heritage::Clone, lod_levels);
    candidates.push_back(c);
    source.push_back(std::int64_t(i));
    fresh.push_back(true);
    ++out.clones;
  }
  std::mt19937_64 rng(derive_seed(seed, stream::kSplit, std::uint64_t(step)));
  for (std::size_t i = 0; i < n; ++i) {
    if (!split[i]) continue;
    auto [a, b] = split_children(model[i], cfg.split_factor, lod_levels, rng);
    for (Gaussian* c : {&a, &b}) {
      candidates.push_back(*c);
      source.push_back(std::int64_t(i));
      fresh.push_back(true);
    }
    ++out.splits;
  }

  out.remap.old_to_new.assign(n, -1);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (candidates[k].opacity() < cfg.min_opacity) {
      ++out.prunes;
      continue;
    }
    if (!fresh[k]) out.remap.old_to_new[std::size_t(source[k])] = std::int64_t(out.model.size());
    out.model.push_back(candidates[k]);
    out.remap.source.push_back(source[k]);
    out.remap.fresh.push_back(fresh[k]);
  }
  out.shards = maybe_redistribute(remap_shard_map(shards, out.remap), cfg.skew_threshold,
                                  &out.redistributed);
  return out;
}

void reset_opacity(GaussianModel& model) {
  const double cap = inverse_sigmoid(0.01);
  for (auto& g : model) g.opacity_logit() = std::min(g.opacity_logit(), cap);
}

}  // namespace splatshard
