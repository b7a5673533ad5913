#include "splatshard/importance.hpp"

#include "splatshard/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace splatshard {

CullMatrix::CullMatrix(std::size_t rows, std::size_t cols, bool value)
    : rows_(rows), cols_(cols), words_per_column_((rows + 63) / 64) {
  words_.assign(words_per_column_ * cols_, 0);
  if (value)
    for (std::size_t c = 0; c < cols_; ++c)
      for (std::size_t r = 0; r < rows_; ++r) set(r, c, true);
}

bool CullMatrix::get(std::size_t row, std::size_t col) const {
  return (words_[col * words_per_column_ + row / 64] >> (row % 64)) & 1u;
}

void CullMatrix::set(std::size_t row, std::size_t col, bool value) {
  auto& word = words_[col * words_per_column_ + row / 64];
  const std::uint64_t bit = std::uint64_t(1) << (row % 64);
  word = value ? (word | bit) : (word & ~bit);
}

std::span<const std::uint64_t> CullMatrix::column_words(std::size_t col) const {
  return {words_.data() + col * words_per_column_, words_per_column_};
}

std::vector<bool> CullMatrix::column(std::size_t col) const {
  std::vector<bool> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = get(r, col);
  return out;
}

std::size_t CullMatrix::count_column(std::size_t col) const {
  std::size_t n = 0;
  for (std::uint64_t w : column_words(col)) n += std::size_t(std::popcount(w));
  return n;
}

CullMatrix CullMatrix::remap(const IdRemap& remap) const {
  require(remap.old_size() == rows_, "cull matrix remap: row count mismatch");
  CullMatrix out(remap.new_size(), cols_);
  for (std::size_t c = 0; c < cols_; ++c)
    for (std::size_t r = 0; r < out.rows_; ++r)
      if (get(std::size_t(remap.source[r]), c)) out.set(r, c, true);
  return out;
}

std::vector<std::uint8_t> CullMatrix::to_blob() const {
  std::vector<std::uint8_t> out;
  auto put32 = [&](std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(std::uint8_t(v >> (8 * b)));
  };
  put32(std::uint32_t(rows_));
  put32(std::uint32_t(cols_));
  const std::size_t bytes_per_column = (rows_ + 7) / 8;
  for (std::size_t c = 0; c < cols_; ++c) {
    const auto words = column_words(c);
    for (std::size_t b = 0; b < bytes_per_column; ++b)
      out.push_back(std::uint8_t(words[b / 8] >> (8 * (b % 8))));
  }
  return out;
}

CullMatrix CullMatrix::from_blob(std::span<const std::uint8_t> blob) {
  require(blob.size() >= 8, "cull blob shorter than its header");
  auto get32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t(blob[at + std::size_t(b)]) << (8 * b);
    return v;
  };
  CullMatrix m(get32(0), get32(4));
  const std::size_t bytes_per_column = (m.rows_ + 7) / 8;
  require(blob.size() == 8 + bytes_per_column * m.cols_, "cull blob size does not match header");
  for (std::size_t c = 0; c < m.cols_; ++c)
    for (std::size_t r = 0; r < m.rows_; ++r)
      if ((blob[8 + c * bytes_per_column + r / 8] >> (r % 8)) & 1u) m.set(r, c, true);
  return m;
}

int ImportanceReport::column_of(int camera_id) const {
  const auto it = std::find(view_camera_ids.begin(), view_camera_ids.end(), camera_id);
  return it == view_camera_ids.end() ? -1 : int(it - view_camera_ids.begin());
}

ImportanceReport ImportanceReport::remap(const IdRemap& r) const {
  ImportanceReport out;
  out.s = apply_remap(s, r);
  out.c_rad = apply_remap(c_rad, r);
  out.c_vis = apply_remap(c_vis, r);
  out.phi = apply_remap(phi, r);
  out.cull = cull.remap(r);
  out.view_camera_ids = view_camera_ids;
  out.pass_step = pass_step;
  return out;
}

std::vector<bool> contribution_prefix(std::span<const double> w,
                                      std::span<const std::int64_t> ids, double mass) {
  require(w.size() == ids.size(), "contribution_prefix: size mismatch");
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return w[a] != w[b] ? w[a] > w[b] : ids[a] < ids[b];
  });
  double total = 0;
  for (std::size_t k : order) total += w[k];
  std::vector<bool> in(w.size(), false);
  if (!(total > 0)) return in;
  const double target = mass * total;
  double sum = 0;
  for (std::size_t k : order) {
    in[k] = true;
    sum += w[k];
    if (sum >= target) break;
  }
  return in;
}

template <typename Scalar>
ImportanceReport scoring_pass(const GaussianModel& model, std::span<const Camera> cameras,
                              const ShardMap& shards, std::int64_t step) {
  const std::size_t n = model.size();
  std::vector<const Camera*> views;
  for (const auto& cam : cameras)
    if (cam.role == CameraRole::Train) views.push_back(&cam);
  require(!views.empty(), "scoring_pass: scene has no train camera");

  ImportanceReport report;
  report.pass_step = step;
  report.s.assign(n, 0.0);
  report.c_rad.assign(n, 0);
  report.c_vis.assign(n, 0);
  report.cull = CullMatrix(n, views.size(), true);
  RasterSettings settings;
  settings.sh_degree = 0;  // colour is never shaded in this sweep
  for (std::size_t v = 0; v < views.size(); ++v) {
    report.view_camera_ids.push_back(views[v]->id);
    const ViewCoverage cov = distributed_instrumented<Scalar>(model, shards, *views[v], settings);
    std::vector<double> w(cov.ids.size());
    for (std::size_t k = 0; k < cov.ids.size(); ++k) {
      const auto id = std::size_t(cov.ids[k]);
      const auto& c = cov.coverage[k];
      w[k] = c.w;
      report.c_rad[id] += 1;
      if (c.a > 0) report.s[id] += c.w / (double(c.a) + kImportanceEpsilon);
    }
    const auto visible = contribution_prefix(w, cov.ids, kContributionMass);
    for (std::size_t k = 0; k < cov.ids.size(); ++k) {
      if (!visible[k]) continue;
      const auto id = std::size_t(cov.ids[k]);
      report.c_vis[id] += 1;
      report.cull.set(id, v, false);
    }
  }
  report.phi.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    report.phi[i] = double(report.c_vis[i]) / (double(report.c_rad[i]) + kImportanceEpsilon);
  return report;
}

template <typename Scalar>
ImportanceReport scoring_pass(const Scene& scene, const ShardMap& shards, std::int64_t step) {
  return scoring_pass<Scalar>(scene.gaussians, scene.cameras, shards, step);
}

template ImportanceReport scoring_pass<float>(const GaussianModel&, std::span<const Camera>,
                                              const ShardMap&, std::int64_t);
template ImportanceReport scoring_pass<double>(const GaussianModel&, std::span<const Camera>,
                                               const ShardMap&, std::int64_t);
template ImportanceReport scoring_pass<float>(const Scene&, const ShardMap&, std::int64_t);
template ImportanceReport scoring_pass<double>(const Scene&, const ShardMap&, std::int64_t);

std::vector<bool> stochastic_keep_mask(std::span<const double> scores, double keep_fraction,
                                       std::uint64_t seed) {
  require(keep_fraction > 0 && keep_fraction <= 1,
          "prune_stochastic: keep_fraction must lie in (0, 1]");
  const std::size_t n = scores.size();
  const auto keep = std::size_t(std::llround(keep_fraction * double(n)));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  struct Key {
    double primary, secondary;
    std::size_t id;
  };
  std::vector<Key> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = 1.0 - uniform(rng);  // (0, 1]
    const double key = scores[i] > 0 ? std::log(u) / scores[i]
                                     : -std::numeric_limits<double>::infinity();
    keys[i] = {key, u, i};
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.primary != b.primary) return a.primary > b.primary;
    if (a.secondary != b.secondary) return a.secondary > b.secondary;
    return a.id < b.id;
  });
  std::vector<bool> mask(n, false);
  for (std::size_t k = 0; k < keep && k < n; ++k) mask[keys[k].id] = true;
  return mask;
}

std::vector<bool> mass_cut_keep_mask(std::span<const double> scores, double target_mass,
                                     bool* all_zero) {
  require(target_mass > 0 && target_mass <= 1, "prune_mass_cut: target_mass must lie in (0, 1]");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  });
  std::vector<double> prefix(n);
  double sum = 0;
  for (std::size_t k = 0; k < n; ++k) prefix[k] = sum += scores[order[k]];
  const double total = n == 0 ? 0.0 : prefix.back();
  std::vector<bool> mask(n, false);
  if (all_zero) *all_zero = n > 0 && !(total > 0);
  if (n == 0) return mask;
  if (!(total > 0)) {
    mask[order.front()] = true;
    return mask;
  }
  const double threshold = target_mass * total;
  for (std::size_t k = 0; k < n; ++k) {
    mask[order[k]] = true;
    if (prefix[k] >= threshold) break;
  }
  return mask;
}

std::string report_csv(const ImportanceReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "global_id,s,c_rad,c_vis,phi\n";
  for (std::size_t i = 0; i < report.size(); ++i)
    out << i << ',' << report.s[i] << ',' << report.c_rad[i] << ',' << report.c_vis[i] << ','
        << report.phi[i] << '\n';
  return out.str();
}

GaussianModel apply_keep(const GaussianModel& model, const IdRemap& remap) {
  return apply_remap(model, remap);
}

PruneResult prune_stochastic(const GaussianModel& model, const ImportanceReport& report,
                             double keep_fraction, std::uint64_t seed) {
  require(report.size() == model.size(), "prune_stochastic: report does not match the model");
  PruneResult out;
  out.remap = IdRemap::from_keep_mask(stochastic_keep_mask(report.s, keep_fraction, seed));
  out.model = apply_keep(model, out.remap);
  return out;
}

PruneResult prune_mass_cut(const GaussianModel& model, const ImportanceReport& report,
                           double target_mass) {
  require(report.size() == model.size(), "prune_mass_cut: report does not match the model");
  PruneResult out;
  out.remap = IdRemap::from_keep_mask(mass_cut_keep_mask(report.s, target_mass,
                                                         &out.all_zero_scores));
  out.model = apply_keep(model, out.remap);
  return out;
}

}  // namespace splatshard
