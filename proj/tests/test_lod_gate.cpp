#include "support.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/lod_gate.hpp"

#include <doctest.h>

#include <set>

using namespace splatshard;
using namespace testsupport;

namespace {

LodConfig open_gate(double d0, int levels = 4) {
  LodConfig cfg;
  cfg.d0 = d0;
  cfg.levels = levels;
  cfg.unlock_schedule = {1, 2, 3, 4};
  cfg.gate_enabled_after = 0;
  return cfg;
}

// Round half to even, written out by hand.
double half_even(double x) {
  const double fl = std::floor(x);
  const double frac = x - fl;
  if (frac < 0.5) return fl;
  if (frac > 0.5) return fl + 1;
  return std::fmod(fl, 2.0) == 0 ? fl : fl + 1;
}

int oracle_level(double d, double d0, int lmax) {
  return int(std::clamp(half_even(std::log2(d0 / d)), 0.0, double(lmax)));
}

GaussianModel ring_at(const Eigen::Vector3d& centre, double radius, std::size_t n) {
  GaussianModel m;
  for (std::size_t i = 0; i < n; ++i) {
    Gaussian g;
    g.rotation() << 1, 0, 0, 0;
    const double a = 2 * std::numbers::pi * double(i) / double(n);
    g.position() = centre + radius * Eigen::Vector3d(std::cos(a), std::sin(a), 0);
    m.push_back(g);
  }
  return m;
}

}  // namespace

TEST_CASE("level_at closed forms") {
  LodConfig cfg = open_gate(3.0);
  const std::int64_t t = 100;
  CHECK(level_at(3.0, t, cfg) == 0);
  CHECK(level_at(1.5, t, cfg) == 1);
  CHECK(level_at(12.0, t, cfg) == 0);
  CHECK(level_at(3.0 / 8, t, cfg) == 3);
  CHECK(level_at(3.0 / 64, t, cfg) == 3);  // clamped to K-1
  CHECK_THROWS_AS(level_at(0.0, t, cfg), ContractViolation);
  CHECK_THROWS_AS(level_at(-1.0, t, cfg), ContractViolation);

  cfg.rounding = LevelRounding::Floor;
  CHECK(level_at(1.0, t, cfg) == 1);  // log2 3 = 1.58
  cfg.rounding = LevelRounding::NearestEven;
  CHECK(level_at(1.0, t, cfg) == 2);
}

TEST_CASE("unlock schedule caps the level") {
  LodConfig cfg;
  cfg.d0 = 1;
  cfg.unlock_schedule = {2000, 4000, 8000, 16000};
  CHECK(max_level(0, cfg) == 0);
  CHECK(max_level(1999, cfg) == 0);
  CHECK(max_level(2000, cfg) == 1);
  CHECK(max_level(4000, cfg) == 2);
  CHECK(max_level(8000, cfg) == 3);
  CHECK(max_level(100000, cfg) == 3);  // K-1 even with a fourth unlock
  CHECK(level_at(1.0 / 16, 1000, cfg) == 0);
  CHECK(level_at(1.0 / 16, 4500, cfg) == 2);
}

TEST_CASE("level_at is non-increasing in distance and non-decreasing in time") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(0.01, 50), step(0, 20000);
  LodConfig cfg;
  cfg.d0 = 4;
  cfg.levels = 6;
  cfg.unlock_schedule = {1000, 3000, 6000, 9000, 12000};
  for (int trial = 0; trial < 2000; ++trial) {
    double d1 = dist(rng), d2 = dist(rng);
    if (d1 > d2) std::swap(d1, d2);
    auto t1 = std::int64_t(step(rng)), t2 = std::int64_t(step(rng));
    if (t1 > t2) std::swap(t1, t2);
    CHECK(level_at(d1, t1, cfg) >= level_at(d2, t1, cfg));
    CHECK(level_at(d1, t1, cfg) <= level_at(d1, t2, cfg));
    CHECK(level_at(d1, t2, cfg) == oracle_level(d1, cfg.d0, max_level(t2, cfg)));
  }
}

TEST_CASE("heritage examples") {
  CHECK(apply_heritage(3, Heritage::Clone, 5) == 3);
  CHECK(apply_heritage(3, Heritage::Split, 5) == 4);
  CHECK(apply_heritage(3, Heritage::Split, 4) == 3);
  CHECK(apply_heritage(0, Heritage::Clone, 1) == 0);
  CHECK_THROWS_AS(apply_heritage(4, Heritage::Clone, 4), ContractViolation);
  CHECK_THROWS_AS(apply_heritage(-1, Heritage::Split, 4), ContractViolation);
}

TEST_CASE("heritage keeps random lineages in range") {
  std::mt19937_64 rng(3);
  for (int seq = 0; seq < 1000; ++seq) {
    const int levels = 1 + int(rng() % 6);
    int level = int(rng() % std::uint64_t(levels));
    const int length = 1 + int(rng() % 40);
    for (int k = 0; k < length; ++k) {
      const bool split = rng() % 2;
      const int next = apply_heritage(level, split ? Heritage::Split : Heritage::Clone, levels);
      CHECK(next == (split ? std::min(level + 1, levels - 1) : level));
      CHECK(next >= 0);
      CHECK(next < levels);
      level = next;
    }
  }
}

TEST_CASE("gate before its window and with all coarse labels returns the shard") {
  auto model = ring_at(Eigen::Vector3d::Zero(), 0.5, 20);
  const Camera cam = simple_camera(0, 32, 32, 4.0);
  const std::vector<std::int64_t> shard = iota_ids(model.size());

  LodConfig cfg = open_gate(4.0);
  cfg.gate_enabled_after = 500;
  for (auto& g : model) g.lod_level = 3;
  GateResult early = lod_filter(model, shard, cam, 499, cfg);
  CHECK_FALSE(early.gate_active);
  CHECK(early.ids == shard);

  for (auto& g : model) g.lod_level = 0;
  GateResult all = lod_filter(model, shard, cam, 500, cfg);
  CHECK(all.gate_active);
  CHECK(all.fell_back);
  CHECK(all.passed == shard.size());
  CHECK(all.ids == shard);

  GateResult none = lod_filter(model, {}, cam, 500, cfg);
  CHECK(none.ids.empty());
}

TEST_CASE("distant camera excludes fine levels") {
  auto model = ring_at(Eigen::Vector3d::Zero(), 0.01, 10);
  for (std::size_t i = 0; i < model.size(); ++i) model[i].lod_level = i % 2 ? 2 : 0;
  const Camera cam = simple_camera(0, 32, 32, 8.0);
  const double d = cam.center().norm();
  const LodConfig cfg = open_gate(d / 4);
  const auto r = lod_filter(model, iota_ids(model.size()), cam, 10, cfg);
  CHECK(r.gate_active);
  CHECK_FALSE(r.fell_back);
  CHECK(r.ids == std::vector<std::int64_t>{0, 2, 4, 6, 8});
  CHECK(r.passed == 5);
}

TEST_CASE("mixed-level fixture matches the per-Gaussian predicate") {
  auto fx = small_fixture(5, 120, 4, 32);
  std::mt19937_64 rng(8);
  for (auto& g : fx.scene.gaussians) g.lod_level = int(rng() % 4);
  for (const Camera& cam : fx.scene.cameras) {
    LodConfig cfg = open_gate(fx.scene.d0);
    cfg.fallback_ratio = 1.0;
    for (std::int64_t t : {1, 2, 3, 10}) {
      const auto shard = iota_ids(fx.scene.gaussians.size());
      std::vector<std::int64_t> want;
      for (std::int64_t id : shard) {
        const Gaussian& g = fx.scene.gaussians[std::size_t(id)];
        const double d = (g.position() - cam.center()).norm();
        if (g.lod_level <= oracle_level(d, cfg.d0, std::min<int>(int(t), 3))) want.push_back(id);
      }
      const auto got = lod_filter(fx.scene.gaussians, shard, cam, t, cfg);
      CHECK(got.ids == want);
      cfg.fallback_ratio = 0.95;
      const auto fb = lod_filter(fx.scene.gaussians, shard, cam, t, cfg);
      if (double(want.size()) / double(shard.size()) > 0.95)
        CHECK(fb.ids == shard);
      else
        CHECK(fb.ids == want);
      cfg.fallback_ratio = 1.0;
    }
  }
}

TEST_CASE("cull removes flagged ids") {
  CullMatrix cull(5, 2);
  cull.set(2, 0, true);
  const std::vector<std::int64_t> ids{1, 2, 3};
  CHECK(apply_cull(ids, cull, 0, 5) == std::vector<std::int64_t>{1, 3});
  CHECK(apply_cull(ids, cull, 1, 5) == ids);
  CHECK_THROWS_AS(apply_cull(ids, cull, 0, 6), ContractViolation);
  CHECK_THROWS_AS(apply_cull(ids, cull, 2, 5), ContractViolation);
}

TEST_CASE("active set with no report and a closed gate is the shard") {
  const auto fx = small_fixture(2, 30, 3, 24);
  LodConfig cfg = open_gate(fx.scene.d0);
  cfg.gate_enabled_after = 1000;
  const std::vector<std::int64_t> shard{0, 2, 4, 6, 8};
  CHECK(active_set(fx.scene.gaussians, shard, fx.scene.cameras[0], 10, cfg, nullptr, -1) == shard);
  CullMatrix cull(fx.scene.gaussians.size(), 3);
  cull.set(4, 1, true);
  CHECK(active_set(fx.scene.gaussians, shard, fx.scene.cameras[0], 10, cfg, &cull, -1) == shard);
  CHECK(active_set(fx.scene.gaussians, shard, fx.scene.cameras[0], 10, cfg, &cull, 1) ==
        std::vector<std::int64_t>{0, 2, 6, 8});
}

TEST_CASE("gate and cull commute and only ever shrink the set") {
  auto fx = small_fixture(9, 150, 5, 32);
  std::mt19937_64 rng(21);
  const std::size_t n = fx.scene.gaussians.size();
  for (int trial = 0; trial < 50; ++trial) {
    for (auto& g : fx.scene.gaussians) g.lod_level = int(rng() % 4);
    CullMatrix cull(n, fx.scene.cameras.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cull.cols(); ++c) cull.set(i, c, rng() % 3 == 0);
    std::vector<std::int64_t> shard;
    for (std::size_t i = 0; i < n; ++i)
      if (rng() % 2) shard.push_back(std::int64_t(i));
    LodConfig cfg = open_gate(fx.scene.d0);
    cfg.fallback_ratio = 1.0;
    const int col = int(rng() % cull.cols());
    const Camera& cam = fx.scene.cameras[std::size_t(col)];

    const auto gated = lod_filter(fx.scene.gaussians, shard, cam, 10, cfg).ids;
    const auto gate_then_cull = apply_cull(gated, cull, col, n);
    const auto culled = apply_cull(shard, cull, col, n);
    const auto cull_then_gate = lod_filter(fx.scene.gaussians, culled, cam, 10, cfg).ids;
    CHECK(gate_then_cull == cull_then_gate);
    CHECK(active_set(fx.scene.gaussians, shard, cam, 10, cfg, &cull, col) == gate_then_cull);

    cfg.fallback_ratio = 0.95;
    const auto g95 = lod_filter(fx.scene.gaussians, shard, cam, 10, cfg).ids;
    const auto a95 = active_set(fx.scene.gaussians, shard, cam, 10, cfg, &cull, col);
    CHECK(a95.size() <= g95.size());
    CHECK(g95.size() <= shard.size());
    const std::set<std::int64_t> universe(shard.begin(), shard.end());
    for (auto id : a95) CHECK(universe.count(id) == 1);
  }
}

TEST_CASE("config validation") {
  LodConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.f = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = LodConfig{};
  cfg.levels = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = LodConfig{};
  cfg.unlock_schedule = {10, 10};
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
}
