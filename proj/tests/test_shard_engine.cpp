#include "support.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/linear_partition.hpp"
#include "splatshard/parallel.hpp"
#include "splatshard/shard_engine.hpp"

#include <doctest.h>

#include <functional>
#include <limits>
#include <map>
#include <set>

using namespace splatshard;
using namespace testsupport;

namespace {

// Smallest achievable largest-run cost over every placement of parts - 1 cuts.
std::int64_t exhaustive_optimum(const std::vector<std::int64_t>& costs, int parts) {
  const std::size_t n = costs.size();
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  std::vector<std::size_t> cuts(std::size_t(parts - 1), 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t k, std::size_t from) {
    if (k == cuts.size()) {
      std::int64_t worst = 0;
      std::size_t lo = 0;
      for (std::size_t c = 0; c <= cuts.size(); ++c) {
        const std::size_t hi = c < cuts.size() ? cuts[c] : n;
        std::int64_t sum = 0;
        for (std::size_t t = lo; t < hi; ++t) sum += costs[t];
        worst = std::max(worst, sum);
        lo = hi;
      }
      best = std::min(best, worst);
      return;
    }
    for (std::size_t c = from; c <= n; ++c) {
      cuts[k] = c;
      rec(k + 1, c);
    }
  };
  rec(0, 0);
  return best;
}

std::vector<ViewRequest> whole_views(const std::vector<Camera>& cams) {
  std::vector<ViewRequest> v;
  for (const auto& c : cams) v.push_back({&c, {}});
  return v;
}

}  // namespace

TEST_CASE("index-parity shard maps") {
  const auto one = build_shard_map(10, 1);
  CHECK(one.per_rank_ids[0].size() == 10);
  const auto four = build_shard_map(10, 4);
  CHECK(four.per_rank_ids[1] == std::vector<std::int64_t>{1, 5, 9});
  for (int n : {0, 1, 7, 100, 1001})
    for (int m = 1; m <= 6; ++m) {
      const auto map = build_shard_map(n, m);
      CHECK_NOTHROW(map.validate(std::size_t(n)));
      const auto sizes = map.shard_sizes();
      const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      CHECK(*hi - *lo <= 1);
    }
}

TEST_CASE("shard map validation") {
  auto map = build_shard_map(6, 2);
  CHECK_THROWS_AS(map.validate(7), ContractViolation);
  map.per_rank_ids[0].push_back(1);  // duplicate of rank 1's id
  CHECK_THROWS_AS(map.validate(6), ContractViolation);
  auto missing = build_shard_map(6, 2);
  missing.per_rank_ids[1].pop_back();
  CHECK_THROWS_AS(missing.validate(6), ContractViolation);
}

TEST_CASE("linear partition examples") {
  const std::vector<std::int64_t> uniform(12, 3);
  CHECK(linear_partition(uniform, 4) == std::vector<std::size_t>{0, 3, 6, 9, 12});
  const std::vector<std::int64_t> c{8, 1, 1, 8};
  const auto b = linear_partition(c, 2);
  CHECK(b == std::vector<std::size_t>{0, 2, 4});
  CHECK(max_run_cost(c, b) == 9);
  CHECK(linear_partition(c, 1) == std::vector<std::size_t>{0, 4});
  const auto assignment = partition_tiles(c, 1);
  for (int o : assignment.owner) CHECK(o == 0);
}

TEST_CASE("linear partition is optimal against exhaustive search") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> len(0, 12), cost(0, 20);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::int64_t> costs(std::size_t(len(rng)));
    for (auto& x : costs) x = cost(rng);
    for (int m = 1; m <= 4; ++m) {
      const auto b = linear_partition(costs, m);
      REQUIRE(b.size() == std::size_t(m) + 1);
      CHECK(b.front() == 0);
      CHECK(b.back() == costs.size());
      CHECK(std::is_sorted(b.begin(), b.end()));
      CHECK(max_run_cost(costs, b) == exhaustive_optimum(costs, m));
    }
  }
}

TEST_CASE("redistribution on skew") {
  bool moved = true;
  const auto balanced = build_shard_map(40, 2);
  CHECK(maybe_redistribute(balanced, 1.1, &moved).owner_of == balanced.owner_of);
  CHECK_FALSE(moved);

  std::vector<int> owners(300, 1);
  for (int i = 0; i < 100; ++i) owners[std::size_t(i)] = 0;
  const auto skewed = ShardMap::from_owners(owners, 2);
  CHECK(shard_skew(skewed) == doctest::Approx(2.0));
  const auto fixed = maybe_redistribute(skewed, 1.5, &moved);
  CHECK(moved);
  CHECK(fixed.shard_sizes() == std::vector<std::size_t>{150, 150});
  CHECK_THROWS_AS(maybe_redistribute(skewed, 1.0), ContractViolation);
}

TEST_CASE("remapped shard maps follow their sources") {
  const auto map = build_shard_map(5, 2);
  IdRemap r = IdRemap::from_keep_mask({true, false, true, true, false});
  r.append(3);
  const auto next = remap_shard_map(map, r);
  CHECK(next.owner_of == std::vector<int>{0, 0, 1, 1});
  CHECK_NOTHROW(next.validate(4));
}

TEST_CASE("distributed render and backward are bit-identical across rank counts") {
  const auto fx = small_fixture(1, 120, 3, 64);
  const auto& model = fx.ground_truth;
  const auto views = whole_views(fx.scene.cameras);
  RasterSettings st;
  st.sh_degree = 0;

  std::vector<Image<float>> grads;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(-1, 1);
  for (const auto& c : fx.scene.cameras) {
    Image<float> g(c.width, c.height);
    for (Eigen::Index k = 0; k < g.rgb.size(); ++k) g.rgb.data()[k] = u(rng);
    grads.push_back(g);
  }

  const auto ref = distributed_render<float>(model, build_shard_map(std::int64_t(model.size()), 1), views, st);
  const auto ref_grad = distributed_backward<float>(model, ref, grads);
  // Single-rank engine equals the plain renderer.
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto splats = project<float>(model, fx.scene.cameras[v], 0);
    const auto plain = render_forward<float>(splats, 64, 64, st);
    CHECK((plain.image.rgb == ref.images[v].rgb).all());
    CHECK(plain.transmittance == ref.transmittance[v]);
  }

  for (int threads : {1, 4}) {
    set_thread_count(threads);
    for (int m = 1; m <= 4; ++m) {
      const auto shards = build_shard_map(std::int64_t(model.size()), m);
      const auto f = distributed_render<float>(model, shards, views, st);
      for (std::size_t v = 0; v < views.size(); ++v) {
        CHECK((f.images[v].rgb == ref.images[v].rgb).all());
        CHECK(f.transmittance[v] == ref.transmittance[v]);
      }
      const auto g = distributed_backward<float>(model, f, grads);
      for (std::size_t i = 0; i < model.size(); ++i) CHECK(g.params[i] == ref_grad.params[i]);
      REQUIRE(g.mean2d.size() == ref_grad.mean2d.size());
      for (std::size_t k = 0; k < g.mean2d.size(); ++k) CHECK(g.mean2d[k].grad == ref_grad.mean2d[k].grad);
      // Exchange volume: distinct receiving ranks per splat, bounded by M times the splats.
      std::int64_t projected = 0;
      for (auto p : f.stats.projected_per_rank) projected += p;
      CHECK(f.stats.volume <= std::int64_t(m) * projected);
      CHECK(f.stats.volume >= projected);
    }
  }
  set_thread_count(0);
}

TEST_CASE("routing delivers every splat and tile overlap exactly once") {
  const auto fx = small_fixture(2, 80, 2, 64);
  const auto views = whole_views(fx.scene.cameras);
  for (int m = 2; m <= 4; ++m) {
    const auto shards = build_shard_map(std::int64_t(fx.ground_truth.size()), m);
    const auto f = distributed_render<float>(fx.ground_truth, shards, views);
    // Expected (tile -> set of (src rank, src index)) from the senders' own footprints.
    std::map<int, std::multiset<std::pair<int, int>>> expected;
    std::int64_t volume = 0;
    for (int src = 0; src < m; ++src) {
      const auto& rank = f.ranks[std::size_t(src)];
      for (std::size_t i = 0; i < rank.local.size(); ++i) {
        const int v = rank.local_view[i];
        const auto layout = f.layouts[std::size_t(v)];
        const TileRange r = tile_footprint(rank.local[i], layout);
        std::set<int> dests;
        for (int ty = r.y0; ty < r.y1; ++ty)
          for (int tx = r.x0; tx < r.x1; ++tx) {
            const int t = f.tile_offset[std::size_t(v)] + ty * layout.tiles_x + tx;
            expected[t].insert({src, int(i)});
            dests.insert(f.assignment.owner[std::size_t(t)]);
          }
        volume += std::int64_t(dests.size());
      }
    }
    CHECK(f.stats.volume == volume);
    std::map<int, std::multiset<std::pair<int, int>>> got;
    for (int dst = 0; dst < m; ++dst) {
      const auto& rank = f.ranks[std::size_t(dst)];
      for (std::size_t k = 0; k < rank.owned_tiles.size(); ++k)
        for (std::int32_t idx : rank.bins[k])
          got[rank.owned_tiles[k]].insert({rank.received_from_rank[std::size_t(idx)],
                                           rank.received_from_index[std::size_t(idx)]});
    }
    for (auto it = expected.begin(); it != expected.end();) it = it->second.empty() ? expected.erase(it) : std::next(it);
    CHECK(got == expected);
  }
}

TEST_CASE("a splat seen by two ranks gets both partials") {
  Camera cam = simple_camera(0, 64, 32);
  GaussianModel model(1);
  model[0].rotation() << 1, 0, 0, 0;
  model[0].log_scale().setConstant(std::log(0.3));
  model[0].opacity_logit() = 1;
  const auto shards = build_shard_map(1, 2);
  const auto f = distributed_render<double>(model, shards, cam);
  CHECK(f.ranks[0].received.size() == 1);
  CHECK(f.ranks[1].received.size() == 1);
  std::vector<Image<double>> grads{Image<double>(64, 32)};
  grads[0].rgb.setConstant(0.25);
  const auto g = distributed_backward<double>(model, f, grads);
  CHECK(g.partials_sent[0] > 0);
  CHECK(g.partials_sent[1] > 0);
  const auto single = distributed_render<double>(model, build_shard_map(1, 1), cam);
  const auto gs = distributed_backward<double>(model, single, grads);
  CHECK(g.params[0] == gs.params[0]);
  CHECK_FALSE(g.params[0].isZero(0));

  grads[0].rgb.setZero();
  const auto zero = distributed_backward<double>(model, f, grads);
  CHECK(zero.params[0].isZero(0));
}

TEST_CASE("ownership changes never change the render") {
  const auto fx = small_fixture(3, 90, 2, 48);
  const auto views = whole_views(fx.scene.cameras);
  std::vector<int> owners(fx.ground_truth.size(), 1);
  for (std::size_t i = 0; i < owners.size() / 4; ++i) owners[i] = 0;
  const auto skewed = ShardMap::from_owners(owners, 2);
  const auto balanced = maybe_redistribute(skewed, 1.25);
  const auto a = distributed_render<float>(fx.ground_truth, skewed, views);
  const auto b = distributed_render<float>(fx.ground_truth, balanced, views);
  for (std::size_t v = 0; v < views.size(); ++v) CHECK((a.images[v].rgb == b.images[v].rgb).all());
}

TEST_CASE("active sets restrict what each rank renders") {
  const auto fx = small_fixture(4, 30, 2, 32);
  const auto shards = build_shard_map(30, 2);
  ViewRequest req{&fx.scene.cameras[0], {{0, 2, 4}, {1, 3}}};
  const auto f = distributed_render<float>(fx.ground_truth, shards, std::span<const ViewRequest>(&req, 1));
  const auto plain = render_forward<float>(project<float>(fx.ground_truth, std::vector<std::int64_t>{0, 1, 2, 3, 4}, fx.scene.cameras[0]), 32, 32);
  CHECK((f.images[0].rgb == plain.image.rgb).all());

  ViewRequest wrong{&fx.scene.cameras[0], {{1}, {}}};
  CHECK_THROWS_AS(distributed_render<float>(fx.ground_truth, shards, std::span<const ViewRequest>(&wrong, 1)),
                  ContractViolation);
  ViewRequest short_list{&fx.scene.cameras[0], {{0}}};
  CHECK_THROWS_AS(distributed_render<float>(fx.ground_truth, shards, std::span<const ViewRequest>(&short_list, 1)),
                  ContractViolation);
  CHECK_THROWS_AS(distributed_render<float>(fx.ground_truth, build_shard_map(29, 2), fx.scene.cameras[0]),
                  ContractViolation);
}

TEST_CASE("distributed coverage equals the single-image instrumented pass") {
  const auto fx = small_fixture(5, 70, 2, 48);
  for (const auto& cam : fx.scene.cameras) {
    const auto splats = project<float>(fx.ground_truth, cam, kMaxShDegree);
    const auto ref = instrumented_pass<float>(splats, cam.width, cam.height);
    for (int m = 1; m <= 3; ++m) {
      const auto cov = distributed_instrumented<float>(fx.ground_truth, build_shard_map(70, m), cam);
      REQUIRE(cov.ids.size() == splats.size());
      for (std::size_t k = 0; k < splats.size(); ++k) {
        CHECK(cov.ids[k] == splats[k].global_id);
        CHECK(cov.coverage[k].w == ref[k].w);
        CHECK(cov.coverage[k].a == ref[k].a);
      }
    }
  }
}
