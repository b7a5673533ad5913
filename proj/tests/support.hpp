#pragma once

// Independent reference implementations shared by the test suites. Nothing here calls the
// rasterizer's internals; each oracle re-derives its quantity from the projected splat fields.

#include "splatshard/fixture.hpp"
#include "splatshard/rasterizer.hpp"
#include "splatshard/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace testsupport {

using namespace splatshard;

// Alpha of one splat at pixel (x, y) in double, or 0 when the pixel does not qualify.
inline double reference_alpha(const ProjectedSplat<double>& s, int x, int y, double* gauss = nullptr) {
  const double dx = x - s.mean2d.x(), dy = y - s.mean2d.y();
  if (std::abs(dx) > s.radius || std::abs(dy) > s.radius) return 0;
  const double q = s.conic[0] * dx * dx + 2 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
  if (q < 0) return 0;
  const double g = std::exp(-0.5 * q);
  if (gauss) *gauss = g;
  const double a = std::min(0.99, s.opacity * g);
  return a >= 1.0 / 255.0 ? a : 0.0;
}

inline std::vector<std::size_t> front_to_back(const std::vector<ProjectedSplat<double>>& splats) {
  std::vector<std::size_t> order(splats.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
    return splats[a].global_id < splats[b].global_id;
  });
  return order;
}

struct BruteFrame {
  Image<double> image;
  std::vector<double> transmittance;
  std::vector<double> w;        // per splat (input order)
  std::vector<std::int64_t> a;  // per splat
  std::vector<double> mass;     // per pixel: sum of alpha * T
};

// Per-pixel compositing over the whole splat list, no tiles.
inline BruteFrame brute_composite(const std::vector<ProjectedSplat<double>>& splats, int width,
                                  int height, bool early_termination) {
  BruteFrame f;
  f.image = Image<double>(width, height);
  f.transmittance.assign(std::size_t(width) * height, 1.0);
  f.mass.assign(std::size_t(width) * height, 0.0);
  f.w.assign(splats.size(), 0.0);
  f.a.assign(splats.size(), 0);
  const auto order = front_to_back(splats);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double t = 1, r = 0, g = 0, b = 0, m = 0;
      for (std::size_t i : order) {
        const double alpha = reference_alpha(splats[i], x, y);
        if (alpha == 0) continue;
        r += splats[i].color[0] * alpha * t;
        g += splats[i].color[1] * alpha * t;
        b += splats[i].color[2] * alpha * t;
        m += alpha * t;
        f.w[i] += alpha * t;
        f.a[i] += 1;
        t *= 1 - alpha;
        if (early_termination && t < 1e-4) break;
      }
      const std::size_t p = std::size_t(y) * width + x;
      f.image.rgb(Eigen::Index(p), 0) = r;
      f.image.rgb(Eigen::Index(p), 1) = g;
      f.image.rgb(Eigen::Index(p), 2) = b;
      f.transmittance[p] = t;
      f.mass[p] = m;
    }
  }
  return f;
}

inline FixtureScene small_fixture(std::uint64_t seed = 1, int gaussians = 40, int cameras = 6,
                                  int size = 48) {
  return gen_fixture_scene(seed, gaussians, cameras, size, size);
}

// Random Gaussian with all parameter groups populated, placed in front of `cam`-style views.
inline Gaussian random_gaussian(std::mt19937_64& rng, double spread = 0.4) {
  std::uniform_real_distribution<double> u(-1, 1);
  Gaussian g;
  g.position() = Eigen::Vector3d(u(rng), u(rng), u(rng)) * spread;
  g.rotation() = Eigen::Vector4d(u(rng), u(rng), u(rng), u(rng)).normalized();
  for (int k = 0; k < 3; ++k) g.log_scale()[k] = std::log(0.05 + 0.05 * (u(rng) + 1));
  g.opacity_logit() = u(rng);
  for (int i = 0; i < kShCoeffs * 3; ++i) g.params[param::kSh + i] = (i < 3 ? 0.5 : 0.15) * u(rng);
  return g;
}

inline Camera simple_camera(int id, int width, int height, double distance = 3.0) {
  Camera c;
  c.id = id;
  c.width = width;
  c.height = height;
  c.fx = c.fy = 1.2 * width;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.world_to_camera = look_at(Eigen::Vector3d(0.3, -0.2, -distance), Eigen::Vector3d::Zero());
  return c;
}

inline std::vector<std::int64_t> iota_ids(std::size_t n) {
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace testsupport
