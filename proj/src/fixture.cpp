#include "splatshard/fixture.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/rasterizer.hpp"
#include "splatshard/seeding.hpp"
#include "splatshard/sh.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace splatshard {

Eigen::Matrix<double, 3, 4> look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d up(0, 0, 1);
  if (std::abs(forward.dot(up)) > 0.999) up = Eigen::Vector3d(0, 1, 0);
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right;
  r.row(1) = down;
  r.row(2) = forward;
  Eigen::Matrix<double, 3, 4> m;
  m.leftCols<3>() = r;
  m.col(3) = -r * eye;
  return m;
}

FixtureScene gen_fixture_scene(std::uint64_t seed, int n_gaussians, int n_cameras, int width,
                               int height, const FixtureOptions& options) {
  require(n_gaussians >= 1, "gen_fixture_scene: need at least one Gaussian");
  require(n_cameras >= 2, "gen_fixture_scene: need at least two cameras");
  require(width >= 1 && height >= 1, "gen_fixture_scene: bad image size");
  std::mt19937_64 rng(derive_seed(seed, stream::kFixture, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  FixtureScene out;
  for (int i = 0; i < n_gaussians; ++i) {
    Gaussian g;
    g.position() = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)).array() - 0.5;
    Eigen::Vector4d q(normal(rng), normal(rng), normal(rng), normal(rng));
    g.rotation() = q.normalized();
    for (int k = 0; k < 3; ++k)
      g.log_scale()[k] = std::log(options.scale_min) +
                         unit(rng) * (std::log(options.scale_max) - std::log(options.scale_min));
    g.opacity_logit() = inverse_sigmoid(0.5 + 0.49 * unit(rng));
    const Eigen::Vector3d rgb(unit(rng), unit(rng), unit(rng));
    g.sh().row(0) = rgb_to_sh0(rgb).transpose();
    out.ground_truth.push_back(g);
  }

  const double focal = 0.5 * width / std::tan(options.fov_degrees * std::numbers::pi / 360.0);
  for (int c = 0; c < n_cameras; ++c) {
    const double azimuth = 2 * std::numbers::pi * unit(rng);
    const double elevation =
        options.min_elevation + (std::numbers::pi / 2 - 0.1 - options.min_elevation) * unit(rng);
    const double r = options.camera_distance_min +
                     (options.camera_distance_max - options.camera_distance_min) * unit(rng);
    const Eigen::Vector3d eye = r * Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth),
                                                    std::cos(elevation) * std::sin(azimuth),
                                                    std::sin(elevation));
    Camera cam;
    cam.id = c;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    cam.world_to_camera = look_at(eye, Eigen::Vector3d::Zero());
    out.scene.cameras.push_back(cam);
  }
  const int test_count =
      options.test_count >= 0 ? options.test_count : default_test_count(std::size_t(n_cameras));
  assign_test_split(out.scene.cameras, test_count);

  RasterSettings settings;
  settings.sh_degree = 0;
  for (const auto& cam : out.scene.cameras) {
    const auto splats = project<double>(out.ground_truth, cam, 0);
    const auto fwd = render_forward<double>(splats, width, height, settings);
    out.scene.images.emplace(cam.id, fwd.image.cast<float>());
  }

  for (const auto& g : out.ground_truth) {
    Eigen::Vector3d p = g.position();
    if (options.cloud_jitter > 0)
      for (int k = 0; k < 3; ++k) p[k] += options.cloud_jitter * normal(rng);
    out.cloud.points.push_back(p);
    out.cloud.colors.push_back(sh0_to_rgb(Eigen::Vector3d(g.sh().row(0).transpose())));
  }
  out.cloud.has_color = true;
  out.scene.gaussians = initialize_from_cloud(out.cloud.points, out.cloud.colors);
  assign_lod_labels(out.scene.gaussians, options.lod_levels, options.lod_base_voxel);
  out.scene.d0 = reference_distance(out.scene.gaussians, out.scene.cameras);
  return out;
}

}  // namespace splatshard
