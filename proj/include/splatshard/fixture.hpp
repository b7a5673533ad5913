#pragma once

#include "splatshard/io.hpp"
#include "splatshard/scene.hpp"

#include <cstdint>

namespace splatshard {

struct FixtureOptions {
  int test_count = -1;               // -1: default split rule
  double camera_distance_min = 2.5;  // from the box centroid
  double camera_distance_max = 3.5;
  double min_elevation = 0.15;       // radians above the horizon
  double fov_degrees = 50.0;
  double scale_min = 0.03;           // ground-truth standard deviations
  double scale_max = 0.10;
  double cloud_jitter = 0.0;         // noise added to ground-truth centres in the initial cloud
  int lod_levels = 4;
  double lod_base_voxel = 2.0;
};

struct FixtureScene {
  Scene scene;                 // initial model from the cloud, cameras, targets, d0
  GaussianModel ground_truth;  // degree-0 colours
  PointCloud cloud;
};

/// Deterministic synthetic scene: Gaussians in the unit box around the origin, cameras on a
/// hemisphere looking at the origin, targets rendered in double precision.
FixtureScene gen_fixture_scene(std::uint64_t seed, int n_gaussians, int n_cameras, int width,
                               int height, const FixtureOptions& options = {});

/// World-to-camera transform of a camera at `eye` looking at `target` (x right, y down, z forward).
Eigen::Matrix<double, 3, 4> look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target);

}  // namespace splatshard
