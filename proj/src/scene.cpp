#include "splatshard/scene.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/sh.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace splatshard {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double inverse_sigmoid(double y) { return std::log(y / (1.0 - y)); }

double Gaussian::opacity() const { return sigmoid(opacity_logit()); }

void Camera::validate() const {
  require(fx > 0 && fy > 0, "camera " + std::to_string(id) + ": focal lengths must be positive");
  require(width > 0 && height > 0, "camera " + std::to_string(id) + ": empty image size");
  require(cx >= 0 && cx < width && cy >= 0 && cy < height,
          "camera " + std::to_string(id) + ": principal point outside the image");
  const Eigen::Matrix3d r = rotation();
  require((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-6,
          "camera " + std::to_string(id) + ": rotation block is not orthonormal");
}

std::vector<int> Scene::train_camera_indices() const {
  std::vector<int> out;
  for (int i = 0; i < int(cameras.size()); ++i)
    if (cameras[i].role == CameraRole::Train) out.push_back(i);
  return out;
}

std::vector<int> Scene::test_camera_indices() const {
  std::vector<int> out;
  for (int i = 0; i < int(cameras.size()); ++i)
    if (cameras[i].role == CameraRole::Test) out.push_back(i);
  return out;
}

const Camera& Scene::camera_by_id(int id) const {
  for (const auto& cam : cameras)
    if (cam.id == id) return cam;
  throw ContractViolation("unknown camera id " + std::to_string(id));
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> rotation_from_quaternion(const Eigen::Vector4d& q_raw) {
  const Eigen::Matrix<Scalar, 4, 1> q = q_raw.cast<Scalar>().normalized();
  const Scalar w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix<Scalar, 3, 3> r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> covariance_of(const Gaussian& g) {
  const Eigen::Matrix<Scalar, 3, 3> r = rotation_from_quaternion<Scalar>(g.rotation());
  const Eigen::Matrix<Scalar, 3, 1> s = g.log_scale().cast<Scalar>().array().exp();
  const Eigen::Matrix<Scalar, 3, 3> m = r * s.asDiagonal();
  return m * m.transpose();
}

template Eigen::Matrix3f rotation_from_quaternion<float>(const Eigen::Vector4d&);
template Eigen::Matrix3d rotation_from_quaternion<double>(const Eigen::Vector4d&);
template Eigen::Matrix3f covariance_of<float>(const Gaussian&);
template Eigen::Matrix3d covariance_of<double>(const Gaussian&);

Gaussian gaussian_from_point(const Eigen::Vector3d& point, const Eigen::Vector3d& rgb,
                             double isotropic_scale) {
  Gaussian g;
  g.position() = point;
  g.rotation() << 1, 0, 0, 0;
  g.log_scale().setConstant(std::log(isotropic_scale));
  g.opacity_logit() = inverse_sigmoid(0.1);
  g.sh().row(0) = rgb_to_sh0(rgb).transpose();
  return g;
}

std::vector<double> initial_scales(std::span<const Eigen::Vector3d> points) {
  constexpr int kNeighbours = 3;
  const std::size_t n = points.size();
  std::vector<double> scales(n, 1e-2);
  std::vector<double> dists;
  for (std::size_t i = 0; i < n; ++i) {
    dists.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dists.push_back((points[i] - points[j]).norm());
    if (dists.empty()) continue;  // lone point keeps the 1e-2 default
    const std::size_t k = std::min<std::size_t>(kNeighbours, dists.size());
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
    double mean = 0;
    for (std::size_t j = 0; j < k; ++j) mean += dists[j];
    scales[i] = std::clamp(mean / double(k), 1e-4, 1.0);
  }
  return scales;
}

GaussianModel initialize_from_cloud(std::span<const Eigen::Vector3d> points,
                                    std::span<const Eigen::Vector3d> colors) {
  require(colors.empty() || colors.size() == points.size(), "cloud colour count mismatch");
  const auto scales = initial_scales(points);
  GaussianModel model;
  model.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d rgb = colors.empty() ? Eigen::Vector3d::Constant(0.5) : colors[i];
    model.push_back(gaussian_from_point(points[i], rgb, scales[i]));
  }
  return model;
}

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (std::int64_t v : {k.x, k.y, k.z}) {
      h ^= std::uint64_t(v);
      h *= 1099511628211ull;
    }
    return std::size_t(h);
  }
};

}  // namespace

void assign_lod_labels(GaussianModel& model, int levels, double base_voxel) {
  require(levels >= 1, "assign_lod_labels: need at least one level");
  require(base_voxel > 0, "assign_lod_labels: base voxel must be positive");
  std::vector<int> level(model.size(), -1);
  for (int k = 0; k < levels; ++k) {
    const double voxel = base_voxel / std::ldexp(1.0, k);
    std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> first;
    for (std::size_t i = 0; i < model.size(); ++i) {
      const Eigen::Vector3d p = model[i].position();
      const VoxelKey key{std::int64_t(std::floor(p.x() / voxel)),
                         std::int64_t(std::floor(p.y() / voxel)),
                         std::int64_t(std::floor(p.z() / voxel))};
      const auto [it, inserted] = first.emplace(key, i);
      if (inserted && level[i] < 0) level[i] = k;
    }
  }
  for (std::size_t i = 0; i < model.size(); ++i)
    model[i].lod_level = level[i] < 0 ? levels - 1 : level[i];
}

Eigen::Vector3d centroid(const GaussianModel& model) {
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& g : model) sum += g.position();
  return model.empty() ? sum : Eigen::Vector3d(sum / double(model.size()));
}

double reference_distance(const GaussianModel& model, std::span<const Camera> cameras) {
  const Eigen::Vector3d c = centroid(model);
  std::vector<double> d;
  for (const auto& cam : cameras)
    if (cam.role == CameraRole::Train) d.push_back((cam.center() - c).norm());
  require(!d.empty(), "reference distance needs at least one train camera");
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  return n % 2 == 1 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

double scene_extent(std::span<const Camera> cameras) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  int count = 0;
  for (const auto& cam : cameras) {
    if (cam.role != CameraRole::Train) continue;
    mean += cam.center();
    ++count;
  }
  if (count == 0) return 1.0;
  mean /= double(count);
  double radius = 0;
  for (const auto& cam : cameras)
    if (cam.role == CameraRole::Train) radius = std::max(radius, (cam.center() - mean).norm());
  return radius > 1e-9 ? 1.1 * radius : 1.0;
}

int default_test_count(std::size_t n_cameras) {
  if (n_cameras < 2) return 0;
  return int((n_cameras + 9) / 10);
}

void assign_test_split(std::vector<Camera>& cameras, int test_count) {
  require(test_count >= 0 && test_count <= int(cameras.size()), "invalid test camera count");
  std::vector<std::size_t> order(cameras.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return cameras[a].id < cameras[b].id; });
  const std::size_t first_test = cameras.size() - std::size_t(test_count);
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    cameras[order[rank]].role = rank >= first_test ? CameraRole::Test : CameraRole::Train;
}

}  // namespace splatshard
