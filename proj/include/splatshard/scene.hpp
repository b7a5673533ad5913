#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace splatshard {

inline constexpr int kMaxShDegree = 2;
inline constexpr int kShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);
inline constexpr int kParamCount = 3 + 4 + 3 + 1 + 3 * kShCoeffs;

/// Flat per-Gaussian parameter vector. Gradients and optimizer moments share this layout.
using ParamVector = Eigen::Matrix<double, kParamCount, 1>;

namespace param {
inline constexpr int kPosition = 0;
inline constexpr int kRotation = 3;  // quaternion (w, x, y, z)
inline constexpr int kLogScale = 7;
inline constexpr int kOpacity = 10;  // opacity logit
inline constexpr int kSh = 11;       // coefficient k, channel c at kSh + 3 * k + c
}  // namespace param

using ShMatrix = Eigen::Matrix<double, kShCoeffs, 3, Eigen::RowMajor>;

struct Gaussian {
  ParamVector params = ParamVector::Zero();
  int lod_level = 0;

  auto position() { return params.segment<3>(param::kPosition); }
  auto position() const { return params.segment<3>(param::kPosition); }
  auto rotation() { return params.segment<4>(param::kRotation); }
  auto rotation() const { return params.segment<4>(param::kRotation); }
  auto log_scale() { return params.segment<3>(param::kLogScale); }
  auto log_scale() const { return params.segment<3>(param::kLogScale); }
  double& opacity_logit() { return params[param::kOpacity]; }
  double opacity_logit() const { return params[param::kOpacity]; }
  Eigen::Map<ShMatrix> sh() { return Eigen::Map<ShMatrix>(params.data() + param::kSh); }
  Eigen::Map<const ShMatrix> sh() const {
    return Eigen::Map<const ShMatrix>(params.data() + param::kSh);
  }

  double opacity() const;
  Eigen::Vector3d scale() const { return log_scale().array().exp(); }
};

using GaussianModel = std::vector<Gaussian>;

enum class CameraRole { Train, Test };

struct Camera {
  int id = 0;
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;
  Eigen::Matrix<double, 3, 4> world_to_camera = Eigen::Matrix<double, 3, 4>::Identity();
  CameraRole role = CameraRole::Train;

  Eigen::Matrix3d rotation() const { return world_to_camera.leftCols<3>(); }
  Eigen::Vector3d translation() const { return world_to_camera.col(3); }
  /// Camera centre in world coordinates, -R^T t.
  Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }

  /// Throws ContractViolation on bad intrinsics or a non-orthonormal rotation block.
  void validate() const;
};

/// RGB raster, pixel (x, y) stored in row y * width + x.
template <typename Scalar>
struct Image {
  using Pixels = Eigen::Array<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

  int width = 0;
  int height = 0;
  Pixels rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(Pixels::Zero(Eigen::Index(w) * h, 3)) {}

  Eigen::Index index(int x, int y) const { return Eigen::Index(y) * width + x; }
  auto pixel(int x, int y) { return rgb.row(index(x, y)); }
  auto pixel(int x, int y) const { return rgb.row(index(x, y)); }

  template <typename Other>
  Image<Other> cast() const {
    Image<Other> out;
    out.width = width;
    out.height = height;
    out.rgb = rgb.template cast<Other>();
    return out;
  }
};

struct Scene {
  GaussianModel gaussians;
  std::vector<Camera> cameras;
  std::map<int, Image<float>> images;  // keyed by camera id
  double d0 = 0;

  std::vector<int> train_camera_indices() const;
  std::vector<int> test_camera_indices() const;
  const Camera& camera_by_id(int id) const;
};

double sigmoid(double x);
double inverse_sigmoid(double y);

/// Rotation matrix of the normalised quaternion (w, x, y, z).
template <typename Scalar = double>
Eigen::Matrix<Scalar, 3, 3> rotation_from_quaternion(const Eigen::Vector4d& q);

/// Sigma = R diag(exp(log_scale))^2 R^T.
template <typename Scalar = double>
Eigen::Matrix<Scalar, 3, 3> covariance_of(const Gaussian& g);

/// Initial Gaussian for one cloud point: identity rotation, isotropic scale, opacity 0.1.
Gaussian gaussian_from_point(const Eigen::Vector3d& point, const Eigen::Vector3d& rgb,
                             double isotropic_scale);

/// Mean distance to the 3 nearest neighbours of every point, clamped to [1e-4, 1].
std::vector<double> initial_scales(std::span<const Eigen::Vector3d> points);

GaussianModel initialize_from_cloud(std::span<const Eigen::Vector3d> points,
                                    std::span<const Eigen::Vector3d> colors);

/// Level k uses voxel size base_voxel / 2^k; a point takes the coarsest level at which it is
/// the first occupant (ascending id) of its voxel, else levels - 1.
void assign_lod_labels(GaussianModel& model, int levels, double base_voxel);

Eigen::Vector3d centroid(const GaussianModel& model);

/// Median train-camera distance to the model centroid.
double reference_distance(const GaussianModel& model, std::span<const Camera> cameras);

/// 1.1 x the largest distance of a train camera centre from the mean centre (1 when degenerate).
double scene_extent(std::span<const Camera> cameras);

/// ceil(10% of n) for n >= 2, else 0.
int default_test_count(std::size_t n_cameras);

/// Marks the last `test_count` cameras by id as test, the rest as train.
void assign_test_split(std::vector<Camera>& cameras, int test_count);

}  // namespace splatshard
