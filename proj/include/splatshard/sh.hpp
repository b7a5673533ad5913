#pragma once

#include <Eigen/Core>

#include <array>

namespace splatshard {

inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr std::array<double, 5> kShC2 = {1.0925484305920792, -1.0925484305920792,
                                                0.31539156525252005, -1.0925484305920792,
                                                0.5462742152960396};

/// Real SH basis up to degree 2 along a unit direction; unused coefficients are zero.
template <typename Scalar>
Eigen::Matrix<Scalar, 9, 1> sh_basis(const Eigen::Matrix<Scalar, 3, 1>& dir, int degree) {
  Eigen::Matrix<Scalar, 9, 1> b = Eigen::Matrix<Scalar, 9, 1>::Zero();
  b[0] = Scalar(kShC0);
  if (degree < 1) return b;
  const Scalar x = dir.x(), y = dir.y(), z = dir.z();
  b[1] = Scalar(-kShC1) * y;
  b[2] = Scalar(kShC1) * z;
  b[3] = Scalar(-kShC1) * x;
  if (degree < 2) return b;
  b[4] = Scalar(kShC2[0]) * x * y;
  b[5] = Scalar(kShC2[1]) * y * z;
  b[6] = Scalar(kShC2[2]) * (2 * z * z - x * x - y * y);
  b[7] = Scalar(kShC2[3]) * x * z;
  b[8] = Scalar(kShC2[4]) * (x * x - y * y);
  return b;
}

/// d basis_k / d dir, one row per coefficient.
inline Eigen::Matrix<double, 9, 3> sh_basis_jacobian(const Eigen::Vector3d& dir, int degree) {
  Eigen::Matrix<double, 9, 3> j = Eigen::Matrix<double, 9, 3>::Zero();
  if (degree < 1) return j;
  const double x = dir.x(), y = dir.y(), z = dir.z();
  j(1, 1) = -kShC1;
  j(2, 2) = kShC1;
  j(3, 0) = -kShC1;
  if (degree < 2) return j;
  j.row(4) << kShC2[0] * y, kShC2[0] * x, 0;
  j.row(5) << 0, kShC2[1] * z, kShC2[1] * y;
  j.row(6) << -2 * kShC2[2] * x, -2 * kShC2[2] * y, 4 * kShC2[2] * z;
  j.row(7) << kShC2[3] * z, 0, kShC2[3] * x;
  j.row(8) << 2 * kShC2[4] * x, -2 * kShC2[4] * y, 0;
  return j;
}

inline Eigen::Vector3d rgb_to_sh0(const Eigen::Vector3d& rgb) {
  return (rgb.array() - 0.5) / kShC0;
}

inline Eigen::Vector3d sh0_to_rgb(const Eigen::Vector3d& sh0) {
  return sh0.array() * kShC0 + 0.5;
}

}  // namespace splatshard
