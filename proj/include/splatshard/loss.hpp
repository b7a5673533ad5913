#pragma once

#include "splatshard/scene.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace splatshard {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kPsnrCap = 100.0;

/// Mean absolute difference over pixels and channels.
template <typename Scalar>
double l1(const Image<Scalar>& a, const Image<Scalar>& b);

/// Mean SSIM over pixels and channels (Gaussian window, zero padding).
template <typename Scalar>
double ssim(const Image<Scalar>& a, const Image<Scalar>& b);

/// Mean SSIM and its gradient with respect to `x`.
template <typename Scalar>
double ssim_with_grad(const Image<Scalar>& x, const Image<Scalar>& y, Image<Scalar>* grad_x);

/// 10 log10(1 / MSE), capped.
template <typename Scalar>
double psnr(const Image<Scalar>& a, const Image<Scalar>& b);

struct LossWeights {
  double lambda = 0.2;
  double beta = 10.0;
};

struct LossTerms {
  double total = 0;
  double l1 = 0;         // batch mean
  double ssim = 0;       // batch mean SSIM
  double scale_term = 0; // beta * mean smallest scale
};

template <typename Scalar>
struct LossResult {
  LossTerms terms;
  std::vector<Image<Scalar>> grad_images;
  std::vector<Eigen::Vector3d> scale_grads;  // dL/dlog_scale, aligned with `visible`
};

/// Photometric L1 + SSIM blend averaged over the batch plus the smallest-scale regulariser over
/// `visible` (ascending ids, may be empty).
template <typename Scalar>
LossResult<Scalar> compute_loss(std::span<const Image<Scalar>> renders,
                                std::span<const Image<Scalar>> targets, const GaussianModel& model,
                                std::span<const std::int64_t> visible, const LossWeights& weights);

}  // namespace splatshard
