#include "splatshard/loss.hpp"

#include "splatshard/errors.hpp"

#include <array>
#include <cmath>

namespace splatshard {
namespace {

template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;  // height x width

std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    k[std::size_t(i)] = std::exp(-x * x / (2 * kSsimSigma * kSsimSigma));
    sum += k[std::size_t(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable "same" filtering with zero padding. The kernel is symmetric, so this is also its
// own adjoint.
template <typename Scalar>
Plane<Scalar> blur(const Plane<Scalar>& in) {
  static const auto k = ssim_kernel();
  const Eigen::Index h = in.rows(), w = in.cols(), r = kSsimWindow / 2;
  Plane<Scalar> tmp = Plane<Scalar>::Zero(h, w), out = Plane<Scalar>::Zero(h, w);
  for (Eigen::Index d = -r; d <= r; ++d) {
    const auto kd = Scalar(k[std::size_t(d + r)]);
    const Eigen::Index len = w - std::abs(d);
    if (len <= 0) continue;
    // tmp(:, x) += k[d] * in(:, x + d)
    if (d >= 0)
      tmp.leftCols(len) += kd * in.rightCols(len);
    else
      tmp.rightCols(len) += kd * in.leftCols(len);
  }
  for (Eigen::Index d = -r; d <= r; ++d) {
    const auto kd = Scalar(k[std::size_t(d + r)]);
    const Eigen::Index len = h - std::abs(d);
    if (len <= 0) continue;
    if (d >= 0)
      out.topRows(len) += kd * tmp.bottomRows(len);
    else
      out.bottomRows(len) += kd * tmp.topRows(len);
  }
  return out;
}

template <typename Scalar>
Plane<Scalar> channel(const Image<Scalar>& img, int c) {
  Plane<Scalar> p(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p(y, x) = img.rgb(img.index(x, y), c);
  return p;
}

template <typename Scalar>
void require_same_shape(const Image<Scalar>& a, const Image<Scalar>& b) {
  require(a.width == b.width && a.height == b.height, "image shapes differ");
}

}  // namespace

template <typename Scalar>
double l1(const Image<Scalar>& a, const Image<Scalar>& b) {
  require_same_shape(a, b);
  if (a.rgb.size() == 0) return 0;
  return (a.rgb.template cast<double>() - b.rgb.template cast<double>()).abs().sum() /
         double(a.rgb.size());
}

template <typename Scalar>
double ssim_with_grad(const Image<Scalar>& xi, const Image<Scalar>& yi, Image<Scalar>* grad_x) {
  require_same_shape(xi, yi);
  const double count = double(xi.rgb.size());
  if (count == 0) return 1;
  if (grad_x) *grad_x = Image<Scalar>(xi.width, xi.height);
  double total = 0;
  // Planes follow the image scalar; only the reductions are carried in double.
  using P = Plane<Scalar>;
  const auto c1 = Scalar(kSsimC1), c2 = Scalar(kSsimC2), inv = Scalar(1 / count);
  for (int c = 0; c < 3; ++c) {
    const P x = channel(xi, c), y = channel(yi, c);
    const P mx = blur(x), my = blur(y);
    const P exx = blur<Scalar>(x * x), eyy = blur<Scalar>(y * y), exy = blur<Scalar>(x * y);
    const P a1 = 2 * mx * my + c1;
    const P a2 = 2 * (exy - mx * my) + c2;
    const P b1 = mx * mx + my * my + c1;
    const P b2 = (exx - mx * mx) + (eyy - my * my) + c2;
    const P s = a1 * a2 / (b1 * b2);
    total += s.template cast<double>().sum();
    if (!grad_x) continue;
    const P d_mx = s * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2) * inv;
    const P d_exx = -s / b2 * inv;
    const P d_exy = 2 * s / a2 * inv;
    const P g = blur<Scalar>(d_mx) + 2 * x * blur<Scalar>(d_exx) + y * blur<Scalar>(d_exy);
    for (int yy = 0; yy < xi.height; ++yy)
      for (int xx = 0; xx < xi.width; ++xx) grad_x->rgb(xi.index(xx, yy), c) = g(yy, xx);
  }
  return total / count;
}

template <typename Scalar>
double ssim(const Image<Scalar>& a, const Image<Scalar>& b) {
  return ssim_with_grad<Scalar>(a, b, nullptr);
}

template <typename Scalar>
double psnr(const Image<Scalar>& a, const Image<Scalar>& b) {
  require_same_shape(a, b);
  const double mse = a.rgb.size() == 0 ? 0.0
                                       : (a.rgb.template cast<double>() - b.rgb.template cast<double>())
                                                 .square()
                                                 .sum() /
                                             double(a.rgb.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

template <typename Scalar>
LossResult<Scalar> compute_loss(std::span<const Image<Scalar>> renders,
                                std::span<const Image<Scalar>> targets, const GaussianModel& model,
                                std::span<const std::int64_t> visible, const LossWeights& weights) {
  require(!renders.empty(), "compute_loss: empty batch");
  require(renders.size() == targets.size(), "compute_loss: batch size mismatch");
  const double batch = double(renders.size());
  const double lambda = weights.lambda;
  LossResult<Scalar> out;
  for (std::size_t b = 0; b < renders.size(); ++b) {
    const auto& x = renders[b];
    const auto& y = targets[b];
    require_same_shape(x, y);
    Image<Scalar> g_ssim;
    const double l = l1(x, y);
    const double s = ssim_with_grad(x, y, lambda != 0 ? &g_ssim : nullptr);
    out.terms.l1 += l / batch;
    out.terms.ssim += s / batch;
    out.terms.total += ((1 - lambda) * l + lambda * (1 - s)) / batch;

    Image<Scalar> g(x.width, x.height);
    const double n = double(x.rgb.size());
    const auto diff = x.rgb.template cast<double>() - y.rgb.template cast<double>();
    g.rgb = ((1 - lambda) / (batch * n) * diff.sign()).template cast<Scalar>();
    if (lambda != 0) g.rgb -= Scalar(lambda / batch) * g_ssim.rgb;
    out.grad_images.push_back(std::move(g));
  }
  out.scale_grads.assign(visible.size(), Eigen::Vector3d::Zero());
  if (!visible.empty()) {
    const double per = weights.beta / double(visible.size());
    double sum = 0;
    for (std::size_t k = 0; k < visible.size(); ++k) {
      const auto& g = model[std::size_t(visible[k])];
      Eigen::Index axis;
      const double smallest = g.scale().minCoeff(&axis);
      sum += smallest;
      out.scale_grads[k][axis] = per * smallest;
    }
    out.terms.scale_term = per * sum;
    out.terms.total += out.terms.scale_term;
  }
  return out;
}

#define SPLATSHARD_INSTANTIATE_LOSS(S)                                                           \
  template double l1<S>(const Image<S>&, const Image<S>&);                                     \
  template double ssim<S>(const Image<S>&, const Image<S>&);                                   \
  template double ssim_with_grad<S>(const Image<S>&, const Image<S>&, Image<S>*);              \
  template double psnr<S>(const Image<S>&, const Image<S>&);                                   \
  template LossResult<S> compute_loss<S>(std::span<const Image<S>>, std::span<const Image<S>>, \
                                         const GaussianModel&, std::span<const std::int64_t>,  \
                                         const LossWeights&);
SPLATSHARD_INSTANTIATE_LOSS(float)
SPLATSHARD_INSTANTIATE_LOSS(double)
#undef SPLATSHARD_INSTANTIATE_LOSS

}  // namespace splatshard
