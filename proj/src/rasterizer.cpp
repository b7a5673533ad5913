#include "splatshard/rasterizer.hpp"

#include "splatshard/errors.hpp"
#include "splatshard/parallel.hpp"
#include "splatshard/sh.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace splatshard {

namespace {

/// Effective alpha of a splat at a pixel centre, or 0 when the pixel does not qualify.
template <typename Scalar>
inline Scalar splat_alpha(const ProjectedSplat<Scalar>& s, Scalar px, Scalar py, Scalar& gauss,
                          bool& clamped) {
  const Scalar dx = px - s.mean2d.x();
  const Scalar dy = py - s.mean2d.y();
  // The footprint is the radius box, so tile size never changes which pixels a splat reaches.
  if (std::abs(dx) > s.radius || std::abs(dy) > s.radius) return Scalar(0);
  const Scalar power =
      Scalar(-0.5) * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
  if (power > Scalar(0)) return Scalar(0);
  // Opacity is at most 1 and exp(-5.6) < 0.0037 < 1/255, so nothing here can pass the floor.
  if (power < Scalar(-5.6)) return Scalar(0);
  gauss = std::exp(power);
  const Scalar raw = s.opacity * gauss;
  clamped = raw > Scalar(kAlphaMax);
  const Scalar alpha = clamped ? Scalar(kAlphaMax) : raw;
  return alpha >= Scalar(kAlphaMin) ? alpha : Scalar(0);
}

}  // namespace

template <typename Scalar>
TileRange tile_footprint(const ProjectedSplat<Scalar>& s, const TileLayout& layout) {
  auto clamp_tile = [](Scalar v, int hi) {
    const Scalar t = std::floor(v / Scalar(kTileSize));
    return int(std::clamp<Scalar>(t, Scalar(0), Scalar(hi)));
  };
  TileRange r;
  r.x0 = clamp_tile(s.mean2d.x() - s.radius, layout.tiles_x);
  r.y0 = clamp_tile(s.mean2d.y() - s.radius, layout.tiles_y);
  r.x1 = std::min(layout.tiles_x, clamp_tile(s.mean2d.x() + s.radius, layout.tiles_x) + 1);
  r.y1 = std::min(layout.tiles_y, clamp_tile(s.mean2d.y() + s.radius, layout.tiles_y) + 1);
  if (s.mean2d.x() + s.radius < 0 || s.mean2d.y() + s.radius < 0) r = TileRange{};
  return r;
}

std::vector<std::int64_t> TileGrid::costs() const {
  std::vector<std::int64_t> c(bins.size());
  for (std::size_t t = 0; t < bins.size(); ++t) c[t] = std::int64_t(bins[t].size());
  return c;
}

template <typename Scalar>
void sort_by_depth(std::vector<std::int32_t>& bin, std::span<const ProjectedSplat<Scalar>> splats) {
  std::sort(bin.begin(), bin.end(), [&](std::int32_t a, std::int32_t b) {
    const auto& sa = splats[a];
    const auto& sb = splats[b];
    if (sa.depth != sb.depth) return sa.depth < sb.depth;
    return sa.global_id < sb.global_id;
  });
}

template <typename Scalar>
TileGrid bin_splats(std::span<const ProjectedSplat<Scalar>> splats, const TileLayout& layout) {
  TileGrid grid;
  grid.layout = layout;
  grid.bins.resize(std::size_t(layout.tile_count()));
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const TileRange r = tile_footprint(splats[i], layout);
    for (int ty = r.y0; ty < r.y1; ++ty)
      for (int tx = r.x0; tx < r.x1; ++tx)
        grid.bins[std::size_t(ty * layout.tiles_x + tx)].push_back(std::int32_t(i));
  }
  for (auto& bin : grid.bins) sort_by_depth(bin, splats);
  return grid;
}

template <typename Scalar>
std::optional<ProjectedSplat<Scalar>> project_one(const Gaussian& g, std::int64_t global_id,
                                                  const Camera& camera, int sh_degree) {
  using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
  using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
  const Mat3 w = camera.rotation().cast<Scalar>();
  const Vec3 mu = g.position().template cast<Scalar>();
  const Vec3 p = w * mu + camera.translation().cast<Scalar>();
  const Scalar z = p.z();
  if (!(z > Scalar(kNearClip))) return std::nullopt;

  const Scalar fx = Scalar(camera.fx), fy = Scalar(camera.fy);
  ProjectedSplat<Scalar> s;
  s.global_id = global_id;
  s.depth = z;
  s.mean2d << fx * p.x() / z + Scalar(camera.cx), fy * p.y() / z + Scalar(camera.cy);

  Eigen::Matrix<Scalar, 2, 3> j;
  j << fx / z, 0, -fx * p.x() / (z * z), 0, fy / z, -fy * p.y() / (z * z);
  const Eigen::Matrix<Scalar, 2, 3> t = j * w;
  s.cov2d = t * covariance_of<Scalar>(g) * t.transpose();
  s.cov2d(0, 1) = s.cov2d(1, 0) = Scalar(0.5) * (s.cov2d(0, 1) + s.cov2d(1, 0));
  s.cov2d.diagonal().array() += Scalar(kDilationVariance);

  const Scalar a = s.cov2d(0, 0), b = s.cov2d(0, 1), c = s.cov2d(1, 1);
  const Scalar det = a * c - b * b;
  if (!(det > Scalar(0))) return std::nullopt;
  s.conic << c / det, -b / det, a / det;
  const Scalar mid = Scalar(0.5) * (a + c);
  const Scalar lambda_max = mid + std::sqrt(std::max(Scalar(0), mid * mid - det));
  s.radius = Scalar(3) * std::sqrt(lambda_max);

  const Scalar width = Scalar(camera.width), height = Scalar(camera.height);
  if (s.mean2d.x() < -s.radius || s.mean2d.x() > width + s.radius ||
      s.mean2d.y() < -s.radius || s.mean2d.y() > height + s.radius)
    return std::nullopt;

  const Vec3 dir = (mu - camera.center().cast<Scalar>()).normalized();
  const Eigen::Matrix<Scalar, 9, 1> basis = sh_basis<Scalar>(dir, sh_degree);
  const Vec3 raw = g.sh().cast<Scalar>().transpose() * basis + Vec3::Constant(Scalar(0.5));
  for (int ch = 0; ch < 3; ++ch) {
    if (raw[ch] < Scalar(0) || raw[ch] > Scalar(1)) s.color_clamped |= std::uint8_t(1u << ch);
    s.color[ch] = std::clamp(raw[ch], Scalar(0), Scalar(1));
  }
  s.opacity = Scalar(sigmoid(g.opacity_logit()));
  return s;
}

template <typename Scalar>
std::vector<ProjectedSplat<Scalar>> project(const GaussianModel& model,
                                            std::span<const std::int64_t> ids,
                                            const Camera& camera, int sh_degree) {
  std::vector<ProjectedSplat<Scalar>> out;
  out.reserve(ids.size());
  for (std::int64_t id : ids)
    if (auto s = project_one<Scalar>(model[std::size_t(id)], id, camera, sh_degree))
      out.push_back(*s);
  return out;
}

template <typename Scalar>
std::vector<ProjectedSplat<Scalar>> project(const GaussianModel& model, const Camera& camera,
                                            int sh_degree) {
  std::vector<ProjectedSplat<Scalar>> out;
  out.reserve(model.size());
  for (std::size_t i = 0; i < model.size(); ++i)
    if (auto s = project_one<Scalar>(model[i], std::int64_t(i), camera, sh_degree))
      out.push_back(*s);
  return out;
}

template <typename Scalar>
void composite_tile(const TileLayout& layout, int tile,
                    std::span<const ProjectedSplat<Scalar>> splats,
                    std::span<const std::int32_t> order, const RasterSettings& settings,
                    Image<Scalar>& image, std::vector<Scalar>& transmittance) {
  const PixelRect rect = layout.pixels(tile);
  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      Scalar t = 1;
      Eigen::Matrix<Scalar, 3, 1> color = Eigen::Matrix<Scalar, 3, 1>::Zero();
      for (std::int32_t idx : order) {
        const auto& s = splats[std::size_t(idx)];
        Scalar gauss = 0;
        bool clamped = false;
        const Scalar alpha = splat_alpha(s, Scalar(x), Scalar(y), gauss, clamped);
        if (alpha == Scalar(0)) continue;
        color += s.color * (alpha * t);
        t *= Scalar(1) - alpha;
        if (settings.early_termination && t < Scalar(kTransmittanceStop)) break;
      }
      image.pixel(x, y) = color.transpose().array();
      transmittance[std::size_t(image.index(x, y))] = t;
    }
  }
}

template <typename Scalar>
void backward_tile(const TileLayout& layout, int tile,
                   std::span<const ProjectedSplat<Scalar>> splats,
                   std::span<const std::int32_t> order, const RasterSettings& settings,
                   const Image<Scalar>& grad_image, std::span<ScreenGrad> partial) {
  struct Hit {
    std::size_t slot;
    double alpha, gauss, t;
    bool clamped;
  };
  std::vector<Hit> hits;
  hits.reserve(order.size());
  const PixelRect rect = layout.pixels(tile);
  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      const Eigen::Vector3d dpix = grad_image.pixel(x, y).transpose().template cast<double>();
      if (dpix.isZero(0)) continue;
      hits.clear();
      Scalar t = 1;
      for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& s = splats[std::size_t(order[k])];
        Scalar gauss = 0;
        bool clamped = false;
        const Scalar alpha = splat_alpha(s, Scalar(x), Scalar(y), gauss, clamped);
        if (alpha == Scalar(0)) continue;
        hits.push_back({k, double(alpha), double(gauss), double(t), clamped});
        t *= Scalar(1) - alpha;
        if (settings.early_termination && t < Scalar(kTransmittanceStop)) break;
      }
      // Back to front; `behind` is the colour accumulated by splats behind the current one.
      Eigen::Vector3d behind = Eigen::Vector3d::Zero();
      for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
        const auto& s = splats[std::size_t(order[it->slot])];
        const Eigen::Vector3d color = s.color.template cast<double>();
        ScreenGrad& g = partial[it->slot];
        g.template segment<3>(screen::kColor) += dpix * (it->alpha * it->t);
        const double dalpha = dpix.dot(color * it->t - behind / (1.0 - it->alpha));
        behind += color * (it->alpha * it->t);
        if (it->clamped) continue;
        const double opacity = double(s.opacity);
        g[screen::kOpacity] += dalpha * it->gauss;
        const double dpower = dalpha * opacity * it->gauss;
        const double dx = double(x) - double(s.mean2d.x());
        const double dy = double(y) - double(s.mean2d.y());
        const double ca = double(s.conic[0]), cb = double(s.conic[1]), cc = double(s.conic[2]);
        g[screen::kMean] += dpower * (ca * dx + cb * dy);
        g[screen::kMean + 1] += dpower * (cb * dx + cc * dy);
        g[screen::kConic] += dpower * (-0.5 * dx * dx);
        g[screen::kConic + 1] += dpower * (-dx * dy);
        g[screen::kConic + 2] += dpower * (-0.5 * dy * dy);
      }
    }
  }
}

template <typename Scalar>
void instrument_tile(const TileLayout& layout, int tile,
                     std::span<const ProjectedSplat<Scalar>> splats,
                     std::span<const std::int32_t> order, const RasterSettings& settings,
                     std::span<SplatCoverage> partial) {
  const PixelRect rect = layout.pixels(tile);
  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      Scalar t = 1;
      for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& s = splats[std::size_t(order[k])];
        Scalar gauss = 0;
        bool clamped = false;
        const Scalar alpha = splat_alpha(s, Scalar(x), Scalar(y), gauss, clamped);
        if (alpha == Scalar(0)) continue;
        partial[k].w += double(alpha * t);
        partial[k].a += 1;
        t *= Scalar(1) - alpha;
        if (settings.early_termination && t < Scalar(kTransmittanceStop)) break;
      }
    }
  }
}

template <typename Scalar>
ForwardResult<Scalar> render_forward(std::span<const ProjectedSplat<Scalar>> splats, int width,
                                     int height, const RasterSettings& settings) {
  ForwardResult<Scalar> out;
  out.grid = bin_splats(splats, TileLayout(width, height));
  out.image = Image<Scalar>(width, height);
  out.transmittance.assign(std::size_t(width) * std::size_t(height), Scalar(1));
  const auto& grid = out.grid;
  parallel_for(grid.bins.size(), [&](std::size_t tile) {
    composite_tile<Scalar>(grid.layout, int(tile), splats, grid.bins[tile], settings, out.image,
                           out.transmittance);
  });
  return out;
}

template <typename Scalar>
std::vector<ScreenGrad> render_backward(const Image<Scalar>& grad_image,
                                        std::span<const ProjectedSplat<Scalar>> splats,
                                        const ForwardResult<Scalar>& forward,
                                        const RasterSettings& settings) {
  const auto& grid = forward.grid;
  require(grad_image.width == grid.layout.width && grad_image.height == grid.layout.height,
          "render_backward: gradient image does not match the forward pass");
  std::vector<std::vector<ScreenGrad>> partials(grid.bins.size());
  parallel_for(grid.bins.size(), [&](std::size_t tile) {
    partials[tile].assign(grid.bins[tile].size(), ScreenGrad::Zero());
    backward_tile<Scalar>(grid.layout, int(tile), splats, grid.bins[tile], settings, grad_image,
                          partials[tile]);
  });
  std::vector<ScreenGrad> out(splats.size(), ScreenGrad::Zero());
  for (std::size_t tile = 0; tile < grid.bins.size(); ++tile)
    for (std::size_t k = 0; k < grid.bins[tile].size(); ++k)
      out[std::size_t(grid.bins[tile][k])] += partials[tile][k];
  return out;
}

template <typename Scalar>
std::vector<SplatCoverage> instrumented_pass(std::span<const ProjectedSplat<Scalar>> splats,
                                             int width, int height,
                                             const RasterSettings& settings) {
  const TileGrid grid = bin_splats(splats, TileLayout(width, height));
  std::vector<std::vector<SplatCoverage>> partials(grid.bins.size());
  parallel_for(grid.bins.size(), [&](std::size_t tile) {
    partials[tile].assign(grid.bins[tile].size(), SplatCoverage{});
    instrument_tile<Scalar>(grid.layout, int(tile), splats, grid.bins[tile], settings,
                            partials[tile]);
  });
  std::vector<SplatCoverage> out(splats.size());
  for (std::size_t tile = 0; tile < grid.bins.size(); ++tile) {
    for (std::size_t k = 0; k < grid.bins[tile].size(); ++k) {
      auto& dst = out[std::size_t(grid.bins[tile][k])];
      dst.w += partials[tile][k].w;
      dst.a += partials[tile][k].a;
    }
  }
  return out;
}

ParamVector parameter_gradient(const Gaussian& g, const Camera& camera, const ScreenGrad& grad,
                               int sh_degree, std::uint8_t color_clamped) {
  ParamVector out = ParamVector::Zero();
  const Eigen::Matrix3d w = camera.rotation();
  const Eigen::Vector3d mu = g.position();
  const Eigen::Vector3d p = w * mu + camera.translation();
  const double x = p.x(), y = p.y(), z = p.z();
  const double fx = camera.fx, fy = camera.fy;

  const double o = g.opacity();
  out[param::kOpacity] = grad[screen::kOpacity] * o * (1 - o);

  // Colour: SH coefficients and the view direction.
  const Eigen::Vector3d v = mu - camera.center();
  const double len = v.norm();
  const Eigen::Vector3d dir = v / len;
  Eigen::Vector3d dcolor = grad.segment<3>(screen::kColor);
  for (int ch = 0; ch < 3; ++ch)
    if (color_clamped & (1u << ch)) dcolor[ch] = 0;
  const Eigen::Matrix<double, 9, 1> basis = sh_basis<double>(dir, sh_degree);
  Eigen::Map<ShMatrix>(out.data() + param::kSh) = basis * dcolor.transpose();
  const Eigen::Matrix<double, 9, 1> per_coeff = g.sh() * dcolor;
  const Eigen::Vector3d ddir = sh_basis_jacobian(dir, sh_degree).transpose() * per_coeff;
  Eigen::Vector3d dmu = (Eigen::Matrix3d::Identity() - dir * dir.transpose()) * ddir / len;

  // Conic -> 2D covariance.
  Eigen::Matrix<double, 2, 3> j;
  j << fx / z, 0, -fx * x / (z * z), 0, fy / z, -fy * y / (z * z);
  const Eigen::Matrix<double, 2, 3> t = j * w;
  const Eigen::Matrix3d sigma = covariance_of<double>(g);
  Eigen::Matrix2d cov2d = t * sigma * t.transpose();
  cov2d(0, 1) = cov2d(1, 0) = 0.5 * (cov2d(0, 1) + cov2d(1, 0));
  cov2d.diagonal().array() += kDilationVariance;
  const Eigen::Matrix2d q = cov2d.inverse();
  Eigen::Matrix2d dq;
  dq << grad[screen::kConic], 0.5 * grad[screen::kConic + 1], 0.5 * grad[screen::kConic + 1],
      grad[screen::kConic + 2];
  const Eigen::Matrix2d dcov2d = -q * dq * q;

  // 2D covariance -> 3D covariance and the projection Jacobian.
  const Eigen::Matrix3d dsigma = t.transpose() * dcov2d * t;
  const Eigen::Matrix<double, 2, 3> dt = 2.0 * dcov2d * t * sigma;
  const Eigen::Matrix<double, 2, 3> dj = dt * w.transpose();

  const double dmx = grad[screen::kMean], dmy = grad[screen::kMean + 1];
  const double z2 = z * z, z3 = z2 * z;
  Eigen::Vector3d dp;
  dp.x() = dj(0, 2) * (-fx / z2) + dmx * fx / z;
  dp.y() = dj(1, 2) * (-fy / z2) + dmy * fy / z;
  dp.z() = dj(0, 0) * (-fx / z2) + dj(0, 2) * (2 * fx * x / z3) + dj(1, 1) * (-fy / z2) +
           dj(1, 2) * (2 * fy * y / z3) - dmx * fx * x / z2 - dmy * fy * y / z2;
  dmu += w.transpose() * dp;
  out.segment<3>(param::kPosition) = dmu;

  // 3D covariance -> log-scale and quaternion.
  const Eigen::Vector4d q_raw = g.rotation();
  const double q_norm = q_raw.norm();
  const Eigen::Vector4d qn = q_raw / q_norm;
  const Eigen::Matrix3d r = rotation_from_quaternion<double>(q_raw);
  const Eigen::Vector3d s = g.scale();
  const Eigen::Matrix3d m = r * s.asDiagonal();
  const Eigen::Matrix3d dm = 2.0 * dsigma * m;
  for (int k = 0; k < 3; ++k) out[param::kLogScale + k] = r.col(k).dot(dm.col(k)) * s[k];
  const Eigen::Matrix3d dr = dm * s.asDiagonal();

  const double qw = qn[0], qx = qn[1], qy = qn[2], qz = qn[3];
  Eigen::Vector4d dqn;
  dqn[0] = 2 * (-qz * dr(0, 1) + qy * dr(0, 2) + qz * dr(1, 0) - qx * dr(1, 2) - qy * dr(2, 0) +
                qx * dr(2, 1));
  dqn[1] = 2 * (qy * dr(0, 1) + qz * dr(0, 2) + qy * dr(1, 0) - 2 * qx * dr(1, 1) -
                qw * dr(1, 2) + qz * dr(2, 0) + qw * dr(2, 1) - 2 * qx * dr(2, 2));
  dqn[2] = 2 * (-2 * qy * dr(0, 0) + qx * dr(0, 1) + qw * dr(0, 2) + qx * dr(1, 0) +
                qz * dr(1, 2) - qw * dr(2, 0) + qz * dr(2, 1) - 2 * qy * dr(2, 2));
  dqn[3] = 2 * (-2 * qz * dr(0, 0) - qw * dr(0, 1) + qx * dr(0, 2) + qw * dr(1, 0) -
                2 * qz * dr(1, 1) + qy * dr(1, 2) + qx * dr(2, 0) + qy * dr(2, 1));
  out.segment<4>(param::kRotation) = (dqn - qn * qn.dot(dqn)) / q_norm;
  return out;
}

template <typename Scalar>
std::vector<ParamVector> parameter_gradients(const GaussianModel& model, const Camera& camera,
                                             std::span<const ProjectedSplat<Scalar>> splats,
                                             std::span<const ScreenGrad> screen_grads,
                                             int sh_degree) {
  require(splats.size() == screen_grads.size(), "parameter_gradients: size mismatch");
  std::vector<ParamVector> out(model.size(), ParamVector::Zero());
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const auto id = std::size_t(splats[i].global_id);
    out[id] += parameter_gradient(model[id], camera, screen_grads[i], sh_degree,
                                  splats[i].color_clamped);
  }
  return out;
}

#define SPLATSHARD_INSTANTIATE(S)                                                                 \
  template TileRange tile_footprint<S>(const ProjectedSplat<S>&, const TileLayout&);              \
  template void sort_by_depth<S>(std::vector<std::int32_t>&, std::span<const ProjectedSplat<S>>); \
  template TileGrid bin_splats<S>(std::span<const ProjectedSplat<S>>, const TileLayout&);         \
  template std::optional<ProjectedSplat<S>> project_one<S>(const Gaussian&, std::int64_t,         \
                                                           const Camera&, int);                   \
  template std::vector<ProjectedSplat<S>> project<S>(                                             \
      const GaussianModel&, std::span<const std::int64_t>, const Camera&, int);                   \
  template std::vector<ProjectedSplat<S>> project<S>(const GaussianModel&, const Camera&, int);   \
  template void composite_tile<S>(const TileLayout&, int, std::span<const ProjectedSplat<S>>,     \
                                  std::span<const std::int32_t>, const RasterSettings&,           \
                                  Image<S>&, std::vector<S>&);                                    \
  template void backward_tile<S>(const TileLayout&, int, std::span<const ProjectedSplat<S>>,      \
                                 std::span<const std::int32_t>, const RasterSettings&,            \
                                 const Image<S>&, std::span<ScreenGrad>);                         \
  template void instrument_tile<S>(const TileLayout&, int, std::span<const ProjectedSplat<S>>,    \
                                   std::span<const std::int32_t>, const RasterSettings&,          \
                                   std::span<SplatCoverage>);                                     \
  template ForwardResult<S> render_forward<S>(std::span<const ProjectedSplat<S>>, int, int,       \
                                              const RasterSettings&);                             \
  template std::vector<ScreenGrad> render_backward<S>(                                            \
      const Image<S>&, std::span<const ProjectedSplat<S>>, const ForwardResult<S>&,               \
      const RasterSettings&);                                                                     \
  template std::vector<SplatCoverage> instrumented_pass<S>(std::span<const ProjectedSplat<S>>,    \
                                                           int, int, const RasterSettings&);      \
  template std::vector<ParamVector> parameter_gradients<S>(                                       \
      const GaussianModel&, const Camera&, std::span<const ProjectedSplat<S>>,                    \
      std::span<const ScreenGrad>, int);

SPLATSHARD_INSTANTIATE(float)
SPLATSHARD_INSTANTIATE(double)

#undef SPLATSHARD_INSTANTIATE

}  // namespace splatshard
