#pragma once

#include "splatshard/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace splatshard {

inline constexpr int kTileSize = 16;
inline constexpr double kNearClip = 0.01;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kDilationVariance = 0.3 * 0.3;

struct RasterSettings {
  bool early_termination = true;
  int sh_degree = kMaxShDegree;
};

template <typename Scalar>
struct ProjectedSplat {
  using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
  using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
  using Mat2 = Eigen::Matrix<Scalar, 2, 2>;

  std::int64_t global_id = -1;
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  Vec3 conic = Vec3(1, 0, 1);  // inverse of cov2d as (a, b, c)
  Scalar depth = 0;
  Scalar radius = 0;
  Vec3 color = Vec3::Zero();
  Scalar opacity = 0;
  std::uint8_t color_clamped = 0;  // bit c set when channel c hit the [0, 1] clamp
};

/// Half-open pixel rectangle.
struct PixelRect {
  int x0, y0, x1, y1;
};

/// Half-open range of tile indices.
struct TileRange {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool contains(int tx, int ty) const { return tx >= x0 && tx < x1 && ty >= y0 && ty < y1; }
};

struct TileLayout {
  int width = 0;
  int height = 0;
  int tiles_x = 0;
  int tiles_y = 0;

  TileLayout() = default;
  TileLayout(int w, int h)
      : width(w),
        height(h),
        tiles_x((w + kTileSize - 1) / kTileSize),
        tiles_y((h + kTileSize - 1) / kTileSize) {}

  int tile_count() const { return tiles_x * tiles_y; }
  PixelRect pixels(int tile) const {
    const int tx = tile % tiles_x, ty = tile / tiles_x;
    return {tx * kTileSize, ty * kTileSize, std::min(width, (tx + 1) * kTileSize),
            std::min(height, (ty + 1) * kTileSize)};
  }
};

/// Tiles touched by the splat's radius-bounded box.
template <typename Scalar>
TileRange tile_footprint(const ProjectedSplat<Scalar>& s, const TileLayout& layout);

/// Per-tile splat lists, each sorted by (depth, global_id).
struct TileGrid {
  TileLayout layout;
  std::vector<std::vector<std::int32_t>> bins;

  std::vector<std::int64_t> costs() const;
};

template <typename Scalar>
void sort_by_depth(std::vector<std::int32_t>& bin, std::span<const ProjectedSplat<Scalar>> splats);

template <typename Scalar>
TileGrid bin_splats(std::span<const ProjectedSplat<Scalar>> splats, const TileLayout& layout);

/// EWA projection of one Gaussian; nullopt when clipped by the near plane or off-image.
template <typename Scalar>
std::optional<ProjectedSplat<Scalar>> project_one(const Gaussian& g, std::int64_t global_id,
                                                  const Camera& camera, int sh_degree);

/// Projects `ids` (ascending order preserved for survivors).
template <typename Scalar>
std::vector<ProjectedSplat<Scalar>> project(const GaussianModel& model,
                                            std::span<const std::int64_t> ids,
                                            const Camera& camera, int sh_degree = kMaxShDegree);

template <typename Scalar>
std::vector<ProjectedSplat<Scalar>> project(const GaussianModel& model, const Camera& camera,
                                            int sh_degree = kMaxShDegree);

/// Screen-space gradient of one splat: d/dmean2d (2), d/dconic (a, b, c), d/dcolor (3),
/// d/dopacity (1).
using ScreenGrad = Eigen::Matrix<double, 9, 1>;
namespace screen {
inline constexpr int kMean = 0;
inline constexpr int kConic = 2;
inline constexpr int kColor = 5;
inline constexpr int kOpacity = 8;
}  // namespace screen

struct SplatCoverage {
  double w = 0;        // sum of alpha * T over qualifying pixels
  std::int64_t a = 0;  // qualifying pixel count
};

// Tile kernels. `order` lists indices into `splats` in compositing order; partial outputs are
// indexed like `order`.

template <typename Scalar>
void composite_tile(const TileLayout& layout, int tile,
                    std::span<const ProjectedSplat<Scalar>> splats,
                    std::span<const std::int32_t> order, const RasterSettings& settings,
                    Image<Scalar>& image, std::vector<Scalar>& transmittance);

template <typename Scalar>
void backward_tile(const TileLayout& layout, int tile,
                   std::span<const ProjectedSplat<Scalar>> splats,
                   std::span<const std::int32_t> order, const RasterSettings& settings,
                   const Image<Scalar>& grad_image, std::span<ScreenGrad> partial);

template <typename Scalar>
void instrument_tile(const TileLayout& layout, int tile,
                     std::span<const ProjectedSplat<Scalar>> splats,
                     std::span<const std::int32_t> order, const RasterSettings& settings,
                     std::span<SplatCoverage> partial);

template <typename Scalar>
struct ForwardResult {
  Image<Scalar> image;
  std::vector<Scalar> transmittance;  // final T per pixel, row-major
  TileGrid grid;
};

template <typename Scalar>
ForwardResult<Scalar> render_forward(std::span<const ProjectedSplat<Scalar>> splats, int width,
                                     int height, const RasterSettings& settings = {});

/// Screen-space gradients per splat, folded over tiles in ascending tile order.
template <typename Scalar>
std::vector<ScreenGrad> render_backward(const Image<Scalar>& grad_image,
                                        std::span<const ProjectedSplat<Scalar>> splats,
                                        const ForwardResult<Scalar>& forward,
                                        const RasterSettings& settings = {});

template <typename Scalar>
std::vector<SplatCoverage> instrumented_pass(std::span<const ProjectedSplat<Scalar>> splats,
                                             int width, int height,
                                             const RasterSettings& settings = {});

/// Chain rule from one splat's screen-space gradient to the Gaussian's parameters.
ParamVector parameter_gradient(const Gaussian& g, const Camera& camera, const ScreenGrad& grad,
                               int sh_degree, std::uint8_t color_clamped);

/// Per-Gaussian parameter gradients (model-sized, zero for Gaussians without a splat).
template <typename Scalar>
std::vector<ParamVector> parameter_gradients(const GaussianModel& model, const Camera& camera,
                                             std::span<const ProjectedSplat<Scalar>> splats,
                                             std::span<const ScreenGrad> screen_grads,
                                             int sh_degree);

}  // namespace splatshard
