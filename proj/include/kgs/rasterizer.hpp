#pragma once

#include "kgs/core.hpp"
#include "kgs/image.hpp"
#include "kgs/parallel.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace kgs {

inline constexpr int kTileSize = 16;

/// A projected primitive ready for compositing.
struct Splat {
  Vec2 mean;
  Mat2 conic;  // inverse of the 2D covariance
  double opacity = 0.0;
  Vec3 color;
  double depth = 0.0;
};

/// Everything the backward pass needs to retrace the forward composite.
struct RasterTape {
  int width = 0;
  int height = 0;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::uint32_t> tile_offsets;  // tiles + 1 entries into tile_splats
  std::vector<std::uint32_t> tile_splats;   // splat indices, depth-sorted within each tile
  std::vector<std::uint32_t> examined;      // per pixel: tile-list entries visited
  std::vector<double> final_transmittance;  // per pixel
};

struct RasterOutput {
  Image image;
  std::vector<double> transmittance;  // per pixel
  std::vector<double> importance;     // per splat: sum over pixels of its blending weight
};

struct SplatGrad {
  Vec2 d_mean = Vec2::Zero();
  Mat2 d_conic = Mat2::Zero();
  double d_opacity = 0.0;
  Vec3 d_color = Vec3::Zero();
};

/// Tile-based front-to-back rasterization. Splats are ordered by depth with
/// ties broken by their position in `splats`.
RasterOutput rasterize(std::span<const Splat> splats, int width, int height, const Vec3& background, int threads,
                       RasterTape* tape = nullptr);

/// Reproduces the image from a tape without rebinning.
Image replay(std::span<const Splat> splats, const RasterTape& tape, const Vec3& background);

std::vector<SplatGrad> rasterize_backward(std::span<const Splat> splats, const RasterTape& tape,
                                          const Vec3& background, const Image& d_image, int threads);

/// Per-pixel loop over every splat; the reference the tiled path must match.
Image rasterize_reference(std::span<const Splat> splats, int width, int height, const Vec3& background);

/// Pixel-space radius outside which the splat's alpha is below kMinSplatAlpha.
/// Returns a negative value when the splat can never reach that alpha.
double splat_radius(const Splat& s);

}  // namespace kgs
