#include "kgs/rasterizer.hpp"

#include <algorithm>
#include <numeric>

namespace kgs {

namespace {

struct PixelAlpha {
  double alpha;
  double power;
  bool clamped;
};

inline PixelAlpha pixel_alpha(const Splat& s, double px, double py) {
  const double dx = px - s.mean.x();
  const double dy = py - s.mean.y();
  const double power = -0.5 * (s.conic(0, 0) * dx * dx + s.conic(1, 1) * dy * dy) - s.conic(0, 1) * dx * dy;
  const double a = s.opacity * std::exp(power);
  if (a > kMaxSplatAlpha) {
    return {kMaxSplatAlpha, power, true};
  }
  return {a, power, false};
}

std::vector<std::uint32_t> depth_order(std::span<const Splat> splats) {
  std::vector<std::uint32_t> order(splats.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return splats[a].depth < splats[b].depth; });
  return order;
}

void bin_splats(std::span<const Splat> splats, RasterTape& tape) {
  const int n_tiles = tape.tiles_x * tape.tiles_y;
  std::vector<std::vector<std::uint32_t>> bins(n_tiles);
  for (std::uint32_t idx : depth_order(splats)) {
    const Splat& s = splats[idx];
    const double r = splat_radius(s);
    if (r < 0.0) {
      continue;
    }
    // Pixel centers within r of the mean.
    const int x0 = std::max(0, static_cast<int>(std::ceil(s.mean.x() - r - 0.5)));
    const int x1 = std::min(tape.width - 1, static_cast<int>(std::floor(s.mean.x() + r - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(s.mean.y() - r - 0.5)));
    const int y1 = std::min(tape.height - 1, static_cast<int>(std::floor(s.mean.y() + r - 0.5)));
    if (x0 > x1 || y0 > y1) {
      continue;
    }
    for (int ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty) {
      for (int tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx) {
        bins[ty * tape.tiles_x + tx].push_back(idx);
      }
    }
  }
  tape.tile_offsets.assign(n_tiles + 1, 0);
  tape.tile_splats.clear();
  for (int t = 0; t < n_tiles; ++t) {
    tape.tile_splats.insert(tape.tile_splats.end(), bins[t].begin(), bins[t].end());
    tape.tile_offsets[t + 1] = static_cast<std::uint32_t>(tape.tile_splats.size());
  }
}

struct TileBounds {
  int x0, x1, y0, y1;
};

TileBounds tile_bounds(const RasterTape& tape, int tile) {
  const int tx = tile % tape.tiles_x;
  const int ty = tile / tape.tiles_x;
  return {tx * kTileSize, std::min(tape.width, (tx + 1) * kTileSize), ty * kTileSize,
          std::min(tape.height, (ty + 1) * kTileSize)};
}

// Composites one pixel against a depth-sorted list. Returns the number of list
// entries examined; `weights` (when non-null) receives alpha*T per entry.
template <typename List>
std::uint32_t composite_pixel(std::span<const Splat> splats, const List& list, std::size_t count, double px,
                              double py, const Vec3& background, Vec3& color, double& transmittance,
                              double* weights) {
  Vec3 c = Vec3::Zero();
  double t = 1.0;
  std::uint32_t examined = static_cast<std::uint32_t>(count);
  for (std::size_t k = 0; k < count; ++k) {
    const Splat& s = splats[list[k]];
    const PixelAlpha pa = pixel_alpha(s, px, py);
    if (pa.alpha < kMinSplatAlpha) {
      continue;
    }
    const double w = pa.alpha * t;
    c += s.color * w;
    if (weights != nullptr) {
      weights[k] += w;
    }
    t *= 1.0 - pa.alpha;
    if (t < kTransmittanceCutoff) {
      examined = static_cast<std::uint32_t>(k + 1);
      break;
    }
  }
  color = c + t * background;
  transmittance = t;
  return examined;
}

void store_pixel(Image& img, int x, int y, const Vec3& c) {
  for (int ch = 0; ch < 3; ++ch) {
    img.at(x, y, ch) = std::clamp(c[ch], 0.0, 1.0);
  }
}

}  // namespace

double splat_radius(const Splat& s) {
  const double peak = std::min(s.opacity, kMaxSplatAlpha);
  if (!(peak >= kMinSplatAlpha)) {
    return -1.0;
  }
  // Largest eigenvalue of the covariance is 1 / smallest eigenvalue of the conic.
  const double a = s.conic(0, 0), b = s.conic(0, 1), c = s.conic(1, 1);
  const double mid = 0.5 * (a + c);
  const double lambda_min = mid - std::sqrt(std::max(0.0, mid * mid - (a * c - b * b)));
  if (!(lambda_min > 0.0)) {
    return -1.0;
  }
  const double r2 = 2.0 * std::log(peak / kMinSplatAlpha) / lambda_min;
  return std::sqrt(std::max(0.0, r2)) * (1.0 + 1e-9) + 1e-9;
}

RasterOutput rasterize(std::span<const Splat> splats, int width, int height, const Vec3& background, int threads,
                       RasterTape* tape_out) {
  RasterTape local;
  RasterTape& tape = tape_out != nullptr ? *tape_out : local;
  tape.width = width;
  tape.height = height;
  tape.tiles_x = (width + kTileSize - 1) / kTileSize;
  tape.tiles_y = (height + kTileSize - 1) / kTileSize;
  bin_splats(splats, tape);
  const std::size_t n_pixels = static_cast<std::size_t>(width) * height;
  tape.examined.assign(n_pixels, 0);
  tape.final_transmittance.assign(n_pixels, 1.0);

  RasterOutput out;
  out.image = Image(width, height);
  const int n_tiles = tape.tiles_x * tape.tiles_y;
  std::vector<std::vector<double>> tile_weights(n_tiles);

  parallel_for(static_cast<std::size_t>(n_tiles), threads, [&](std::size_t tile) {
    const TileBounds b = tile_bounds(tape, static_cast<int>(tile));
    const std::uint32_t begin = tape.tile_offsets[tile];
    const std::size_t count = tape.tile_offsets[tile + 1] - begin;
    const std::uint32_t* list = tape.tile_splats.data() + begin;
    std::vector<double>& weights = tile_weights[tile];
    weights.assign(count, 0.0);
    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) {
        Vec3 c;
        double t;
        const std::size_t pix = static_cast<std::size_t>(y) * width + x;
        tape.examined[pix] =
            composite_pixel(splats, list, count, x + 0.5, y + 0.5, background, c, t, weights.data());
        tape.final_transmittance[pix] = t;
        store_pixel(out.image, x, y, c);
      }
    }
  });

  out.importance.assign(splats.size(), 0.0);
  for (int tile = 0; tile < n_tiles; ++tile) {
    const std::uint32_t begin = tape.tile_offsets[tile];
    for (std::size_t k = 0; k < tile_weights[tile].size(); ++k) {
      out.importance[tape.tile_splats[begin + k]] += tile_weights[tile][k];
    }
  }
  out.transmittance = tape.final_transmittance;
  return out;
}

Image replay(std::span<const Splat> splats, const RasterTape& tape, const Vec3& background) {
  Image img(tape.width, tape.height);
  const int n_tiles = tape.tiles_x * tape.tiles_y;
  for (int tile = 0; tile < n_tiles; ++tile) {
    const TileBounds b = tile_bounds(tape, tile);
    const std::uint32_t* list = tape.tile_splats.data() + tape.tile_offsets[tile];
    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * tape.width + x;
        Vec3 c;
        double t;
        composite_pixel(splats, list, tape.examined[pix], x + 0.5, y + 0.5, background, c, t, nullptr);
        store_pixel(img, x, y, c);
      }
    }
  }
  return img;
}

Image rasterize_reference(std::span<const Splat> splats, int width, int height, const Vec3& background) {
  const std::vector<std::uint32_t> order = depth_order(splats);
  Image img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      Vec3 c;
      double t;
      composite_pixel(splats, order, order.size(), x + 0.5, y + 0.5, background, c, t, nullptr);
      store_pixel(img, x, y, c);
    }
  }
  return img;
}

std::vector<SplatGrad> rasterize_backward(std::span<const Splat> splats, const RasterTape& tape,
                                          const Vec3& background, const Image& d_image, int threads) {
  if (d_image.width != tape.width || d_image.height != tape.height) {
    throw InvalidInput("rasterize_backward: gradient image does not match the tape");
  }
  const int n_tiles = tape.tiles_x * tape.tiles_y;
  std::vector<std::vector<SplatGrad>> tile_grads(n_tiles);

  parallel_for(static_cast<std::size_t>(n_tiles), threads, [&](std::size_t tile) {
    const TileBounds b = tile_bounds(tape, static_cast<int>(tile));
    const std::uint32_t begin = tape.tile_offsets[tile];
    const std::size_t count = tape.tile_offsets[tile + 1] - begin;
    const std::uint32_t* list = tape.tile_splats.data() + begin;
    std::vector<SplatGrad>& grads = tile_grads[tile];
    grads.assign(count, SplatGrad{});

    struct Entry {
      std::uint32_t k;
      double alpha;
      double t;
      double power;
      bool clamped;
    };
    std::vector<Entry> entries;
    entries.reserve(count);

    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * tape.width + x;
        const Vec3 g(d_image.at(x, y, 0), d_image.at(x, y, 1), d_image.at(x, y, 2));
        if (g.isZero(0.0)) {
          continue;
        }
        const double px = x + 0.5, py = y + 0.5;
        entries.clear();
        double t = 1.0;
        const std::uint32_t n = tape.examined[pix];
        for (std::uint32_t k = 0; k < n; ++k) {
          const PixelAlpha pa = pixel_alpha(splats[list[k]], px, py);
          if (pa.alpha < kMinSplatAlpha) {
            continue;
          }
          entries.push_back({k, pa.alpha, t, pa.power, pa.clamped});
          t *= 1.0 - pa.alpha;
        }
        Vec3 after = t * background;
        for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
          const Splat& s = splats[list[it->k]];
          SplatGrad& sg = grads[it->k];
          const double w = it->alpha * it->t;
          sg.d_color += g * w;
          const double d_alpha = g.dot(s.color * it->t - after / (1.0 - it->alpha));
          after += s.color * w;
          if (it->clamped) {
            continue;
          }
          const double e = std::exp(it->power);
          sg.d_opacity += d_alpha * e;
          const double d_power = d_alpha * it->alpha;
          const Vec2 d(px - s.mean.x(), py - s.mean.y());
          sg.d_mean += d_power * (s.conic * d);
          sg.d_conic += (-0.5 * d_power) * (d * d.transpose());
        }
      }
    }
  });

  std::vector<SplatGrad> out(splats.size());
  for (int tile = 0; tile < n_tiles; ++tile) {
    const std::uint32_t begin = tape.tile_offsets[tile];
    for (std::size_t k = 0; k < tile_grads[tile].size(); ++k) {
      SplatGrad& dst = out[tape.tile_splats[begin + k]];
      const SplatGrad& src = tile_grads[tile][k];
      dst.d_mean += src.d_mean;
      dst.d_conic += src.d_conic;
      dst.d_opacity += src.d_opacity;
      dst.d_color += src.d_color;
    }
  }
  return out;
}

}  // namespace kgs
