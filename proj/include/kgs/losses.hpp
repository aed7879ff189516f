#pragma once

#include "kgs/image.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace kgs {

struct LossWeights {
  double dssim = 0.2;
  double reg = 0.01;
  double ani = 0.001;
  double eps_ani = 1e-6;

  void validate() const;
};

inline constexpr double kPsnrCap = 99.0;

/// Mean absolute difference over pixels and channels.
double l1_loss(const Image& a, const Image& b, Image* d_a = nullptr);

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, zero padding) over pixels
/// and channels. When d_a is given it receives dSSIM/da.
double ssim(const Image& a, const Image& b, Image* d_a = nullptr);

/// (1 - dssim) * L1 + dssim * (1 - SSIM).
double image_loss(const Image& rendered, const Image& target, double dssim, Image* d_rendered = nullptr);

double psnr(const Image& a, const Image& b);

/// Mean |dx| over the static set plus mean |dx| over the dynamic set.
double reg_loss(std::span<const Vec3> dx, std::span<const std::uint8_t> dynamic_mask,
                std::vector<Vec3>* d_dx = nullptr);

/// Mean over primitives of max(s) / (min(s) + eps).
double ani_loss(std::span<const Vec3> scales, double eps, std::vector<Vec3>* d_scales = nullptr);

}  // namespace kgs
