#include "kgs/losses.hpp"

#include <array>

namespace kgs {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
    sum += w[i];
  }
  for (double& v : w) {
    v /= sum;
  }
  return w;
}

/// Separable zero-padded "same" filtering of a single-channel plane.
std::vector<double> blur(const std::vector<double>& in, int w, int h) {
  static const std::array<double, kWindow> win = gaussian_window();
  constexpr int r = kWindow / 2;
  std::vector<double> tmp(in.size(), 0.0);
  std::vector<double> out(in.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < w) {
          acc += win[k + r] * in[static_cast<std::size_t>(y) * w + xx];
        }
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < h) {
          acc += win[k + r] * tmp[static_cast<std::size_t>(yy) * w + x];
        }
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

void check_shapes(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b) || a.data.size() != b.data.size() || a.data.empty()) {
    throw InvalidInput(std::string(what) + ": image shape mismatch");
  }
}

}  // namespace

void LossWeights::validate() const {
  if (!(dssim >= 0.0 && dssim <= 1.0) || !(reg >= 0.0) || !(ani >= 0.0) || !(eps_ani > 0.0)) {
    throw InvalidInput("loss weights: need 0 <= dssim <= 1, reg, ani >= 0, eps_ani > 0");
  }
}

double l1_loss(const Image& a, const Image& b, Image* d_a) {
  check_shapes(a, b, "l1_loss");
  const double inv = 1.0 / static_cast<double>(a.data.size());
  if (d_a != nullptr) {
    *d_a = Image(a.width, a.height);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += std::abs(d);
    if (d_a != nullptr) {
      d_a->data[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
  }
  return acc * inv;
}

double ssim(const Image& a, const Image& b, Image* d_a) {
  check_shapes(a, b, "ssim");
  const int w = a.width, h = a.height;
  const std::size_t n = a.pixel_count();
  const double inv = 1.0 / static_cast<double>(n * 3);
  if (d_a != nullptr) {
    *d_a = Image(w, h);
  }
  double total = 0.0;
  std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = a.data[3 * i + c];
      pb[i] = b.data[3 * i + c];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto mu_a = blur(pa, w, h);
    const auto mu_b = blur(pb, w, h);
    const auto m_aa = blur(paa, w, h);
    const auto m_bb = blur(pbb, w, h);
    const auto m_ab = blur(pab, w, h);
    std::vector<double> g1(n), g2(n), g3(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double s_aa = m_aa[i] - mu_a[i] * mu_a[i];
      const double s_bb = m_bb[i] - mu_b[i] * mu_b[i];
      const double s_ab = m_ab[i] - mu_a[i] * mu_b[i];
      const double a1 = 2.0 * mu_a[i] * mu_b[i] + kC1;
      const double a2 = 2.0 * s_ab + kC2;
      const double b1 = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1;
      const double b2 = s_aa + s_bb + kC2;
      const double s = a1 * a2 / (b1 * b2);
      total += s;
      if (d_a != nullptr) {
        const double d_s = inv;
        const double ds_dm3 = 2.0 * a1 / (b1 * b2);
        const double ds_dm2 = -s / b2;
        const double ds_dmu = 2.0 * mu_b[i] * a2 / (b1 * b2) - ds_dm3 * mu_b[i] - s * 2.0 * mu_a[i] / b1 +
                              (s / b2) * 2.0 * mu_a[i];
        g1[i] = d_s * ds_dmu;
        g2[i] = d_s * ds_dm2;
        g3[i] = d_s * ds_dm3;
      }
    }
    if (d_a != nullptr) {
      const auto f1 = blur(g1, w, h);
      const auto f2 = blur(g2, w, h);
      const auto f3 = blur(g3, w, h);
      for (std::size_t i = 0; i < n; ++i) {
        d_a->data[3 * i + c] = f1[i] + 2.0 * pa[i] * f2[i] + pb[i] * f3[i];
      }
    }
  }
  return total * inv;
}

double image_loss(const Image& rendered, const Image& target, double dssim, Image* d_rendered) {
  check_shapes(rendered, target, "image_loss");
  if (d_rendered == nullptr) {
    double loss = (1.0 - dssim) * l1_loss(rendered, target);
    if (dssim > 0.0) {
      loss += dssim * (1.0 - ssim(rendered, target));
    }
    return loss;
  }
  Image d_l1;
  double loss = (1.0 - dssim) * l1_loss(rendered, target, &d_l1);
  *d_rendered = Image(rendered.width, rendered.height);
  for (std::size_t i = 0; i < d_l1.data.size(); ++i) {
    d_rendered->data[i] = (1.0 - dssim) * d_l1.data[i];
  }
  if (dssim > 0.0) {
    Image d_ssim;
    loss += dssim * (1.0 - ssim(rendered, target, &d_ssim));
    for (std::size_t i = 0; i < d_ssim.data.size(); ++i) {
      d_rendered->data[i] -= dssim * d_ssim.data[i];
    }
  }
  return loss;
}

double psnr(const Image& a, const Image& b) {
  check_shapes(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0.0) {
    return kPsnrCap;
  }
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double reg_loss(std::span<const Vec3> dx, std::span<const std::uint8_t> dynamic_mask, std::vector<Vec3>* d_dx) {
  if (dx.size() != dynamic_mask.size()) {
    throw InvalidInput("reg_loss: offsets and partition differ in size");
  }
  std::size_t n_dyn = 0;
  for (std::uint8_t m : dynamic_mask) {
    n_dyn += m ? 1 : 0;
  }
  const std::size_t n_static = dx.size() - n_dyn;
  double sum_static = 0.0, sum_dyn = 0.0;
  if (d_dx != nullptr) {
    d_dx->assign(dx.size(), Vec3::Zero());
  }
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double norm = dx[i].norm();
    const std::size_t count = dynamic_mask[i] ? n_dyn : n_static;
    (dynamic_mask[i] ? sum_dyn : sum_static) += norm;
    if (d_dx != nullptr && norm > 0.0) {
      (*d_dx)[i] = dx[i] / (norm * static_cast<double>(count));
    }
  }
  double loss = 0.0;
  if (n_static > 0) {
    loss += sum_static / static_cast<double>(n_static);
  }
  if (n_dyn > 0) {
    loss += sum_dyn / static_cast<double>(n_dyn);
  }
  return loss;
}

double ani_loss(std::span<const Vec3> scales, double eps, std::vector<Vec3>* d_scales) {
  if (d_scales != nullptr) {
    d_scales->assign(scales.size(), Vec3::Zero());
  }
  if (scales.empty()) {
    return 0.0;
  }
  const double inv = 1.0 / static_cast<double>(scales.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    int imax, imin;
    const double smax = scales[i].maxCoeff(&imax);
    const double smin = scales[i].minCoeff(&imin);
    const double denom = smin + eps;
    acc += smax / denom;
    if (d_scales != nullptr) {
      (*d_scales)[i][imax] += inv / denom;
      (*d_scales)[i][imin] -= inv * smax / (denom * denom);
    }
  }
  return acc * inv;
}

}  // namespace kgs
