#include "kgs/deform_field.hpp"

#include <string>

namespace kgs {

DeformationOffsets::Packed DeformationOffsets::pack() const {
  Packed p;
  p << dx, dr, ds;
  return p;
}

DeformationOffsets DeformationOffsets::unpack(const Packed& p) {
  return {p.segment<3>(0), p.segment<3>(3), p.segment<3>(6)};
}

Mlp Mlp::create(int inputs, int hidden, int outputs, Rng& rng, bool zero_output) {
  Mlp m;
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(inputs));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> u1(-bound1, bound1);
  std::uniform_real_distribution<double> u2(-bound2, bound2);
  m.w1.resize(hidden, inputs);
  m.b1.resize(hidden);
  for (Eigen::Index j = 0; j < m.w1.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.w1.rows(); ++i) {
      m.w1(i, j) = u1(rng);
    }
  }
  for (Eigen::Index i = 0; i < m.b1.size(); ++i) {
    m.b1[i] = u1(rng);
  }
  m.w2 = MatX::Zero(outputs, hidden);
  m.b2 = VecX::Zero(outputs);
  if (!zero_output) {
    for (Eigen::Index j = 0; j < m.w2.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.w2.rows(); ++i) {
        m.w2(i, j) = u2(rng);
      }
    }
    for (Eigen::Index i = 0; i < m.b2.size(); ++i) {
      m.b2[i] = u2(rng);
    }
  }
  return m;
}

Mlp Mlp::zeros_like() const {
  Mlp z;
  z.w1 = MatX::Zero(w1.rows(), w1.cols());
  z.b1 = VecX::Zero(b1.size());
  z.w2 = MatX::Zero(w2.rows(), w2.cols());
  z.b2 = VecX::Zero(b2.size());
  return z;
}

std::size_t Mlp::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

VecX Mlp::flatten() const {
  VecX flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index o = 0;
  flat.segment(o, w1.size()) = Eigen::Map<const VecX>(w1.data(), w1.size());
  o += w1.size();
  flat.segment(o, b1.size()) = b1;
  o += b1.size();
  flat.segment(o, w2.size()) = Eigen::Map<const VecX>(w2.data(), w2.size());
  o += w2.size();
  flat.segment(o, b2.size()) = b2;
  return flat;
}

void Mlp::assign(const VecX& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw InvalidInput("Mlp::assign: size mismatch");
  }
  Eigen::Index o = 0;
  Eigen::Map<VecX>(w1.data(), w1.size()) = flat.segment(o, w1.size());
  o += w1.size();
  b1 = flat.segment(o, b1.size());
  o += b1.size();
  Eigen::Map<VecX>(w2.data(), w2.size()) = flat.segment(o, w2.size());
  o += w2.size();
  b2 = flat.segment(o, b2.size());
}

Mlp& Mlp::operator+=(const Mlp& other) {
  w1 += other.w1;
  b1 += other.b1;
  w2 += other.w2;
  b2 += other.b2;
  return *this;
}

VecX Mlp::forward(const VecX& input, Cache* cache) const {
  VecX h = (w1 * input + b1).cwiseMax(0.0);
  VecX out = w2 * h + b2;
  if (cache != nullptr) {
    cache->input = input;
    cache->hidden = std::move(h);
  }
  return out;
}

void Mlp::backward(const Cache& cache, const VecX& d_out, Mlp& grad, VecX* d_input) const {
  grad.w2.noalias() += d_out * cache.hidden.transpose();
  grad.b2 += d_out;
  VecX d_h = w2.transpose() * d_out;
  for (Eigen::Index i = 0; i < d_h.size(); ++i) {
    if (!(cache.hidden[i] > 0.0)) {
      d_h[i] = 0.0;
    }
  }
  grad.w1.noalias() += d_h * cache.input.transpose();
  grad.b1 += d_h;
  if (d_input != nullptr) {
    *d_input = w1.transpose() * d_h;
  }
}

MatX Mlp::forward_batch(const MatX& input, MatX* hidden) const {
  MatX h = w1 * input;
  h.colwise() += b1;
  h = h.cwiseMax(0.0);
  MatX out = w2 * h;
  out.colwise() += b2;
  if (hidden != nullptr) {
    *hidden = std::move(h);
  }
  return out;
}

void Mlp::backward_batch(const MatX& input, const MatX& hidden, const MatX& d_out, Mlp& grad, MatX* d_input) const {
  if (d_out.cols() == 0) {
    if (d_input != nullptr) {
      *d_input = MatX::Zero(input.rows(), 0);
    }
    return;
  }
  grad.w2.noalias() += d_out * hidden.transpose();
  grad.b2 += d_out.rowwise().sum();
  MatX d_h = w2.transpose() * d_out;
  d_h = (hidden.array() > 0.0).select(d_h, 0.0);
  grad.w1.noalias() += d_h * input.transpose();
  grad.b1 += d_h.rowwise().sum();
  if (d_input != nullptr) {
    *d_input = w1.transpose() * d_h;
  }
}

FieldParams FieldParams::create(const FieldConfig& cfg, double scene_extent, Rng& rng) {
  if (cfg.time_bands < 1 || cfg.position_bands < 1 || cfg.feature_dim < 1 || cfg.hidden < 1) {
    throw InvalidInput("FieldParams::create: band counts and widths must be positive");
  }
  FieldParams p;
  p.time_bands = cfg.time_bands;
  p.position_bands = cfg.position_bands;
  p.feature_dim = cfg.feature_dim;
  p.position_scale = scene_extent > 0.0 ? 1.0 / scene_extent : 1.0;
  p.max_dx = cfg.max_dx > 0.0 ? cfg.max_dx : std::max(scene_extent, 1e-6);
  p.max_ds = cfg.max_ds;
  p.max_dr = cfg.max_dr;
  p.deform = Mlp::create(p.deform_input_dim(), cfg.hidden, 9, rng, true);
  p.fine = Mlp::create(p.fine_input_dim(), cfg.hidden, 9, rng, true);
  return p;
}

VecX positional_encoding(double t, int bands) {
  if (bands < 1) {
    throw InvalidInput("positional_encoding: band count must be >= 1");
  }
  VecX e(2 * bands);
  double freq = kPi;
  for (int j = 0; j < bands; ++j) {
    e[2 * j] = std::sin(freq * t);
    e[2 * j + 1] = std::cos(freq * t);
    freq *= 2.0;
  }
  return e;
}

void NoiseSchedule::validate() const {
  if (!(sigma_init >= sigma_final && sigma_final >= 0.0)) {
    throw InvalidInput("noise schedule: need sigma_init >= sigma_final >= 0");
  }
  if (k_max <= 0 || k_delay < 0 || k_delay > k_max) {
    throw InvalidInput("noise schedule: need 0 <= k_delay <= k_max and k_max > 0");
  }
  if (!(w_delay > 0.0 && w_delay < 1.0)) {
    throw InvalidInput("noise schedule: w_delay must lie in (0, 1)");
  }
}

double noise_sigma(const NoiseSchedule& s, std::int64_t k) {
  const double frac = std::clamp(static_cast<double>(k) / s.k_max, 0.0, 1.0);
  const double base = s.sigma_init * (1.0 - frac) + s.sigma_final * frac;
  double w = 1.0;
  if (k < s.k_delay) {
    w = s.w_delay + (1.0 - s.w_delay) * std::sin(0.5 * kPi * static_cast<double>(k) / s.k_delay);
  }
  return w * base;
}

VecX deform_input(const FieldParams& p, const Vec3& position, const Vec4& rotation, const Vec3& log_scale, double t,
                  std::span<const double> time_noise) {
  VecX in(p.deform_input_dim());
  Eigen::Index o = 0;
  for (int k = 0; k < 3; ++k) {
    in.segment(o, 2 * p.position_bands) = positional_encoding(position[k] * p.position_scale, p.position_bands);
    o += 2 * p.position_bands;
  }
  in.segment<4>(o) = rotation.normalized();
  o += 4;
  in.segment<3>(o) = log_scale;
  o += 3;
  VecX te = positional_encoding(t, p.time_bands);
  if (!time_noise.empty()) {
    if (static_cast<Eigen::Index>(time_noise.size()) != te.size()) {
      throw InvalidInput("deform_input: noise dimension mismatch");
    }
    for (Eigen::Index i = 0; i < te.size(); ++i) {
      te[i] += time_noise[static_cast<std::size_t>(i)];
    }
  }
  in.segment(o, te.size()) = te;
  return in;
}

DeformInputGrad deform_input_backward(const FieldParams& p, const Vec3& position, const Vec4& rotation,
                                      const VecX& d_input) {
  DeformInputGrad g;
  Eigen::Index o = 0;
  for (int k = 0; k < 3; ++k) {
    const double x = position[k] * p.position_scale;
    double freq = kPi;
    for (int j = 0; j < p.position_bands; ++j) {
      g.d_position[k] +=
          p.position_scale * freq * (d_input[o + 2 * j] * std::cos(freq * x) - d_input[o + 2 * j + 1] * std::sin(freq * x));
      freq *= 2.0;
    }
    o += 2 * p.position_bands;
  }
  g.d_rotation = normalize_backward(rotation, d_input.segment<4>(o));
  o += 4;
  g.d_log_scale = d_input.segment<3>(o);
  return g;
}

VecX fine_input(const FieldParams& p, const VecX& feature, double t) {
  if (feature.size() != p.feature_dim) {
    throw InvalidInput("fine_input: feature dimension mismatch");
  }
  VecX in(p.fine_input_dim());
  in.head(p.feature_dim) = feature;
  in.tail(2 * p.time_bands) = positional_encoding(t, p.time_bands);
  return in;
}

namespace {

DeformationOffsets checked_offsets(const VecX& out, const char* layer) {
  if (!out.allFinite()) {
    throw NumericalError(std::string("non-finite output from ") + layer);
  }
  return DeformationOffsets::unpack(out);
}

}  // namespace

DeformationOffsets predict_offsets(const FieldParams& params, const Gaussian& g, const Vec3& effective_scale, double t,
                                   double sigma, Rng& rng) {
  std::vector<double> noise(static_cast<std::size_t>(2 * params.time_bands), 0.0);
  if (sigma > 0.0) {
    std::normal_distribution<double> n(0.0, sigma);
    for (double& e : noise) {
      e = n(rng);
    }
  }
  const VecX in = deform_input(params, g.position, g.rotation, effective_scale.array().log().matrix(), t, noise);
  return checked_offsets(params.deform.forward(in), "deformation predictor");
}

DeformationOffsets coarse_deform(std::size_t idx, std::span<const std::uint32_t> neighbors,
                                 std::span<const DeformationOffsets> offsets) {
  if (neighbors.empty()) {
    return offsets[idx];
  }
  DeformationOffsets::Packed sum = DeformationOffsets::Packed::Zero();
  for (std::uint32_t j : neighbors) {
    sum += offsets[j].pack();
  }
  return DeformationOffsets::unpack(sum / static_cast<double>(neighbors.size()));
}

DeformationOffsets fine_deform(const FieldParams& params, const VecX& feature, double t) {
  return checked_offsets(params.fine.forward(fine_input(params, feature, t)), "fine residual predictor");
}

DeformationOffsets compose_deformation(const DeformationOffsets& coarse, const DeformationOffsets& fine) {
  return {coarse.dx + fine.dx, coarse.dr + fine.dr, coarse.ds + fine.ds};
}

namespace {

Vec3 clamp_norm(const Vec3& v, double limit) {
  const double n = v.norm();
  return n > limit ? Vec3(v * (limit / n)) : v;
}

Vec3 clamp_norm_backward(const Vec3& v, double limit, const Vec3& d) {
  const double n = v.norm();
  if (n <= limit) {
    return d;
  }
  const Vec3 u = v / n;
  return (limit / n) * (d - u * u.dot(d));
}

}  // namespace

DeformationOffsets clamp_offsets(const FieldParams& p, const DeformationOffsets& o) {
  return {clamp_norm(o.dx, p.max_dx), clamp_norm(o.dr, p.max_dr), o.ds.cwiseMax(-p.max_ds).cwiseMin(p.max_ds)};
}

DeformationOffsets clamp_offsets_backward(const FieldParams& p, const DeformationOffsets& pre,
                                          const DeformationOffsets& d_post) {
  DeformationOffsets d;
  d.dx = clamp_norm_backward(pre.dx, p.max_dx, d_post.dx);
  d.dr = clamp_norm_backward(pre.dr, p.max_dr, d_post.dr);
  for (int k = 0; k < 3; ++k) {
    d.ds[k] = std::abs(pre.ds[k]) <= p.max_ds ? d_post.ds[k] : 0.0;
  }
  return d;
}

}  // namespace kgs
