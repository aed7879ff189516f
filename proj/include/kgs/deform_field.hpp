#pragma once

#include "kgs/core.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace kgs {

using Rng = std::mt19937_64;

/// Per-primitive, per-time offsets (position, axis-angle rotation, log-scale).
struct DeformationOffsets {
  Vec3 dx = Vec3::Zero();
  Vec3 dr = Vec3::Zero();
  Vec3 ds = Vec3::Zero();

  using Packed = Eigen::Matrix<double, 9, 1>;
  Packed pack() const;
  static DeformationOffsets unpack(const Packed& p);
  bool operator==(const DeformationOffsets&) const = default;
};

/// Fully connected predictor with one ReLU hidden layer and a linear head.
struct Mlp {
  MatX w1;
  VecX b1;
  MatX w2;
  VecX b2;

  struct Cache {
    VecX input;
    VecX hidden;  // post-activation
  };

  /// Uniform(+-1/sqrt(fan_in)) hidden weights; the output layer is zero when
  /// zero_output is set so predictions start at exactly zero.
  static Mlp create(int inputs, int hidden, int outputs, Rng& rng, bool zero_output = true);
  Mlp zeros_like() const;

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int output_dim() const { return static_cast<int>(w2.rows()); }
  std::size_t parameter_count() const;
  VecX flatten() const;
  void assign(const VecX& flat);
  Mlp& operator+=(const Mlp& other);

  VecX forward(const VecX& input, Cache* cache = nullptr) const;
  /// Accumulates weight gradients into `grad`; writes dL/dinput when requested.
  void backward(const Cache& cache, const VecX& d_out, Mlp& grad, VecX* d_input = nullptr) const;

  /// Column-batched variants: one sample per column.
  MatX forward_batch(const MatX& input, MatX* hidden = nullptr) const;
  void backward_batch(const MatX& input, const MatX& hidden, const MatX& d_out, Mlp& grad,
                      MatX* d_input = nullptr) const;
};

struct FieldConfig {
  int time_bands = 6;
  int position_bands = 4;
  int feature_dim = 16;
  int hidden = 64;
  int neighbors = 8;
  int neighbor_refresh = 500;
  bool coarse_to_fine = true;
  double max_ds = 5.0;
  double max_dr = kPi;
  /// Clamp on |dx| in world units; non-positive means "use the scene extent".
  double max_dx = 0.0;
  /// Deformation noise drawn independently per primitive (else shared per frame).
  bool per_gaussian_noise = true;
};

struct FieldParams {
  Mlp deform;  // F_theta: (encoded position, rotation, log-scale, encoded time) -> offsets
  Mlp fine;    // g_phi: (feature, encoded time) -> residual offsets
  int time_bands = 6;
  int position_bands = 4;
  int feature_dim = 16;
  double position_scale = 1.0;  // positions are multiplied by this before encoding
  double max_dx = 1.0;
  double max_ds = 5.0;
  double max_dr = kPi;

  static FieldParams create(const FieldConfig& cfg, double scene_extent, Rng& rng);
  int deform_input_dim() const { return 6 * position_bands + 4 + 3 + 2 * time_bands; }
  int fine_input_dim() const { return feature_dim + 2 * time_bands; }
};

/// [sin(2^0 pi t), cos(2^0 pi t), ..., sin(2^(L-1) pi t), cos(2^(L-1) pi t)]
VecX positional_encoding(double t, int bands);

struct NoiseSchedule {
  double sigma_init = 0.05;
  double sigma_final = 0.0;
  int k_max = 20000;
  double w_delay = 0.01;
  int k_delay = 1000;

  void validate() const;
};

double noise_sigma(const NoiseSchedule& schedule, std::int64_t k);

/// Input vector of F_theta. `rotation` need not be normalized.
VecX deform_input(const FieldParams& params, const Vec3& position, const Vec4& rotation, const Vec3& log_scale,
                  double t, std::span<const double> time_noise = {});

struct DeformInputGrad {
  Vec3 d_position = Vec3::Zero();
  Vec4 d_rotation = Vec4::Zero();  // wrt the raw (unnormalized) quaternion
  Vec3 d_log_scale = Vec3::Zero();
};

DeformInputGrad deform_input_backward(const FieldParams& params, const Vec3& position, const Vec4& rotation,
                                      const VecX& d_input);

VecX fine_input(const FieldParams& params, const VecX& feature, double t);

/// F_theta evaluated on one primitive; `noise_sigma` perturbs the time encoding.
DeformationOffsets predict_offsets(const FieldParams& params, const Gaussian& g, const Vec3& effective_scale,
                                   double t, double noise_sigma, Rng& rng);

/// Mean of the neighbors' offsets; the primitive's own offsets when the
/// neighborhood is empty.
DeformationOffsets coarse_deform(std::size_t idx, std::span<const std::uint32_t> neighbors,
                                 std::span<const DeformationOffsets> offsets);

DeformationOffsets fine_deform(const FieldParams& params, const VecX& feature, double t);

DeformationOffsets compose_deformation(const DeformationOffsets& coarse, const DeformationOffsets& fine);

/// Applies the configured magnitude clamps.
DeformationOffsets clamp_offsets(const FieldParams& params, const DeformationOffsets& o);
DeformationOffsets clamp_offsets_backward(const FieldParams& params, const DeformationOffsets& pre,
                                          const DeformationOffsets& d_post);

}  // namespace kgs
