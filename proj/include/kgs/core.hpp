#pragma once

#include "kgs/common.hpp"
#include "kgs/rotation.hpp"

#include <array>
#include <optional>
#include <span>

namespace kgs {

inline constexpr double kCov2dDilation = 0.3;          // px^2 added to the projected covariance diagonal
inline constexpr double kTransmittanceCutoff = 1e-4;   // compositing stops once T falls below this
inline constexpr double kMaxSplatAlpha = 0.99;
inline constexpr double kMinSplatAlpha = 1.0 / 255.0;

/// One primitive in canonical space. Scale is stored unconstrained and mapped
/// to a positive scale by the level-of-detail reparameterization.
struct Gaussian {
  Vec3 position = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  Vec3 log_scale_opt = Vec3::Zero();
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Constant(0.5);
  int level = 1;
  double accumulated_importance = 0.0;
  /// Per-primitive latent used by the fine deformation head. Only read while
  /// the primitive is in the dynamic set.
  VecX feature;

  double opacity() const { return sigmoid(opacity_logit); }
};

/// Pinhole camera with a rigid world-to-camera transform. Pixel (i, j) covers
/// [i, i+1) x [j, j+1); its center is at (i + 0.5, j + 0.5).
struct Camera {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  double near = 0.01;

  /// Throws InvalidInput when the camera violates its invariants.
  void validate() const;
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
};

/// Symmetric 3x3 matrix stored as its six unique entries (xx, xy, xz, yy, yz, zz).
struct Covariance3 {
  std::array<double, 6> v{};

  static Covariance3 from_matrix(const Mat3& m);
  Mat3 matrix() const;
};

Covariance3 covariance_from_rs(const Vec4& rotation, const Vec3& scale);

struct Projection {
  Vec2 mean;
  Mat2 cov;  // includes the dilation term
  Vec3 cam_point;
  Mat23 jw;  // J * W at the camera-space mean
  double depth = 0.0;
};

/// EWA projection of a 3D Gaussian. Returns nullopt when the mean is in front
/// of the near plane (culled; not an error).
std::optional<Projection> project_gaussian(const Covariance3& cov, const Vec3& position, const Camera& cam,
                                           double dilation = kCov2dDilation);

struct ProjectionGrad {
  Vec3 d_position;
  Mat3 d_cov;
};

ProjectionGrad project_gaussian_backward(const Projection& proj, const Mat3& cov, const Camera& cam,
                                         const Vec2& d_mean, const Mat2& d_cov2d);

struct SplatSample {
  Vec3 color;
  double alpha = 0.0;
};

/// Front-to-back compositing of depth-sorted samples over `background`.
Vec3 alpha_blend(std::span<const SplatSample> splats, const Vec3& background);

}  // namespace kgs
