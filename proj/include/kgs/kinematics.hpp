#pragma once

#include "kgs/core.hpp"

namespace kgs {

inline constexpr double kBasisEpsilon = 1e-8;
inline constexpr double kVelocityFloor = 1e-6;
inline constexpr double kDefaultKappa = -2.1972;  // sigmoid(kappa) ~= 0.1
inline constexpr double kDefaultLambdaS = 0.1;

/// Right-handed orthonormal frame whose z column follows the velocity.
struct KinematicBasis {
  Vec3 ux;
  Vec3 uy;
  Vec3 uz;
  bool y_reference = false;  // true when r_ref = (0,1,0) was selected

  Mat3 matrix() const {
    Mat3 m;
    m.col(0) = ux;
    m.col(1) = uy;
    m.col(2) = uz;
    return m;
  }
};

/// How the motion extent enters the longitudinal scale.
enum class BlurModel {
  /// s_z = sigma_z + eta |v| dt, opacity unchanged.
  additive,
  /// s_z = sqrt(sigma_z^2 + (eta |v| dt)^2 / 12), opacity scaled by sigma_z / s_z
  /// so the footprint integrates to the same mass as the box-averaged one.
  moment,
};

struct RefinementInputs {
  Covariance3 cov;  // predicted, pre-refinement
  Vec3 velocity = Vec3::Zero();
  double dt = 0.0;
  Vec3 ds = Vec3::Zero();
  Vec3 dr = Vec3::Zero();
  Vec3 rz = Vec3::UnitZ();
  double kappa = kDefaultKappa;
};

struct RefineOptions {
  double lambda_s = kDefaultLambdaS;
  BlurModel model = BlurModel::moment;
  /// When false the motion extent is dropped (sharp, instantaneous shape).
  bool include_blur = true;
};

struct RefinedShape {
  Covariance3 cov;
  Mat3 rotation;
  Vec3 scale;                 // diagonal of S
  double opacity_scale = 1.0; // multiplier on the primitive's opacity
};

KinematicBasis kinematic_basis(const Vec3& velocity);

/// (u_k^T Sigma u_k) for k = x, y, z.
Vec3 project_variances(const Covariance3& cov, const KinematicBasis& basis);

/// eta = max(|r_z . u_z|, sigmoid(kappa)).
double alignment_factor(const Vec3& rz, const Vec3& uz, double kappa);

/// Longitudinal blur applied to per-axis standard deviations.
Vec3 blur_scales(const Vec3& sigma, const Vec3& velocity, double dt, double eta, BlurModel model = BlurModel::additive);

RefinedShape refine_covariance(const RefinementInputs& in, const RefineOptions& opt = {});

/// Canonical (w >= 0) quaternion of a proper rotation matrix.
Vec4 refined_rotation_quaternion(const Mat3& r);

/// Intermediates of refine_covariance retained for the backward pass.
struct RefineTape {
  KinematicBasis basis;
  Mat3 cov_in;
  Vec3 variance;
  Vec3 sigma;
  double dot_rz_uz = 0.0;
  double eta = 0.0;
  bool eta_from_alignment = false;
  double speed = 0.0;
  double extent = 0.0;  // eta |v| dt, zero when blur is excluded
  Vec3 s_prime;
  Vec3 scale;
  Mat3 exp_dr;
  Mat3 rotation;
  Mat3 cov_out;
  double opacity_scale = 1.0;
};

RefinedShape refine_covariance(const RefinementInputs& in, const RefineOptions& opt, RefineTape* tape);

struct RefineGrad {
  Mat3 d_cov = Mat3::Zero();
  Vec3 d_velocity = Vec3::Zero();
  Vec3 d_rz = Vec3::Zero();
  Vec3 d_ds = Vec3::Zero();
  Vec3 d_dr = Vec3::Zero();
};

/// Pulls dL/dSigma_kin and dL/d(opacity_scale) back to the refinement inputs.
/// The r_ref branch and the eta max are held at their forward-time choice.
RefineGrad refine_covariance_backward(const RefinementInputs& in, const RefineOptions& opt, const RefineTape& tape,
                                      const Mat3& d_cov_out, double d_opacity_scale);

/// Gradient of the basis columns pulled back to the velocity.
Vec3 kinematic_basis_backward(const Vec3& velocity, const KinematicBasis& basis, const Vec3& d_ux, const Vec3& d_uy,
                              const Vec3& d_uz);

}  // namespace kgs
