#include "kgs/kinematics.hpp"

#include <string>

namespace kgs {

namespace {

Vec3 effective_velocity(const Vec3& v) { return v.norm() < kVelocityFloor ? Vec3::UnitZ() : v; }

Vec3 reference_axis(bool use_y) { return use_y ? Vec3::UnitY() : Vec3::UnitX(); }

void check_finite(const Mat3& m, const char* field) {
  if (!m.allFinite()) {
    throw NumericalError(std::string("refine_covariance: non-finite ") + field);
  }
}

void check_finite(const Vec3& m, const char* field) {
  if (!m.allFinite()) {
    throw NumericalError(std::string("refine_covariance: non-finite ") + field);
  }
}

}  // namespace

KinematicBasis kinematic_basis(const Vec3& velocity) {
  require_finite(velocity, "velocity");
  const Vec3 v = effective_velocity(velocity);
  KinematicBasis b;
  b.uz = v / v.norm();
  b.y_reference = std::abs(b.uz.x()) > 0.99;
  const Vec3 c = b.uz.cross(reference_axis(b.y_reference));
  b.ux = c / (c.norm() + kBasisEpsilon);
  b.uy = b.uz.cross(b.ux);
  return b;
}

Vec3 kinematic_basis_backward(const Vec3& velocity, const KinematicBasis& basis, const Vec3& d_ux, const Vec3& d_uy,
                              const Vec3& d_uz) {
  if (velocity.norm() < kVelocityFloor) {
    return Vec3::Zero();
  }
  // uy = uz x ux
  Vec3 g_uz = d_uz + basis.ux.cross(d_uy);
  const Vec3 g_ux = d_ux + d_uy.cross(basis.uz);
  // ux = c / (|c| + eps), c = uz x r_ref
  const Vec3 r = reference_axis(basis.y_reference);
  const Vec3 c = basis.uz.cross(r);
  const Vec3 g_c = normalize_eps_backward(c, kBasisEpsilon, g_ux);
  g_uz += r.cross(g_c);
  // uz = v / |v|
  return normalize_eps_backward(velocity, 0.0, g_uz);
}

Vec3 project_variances(const Covariance3& cov, const KinematicBasis& basis) {
  const Mat3 s = cov.matrix();
  return Vec3(basis.ux.dot(s * basis.ux), basis.uy.dot(s * basis.uy), basis.uz.dot(s * basis.uz));
}

double alignment_factor(const Vec3& rz, const Vec3& uz, double kappa) {
  return std::max(std::abs(rz.dot(uz)), sigmoid(kappa));
}

namespace {

double blur_longitudinal(double sigma_z, double extent, BlurModel model) {
  if (model == BlurModel::additive) {
    return sigma_z + extent;
  }
  return std::sqrt(sigma_z * sigma_z + extent * extent / 12.0);
}

}  // namespace

Vec3 blur_scales(const Vec3& sigma, const Vec3& velocity, double dt, double eta, BlurModel model) {
  return Vec3(sigma.x(), sigma.y(), blur_longitudinal(sigma.z(), eta * velocity.norm() * dt, model));
}

RefinedShape refine_covariance(const RefinementInputs& in, const RefineOptions& opt) {
  RefineTape tape;
  return refine_covariance(in, opt, &tape);
}

RefinedShape refine_covariance(const RefinementInputs& in, const RefineOptions& opt, RefineTape* tape) {
  RefineTape local;
  RefineTape& tp = tape != nullptr ? *tape : local;
  require_finite(in.velocity, "velocity");
  if (!(in.dt > 0.0)) {
    throw InvalidInput("refine_covariance: dt must be positive");
  }
  tp.cov_in = in.cov.matrix();
  check_finite(tp.cov_in, "cov");
  tp.basis = kinematic_basis(in.velocity);
  tp.variance = project_variances(in.cov, tp.basis);
  if (!(tp.variance.array() > 0.0).all()) {
    throw NumericalError("refine_covariance: non-positive projected variance (cov not SPD)");
  }
  tp.sigma = tp.variance.cwiseSqrt();
  tp.dot_rz_uz = in.rz.dot(tp.basis.uz);
  const double floor = sigmoid(in.kappa);
  tp.eta_from_alignment = std::abs(tp.dot_rz_uz) > floor;
  tp.eta = tp.eta_from_alignment ? std::abs(tp.dot_rz_uz) : floor;
  tp.speed = in.velocity.norm();
  tp.extent = opt.include_blur ? tp.eta * tp.speed * in.dt : 0.0;
  tp.s_prime = Vec3(tp.sigma.x(), tp.sigma.y(), blur_longitudinal(tp.sigma.z(), tp.extent, opt.model));
  const Vec3 log_scale = tp.s_prime.array().log().matrix() + opt.lambda_s * in.ds;
  tp.scale = log_scale.array().exp();
  check_finite(tp.scale, "scale");
  tp.exp_dr = exp_map_so3(in.dr);
  tp.rotation = tp.basis.matrix() * tp.exp_dr;
  check_finite(tp.rotation, "rotation");
  const Mat3 rs = tp.rotation * tp.scale.asDiagonal();
  tp.cov_out = rs * rs.transpose();
  tp.opacity_scale = opt.model == BlurModel::moment ? tp.sigma.z() / tp.s_prime.z() : 1.0;

  RefinedShape out;
  out.cov = Covariance3::from_matrix(tp.cov_out);
  out.rotation = tp.rotation;
  out.scale = tp.scale;
  out.opacity_scale = tp.opacity_scale;
  return out;
}

RefineGrad refine_covariance_backward(const RefinementInputs& in, const RefineOptions& opt, const RefineTape& tp,
                                      const Mat3& d_cov_out, double d_opacity_scale) {
  RefineGrad g;
  const Mat3 gs = 0.5 * (d_cov_out + d_cov_out.transpose());
  const Vec3 s2 = tp.scale.cwiseProduct(tp.scale);
  // Sigma_kin = R diag(S^2) R^T
  const Mat3 d_rot = 2.0 * gs * tp.rotation * s2.asDiagonal();
  const Vec3 d_s2 = (tp.rotation.transpose() * gs * tp.rotation).diagonal();
  const Vec3 d_log_scale = 2.0 * s2.cwiseProduct(d_s2);
  g.d_ds = opt.lambda_s * d_log_scale;
  Vec3 d_s_prime = d_log_scale.cwiseQuotient(tp.s_prime);

  Vec3 d_sigma = Vec3::Zero();
  if (opt.model == BlurModel::moment) {
    d_sigma.z() += d_opacity_scale / tp.s_prime.z();
    d_s_prime.z() += -d_opacity_scale * tp.sigma.z() / (tp.s_prime.z() * tp.s_prime.z());
  }

  // R = R~ exp(dr)
  const Mat3 d_basis = d_rot * tp.exp_dr.transpose();
  g.d_dr = exp_map_so3_backward(in.dr, tp.basis.matrix().transpose() * d_rot);

  double d_extent = 0.0;
  d_sigma.x() += d_s_prime.x();
  d_sigma.y() += d_s_prime.y();
  if (opt.model == BlurModel::additive) {
    d_sigma.z() += d_s_prime.z();
    d_extent = d_s_prime.z();
  } else {
    d_sigma.z() += d_s_prime.z() * tp.sigma.z() / tp.s_prime.z();
    d_extent = d_s_prime.z() * tp.extent / (12.0 * tp.s_prime.z());
  }

  Vec3 d_ux = d_basis.col(0), d_uy = d_basis.col(1), d_uz = d_basis.col(2);
  if (opt.include_blur) {
    const double d_eta = d_extent * tp.speed * in.dt;
    if (tp.speed > 0.0) {
      g.d_velocity += d_extent * tp.eta * in.dt * in.velocity / tp.speed;
    }
    if (tp.eta_from_alignment) {
      const double d_dot = d_eta * (tp.dot_rz_uz >= 0.0 ? 1.0 : -1.0);
      g.d_rz += d_dot * tp.basis.uz;
      d_uz += d_dot * in.rz;
    }
  }

  // sigma_k^2 = u_k^T Sigma u_k
  const Vec3 d_var = d_sigma.cwiseQuotient(2.0 * tp.sigma);
  const Vec3* axes[3] = {&tp.basis.ux, &tp.basis.uy, &tp.basis.uz};
  Vec3* d_axes[3] = {&d_ux, &d_uy, &d_uz};
  for (int k = 0; k < 3; ++k) {
    g.d_cov += d_var[k] * (*axes[k]) * axes[k]->transpose();
    *d_axes[k] += 2.0 * d_var[k] * (tp.cov_in * (*axes[k]));
  }
  g.d_velocity += kinematic_basis_backward(in.velocity, tp.basis, d_ux, d_uy, d_uz);
  return g;
}

Vec4 refined_rotation_quaternion(const Mat3& r) {
  if (!r.allFinite()) {
    throw InvalidInput("refined_rotation_quaternion: non-finite matrix");
  }
  if (r.determinant() < 0.0) {
    throw InvalidInput("refined_rotation_quaternion: determinant is negative");
  }
  return matrix_to_quat(r);
}

}  // namespace kgs
