#include "kgs/core.hpp"

namespace kgs {

void Camera::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw InvalidInput("camera: non-finite extrinsics");
  }
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(rotation.determinant() - 1.0) > 1e-6) {
    throw InvalidInput("camera: rotation is not a proper rotation");
  }
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw InvalidInput("camera: focal lengths must be positive");
  }
  if (!(near > 0.0)) {
    throw InvalidInput("camera: near plane must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw InvalidInput("camera: image size must be positive");
  }
}

Covariance3 Covariance3::from_matrix(const Mat3& m) {
  Covariance3 c;
  c.v = {m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), 0.5 * (m(0, 2) + m(2, 0)),
         m(1, 1), 0.5 * (m(1, 2) + m(2, 1)), m(2, 2)};
  return c;
}

Mat3 Covariance3::matrix() const {
  Mat3 m;
  m << v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5];
  return m;
}

Covariance3 covariance_from_rs(const Vec4& rotation, const Vec3& scale) {
  require_finite(rotation, "rotation");
  require_finite(scale, "scale");
  if ((scale.array() <= 0.0).any()) {
    throw InvalidInput("covariance_from_rs: scale must be positive");
  }
  const Mat3 r = quat_to_matrix(rotation.normalized());
  const Mat3 rs = r * scale.asDiagonal();
  return Covariance3::from_matrix(rs * rs.transpose());
}

std::optional<Projection> project_gaussian(const Covariance3& cov, const Vec3& position, const Camera& cam,
                                           double dilation) {
  const Vec3 p = cam.to_camera(position);
  if (!(p.z() >= cam.near)) {
    return std::nullopt;
  }
  const double iz = 1.0 / p.z();
  Mat23 j;
  j << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
  Projection out;
  out.cam_point = p;
  out.depth = p.z();
  out.mean = Vec2(cam.fx * p.x() * iz + cam.cx, cam.fy * p.y() * iz + cam.cy);
  out.jw = j * cam.rotation;
  out.cov = out.jw * cov.matrix() * out.jw.transpose();
  out.cov(0, 1) = out.cov(1, 0) = 0.5 * (out.cov(0, 1) + out.cov(1, 0));
  out.cov.diagonal().array() += dilation;
  return out;
}

ProjectionGrad project_gaussian_backward(const Projection& proj, const Mat3& cov, const Camera& cam,
                                         const Vec2& d_mean, const Mat2& d_cov2d) {
  const Mat2 g = 0.5 * (d_cov2d + d_cov2d.transpose());
  ProjectionGrad out;
  out.d_cov = proj.jw.transpose() * g * proj.jw;
  // d(M C M^T)/dM for symmetric C and G is 2 G M C.
  const Mat23 d_jw = 2.0 * g * proj.jw * cov;
  const Mat23 d_j = d_jw * cam.rotation.transpose();

  const Vec3& p = proj.cam_point;
  const double iz = 1.0 / p.z();
  const double iz2 = iz * iz;
  const double iz3 = iz2 * iz;
  Vec3 d_p = Vec3::Zero();
  // mean = (fx x/z + cx, fy y/z + cy)
  d_p.x() += d_mean.x() * cam.fx * iz;
  d_p.y() += d_mean.y() * cam.fy * iz;
  d_p.z() += -d_mean.x() * cam.fx * p.x() * iz2 - d_mean.y() * cam.fy * p.y() * iz2;
  // J entries
  d_p.z() += d_j(0, 0) * (-cam.fx * iz2);
  d_p.x() += d_j(0, 2) * (-cam.fx * iz2);
  d_p.z() += d_j(0, 2) * (2.0 * cam.fx * p.x() * iz3);
  d_p.z() += d_j(1, 1) * (-cam.fy * iz2);
  d_p.y() += d_j(1, 2) * (-cam.fy * iz2);
  d_p.z() += d_j(1, 2) * (2.0 * cam.fy * p.y() * iz3);
  out.d_position = cam.rotation.transpose() * d_p;
  return out;
}

Vec3 alpha_blend(std::span<const SplatSample> splats, const Vec3& background) {
  Vec3 c = Vec3::Zero();
  double t = 1.0;
  for (const SplatSample& s : splats) {
    c += s.color * (s.alpha * t);
    t *= 1.0 - s.alpha;
    if (t < kTransmittanceCutoff) {
      break;
    }
  }
  return c + t * background;
}

}  // namespace kgs
