#include "kgs/rotation.hpp"

namespace kgs {

Mat3 hat(const Vec3& w) {
  Mat3 k;
  k << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return k;
}

Mat3 quat_to_matrix(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

Vec4 quat_to_matrix_backward(const Vec4& q, const Mat3& g) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 d;
  d[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  d[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                w * g(2, 1) - 2.0 * x * g(2, 2));
  d[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                z * g(2, 1) - 2.0 * y * g(2, 2));
  d[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2) +
                x * g(2, 0) + y * g(2, 1));
  return d;
}

Vec4 matrix_to_quat(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  Vec4 out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0.0) {
    out = -out;
  }
  return out;
}

Vec4 normalize_backward(const Vec4& q, const Vec4& d_unit) {
  const double n = q.norm();
  const Vec4 u = q / n;
  return (d_unit - u * u.dot(d_unit)) / n;
}

namespace {

struct ExpCoefficients {
  double a;  // sin(t)/t
  double b;  // (1 - cos(t))/t^2
  double c;  // (t - sin(t))/t^3
};

ExpCoefficients exp_coefficients(double theta_sq) {
  if (theta_sq < 1e-8) {
    const double t4 = theta_sq * theta_sq;
    return {1.0 - theta_sq / 6.0 + t4 / 120.0, 0.5 - theta_sq / 24.0 + t4 / 720.0,
            1.0 / 6.0 - theta_sq / 120.0 + t4 / 5040.0};
  }
  const double theta = std::sqrt(theta_sq);
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  return {s / theta, (1.0 - c) / theta_sq, (theta - s) / (theta_sq * theta)};
}

}  // namespace

Mat3 exp_map_so3(const Vec3& w) {
  const ExpCoefficients k = exp_coefficients(w.squaredNorm());
  const Mat3 wx = hat(w);
  return Mat3::Identity() + k.a * wx + k.b * (wx * wx);
}

Vec3 exp_map_so3_backward(const Vec3& w, const Mat3& d_rot) {
  const ExpCoefficients k = exp_coefficients(w.squaredNorm());
  const Mat3 wx = hat(w);
  const Mat3 r = Mat3::Identity() + k.a * wx + k.b * (wx * wx);
  const Mat3 a = r.transpose() * d_rot;
  const Vec3 g(a(2, 1) - a(1, 2), a(0, 2) - a(2, 0), a(1, 0) - a(0, 1));
  // Right Jacobian: exp(w + d) ~= exp(w) exp(Jr d).
  const Mat3 jr = Mat3::Identity() - k.b * wx + k.c * (wx * wx);
  return jr.transpose() * g;
}

Vec3 normalize_eps_backward(const Vec3& v, double eps, const Vec3& d_unit) {
  const double n = v.norm();
  const double m = n + eps;
  Vec3 d = d_unit / m;
  if (n > 0.0) {
    d -= v * (v.dot(d_unit) / (n * m * m));
  }
  return d;
}

}  // namespace kgs
