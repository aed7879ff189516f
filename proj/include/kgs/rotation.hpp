#pragma once

#include "kgs/common.hpp"

namespace kgs {

/// Skew-symmetric matrix with hat(a) * b == a.cross(b).
Mat3 hat(const Vec3& w);

/// Rotation matrix of a unit quaternion (w, x, y, z).
Mat3 quat_to_matrix(const Vec4& q);

/// Gradient wrt the (unit) quaternion components given dL/dR.
Vec4 quat_to_matrix_backward(const Vec4& q, const Mat3& d_rot);

/// Unit quaternion with w >= 0 for a proper rotation matrix.
Vec4 matrix_to_quat(const Mat3& r);

/// Gradient of q / |q| pulled back to q.
Vec4 normalize_backward(const Vec4& q, const Vec4& d_unit);

/// Rodrigues exponential map. Returns exactly the identity at w = 0.
Mat3 exp_map_so3(const Vec3& w);

/// Gradient wrt w given dL/dR for R = exp_map_so3(w).
Vec3 exp_map_so3_backward(const Vec3& w, const Mat3& d_rot);

/// Gradient of v / (|v| + eps) pulled back to v.
Vec3 normalize_eps_backward(const Vec3& v, double eps, const Vec3& d_unit);

}  // namespace kgs
