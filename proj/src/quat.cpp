#include "mmhar/quat.hpp"

#include <string>

#include "mmhar/common.hpp"

namespace mmhar {

Quaternion qmul(const Quaternion& a, const Quaternion& b) {
  return {
      a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
      a.w * b.y + a.y * b.w + a.z * b.x - a.x * b.z,
      a.w * b.z + a.z * b.w + a.x * b.y - a.y * b.x,
      a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
  };
}

Quaternion qconj(const Quaternion& q) { return {-q.x, -q.y, -q.z, q.w}; }

Quaternion normalized(const Quaternion& q) {
  double n = norm(q);
  if (!std::isfinite(n) || n == 0.0) {
    fail(ErrorKind::Data, "cannot normalize a zero or non-finite quaternion");
  }
  return {q.x / n, q.y / n, q.z / n, q.w / n};
}

Vec3 normalized(Vec3 v) {
  double n = norm(v);
  if (!std::isfinite(n) || n == 0.0) {
    fail(ErrorKind::Data, "cannot normalize a zero or non-finite vector");
  }
  return (1.0 / n) * v;
}

Vec3 rotate_vec(const Quaternion& q, Vec3 v) {
  double n = norm(q);
  if (!std::isfinite(n) || std::abs(n - 1.0) > kRenormTolerance) {
    fail(ErrorKind::Data,
         "rotate_vec needs a unit quaternion, got norm " + format_double(n));
  }
  Quaternion u = n == 1.0 ? q : Quaternion{q.x / n, q.y / n, q.z / n, q.w / n};
  Quaternion r = qmul(qmul(u, Quaternion{v.x, v.y, v.z, 0.0}), qconj(u));
  return r.vec();
}

Quaternion axis_angle_quat(Vec3 axis, double theta) {
  Vec3 a = normalized(axis);
  double s = std::sin(theta / 2.0);
  return {a.x * s, a.y * s, a.z * s, std::cos(theta / 2.0)};
}

Vec3 mirror_vec(Vec3 v, Vec3 n) {
  if (std::abs(norm(n) - 1.0) > kUnitTolerance) {
    fail(ErrorKind::Data, "mirror plane normal must be a unit vector");
  }
  return v - (2.0 * dot(v, n)) * n;
}

Vec3 orthogonal_axis(Vec3 v) {
  // Gram-Schmidt on the basis vector least aligned with v.
  Vec3 u = normalized(v);
  double ax = std::abs(u.x), ay = std::abs(u.y), az = std::abs(u.z);
  Vec3 basis = ax <= ay && ax <= az ? Vec3{1, 0, 0}
               : ay <= az           ? Vec3{0, 1, 0}
                                    : Vec3{0, 0, 1};
  return normalized(basis - dot(basis, u) * u);
}

Quaternion transition_quat(Vec3 from, Vec3 to) {
  if (std::abs(norm(from) - 1.0) > kUnitTolerance ||
      std::abs(norm(to) - 1.0) > kUnitTolerance) {
    fail(ErrorKind::Data, "transition_quat needs unit direction vectors");
  }
  double d = dot(from, to);
  if (d <= -1.0 + 1e-9) {
    Vec3 axis = orthogonal_axis(from);
    return {axis.x, axis.y, axis.z, 0.0};
  }
  Vec3 c = cross(from, to);
  return normalized(Quaternion{c.x, c.y, c.z, 1.0 + d});
}

}  // namespace mmhar
