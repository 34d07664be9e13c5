#pragma once

#include <cmath>

namespace mmhar {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

/// Orientation quaternion stored as (x, y, z, w); w is the scalar part.
struct Quaternion {
  double x = 0.0, y = 0.0, z = 0.0, w = 1.0;

  static constexpr Quaternion identity() { return {0.0, 0.0, 0.0, 1.0}; }
  Vec3 vec() const { return {x, y, z}; }
  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

inline double norm(const Quaternion& q) {
  return std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z + q.w * q.w);
}

inline constexpr double kUnitTolerance = 1e-6;
/// Largest |‖q‖ - 1| that rotate_vec silently renormalizes.
inline constexpr double kRenormTolerance = 1e-3;

/// Hamilton product q1 ⊗ q2.
Quaternion qmul(const Quaternion& q1, const Quaternion& q2);
Quaternion qconj(const Quaternion& q);

/// Throws on zero or non-finite norm.
Quaternion normalized(const Quaternion& q);
Vec3 normalized(Vec3 v);

/// Rotates v by q: the vector part of q ⊗ [v, 0] ⊗ q*. q must be within
/// kRenormTolerance of unit norm.
Vec3 rotate_vec(const Quaternion& q, Vec3 v);

/// Rotation of theta radians about axis (normalized internally).
Quaternion axis_angle_quat(Vec3 axis, double theta);

/// Reflects v across the plane through the origin with unit normal n.
Vec3 mirror_vec(Vec3 v, Vec3 n);

/// Unit quaternion rotating unit vector from onto unit vector to. Built from
/// [from × to, 1 + from·to] and normalized; antipodal inputs get a 180°
/// rotation about a fixed axis orthogonal to from.
Quaternion transition_quat(Vec3 from, Vec3 to);

/// Deterministic unit vector orthogonal to v (v non-zero).
Vec3 orthogonal_axis(Vec3 v);

}  // namespace mmhar
