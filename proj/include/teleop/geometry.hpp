#pragma once

// Frame algebra and pinhole camera geometry.

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "teleop/error.hpp"

namespace teleop::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Point3 = Eigen::Vector3d;

inline constexpr double kRejectTolerance = 1e-6;
inline constexpr double kExactTolerance = 1e-9;

inline bool is_finite(const Vec3& v) { return v.allFinite(); }

inline Mat3 rot_x(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix(); }

/// Largest absolute entry of RᵀR − I.
inline double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

/// Accepts a rotation from an external estimator. Deviations up to 1e-6 are
/// projected onto the nearest rotation; anything worse, or a reflection, is
/// rejected.
inline Mat3 validated_rotation(const Mat3& r) {
  if (!r.allFinite()) {
    throw Error(ErrorCode::NonOrthonormalRotation, "rotation has non-finite entries");
  }
  const double dev = orthonormality_error(r);
  if (dev > kRejectTolerance) {
    throw Error(ErrorCode::NonOrthonormalRotation,
                "|R^T R - I| = " + std::to_string(dev) + " exceeds 1e-6");
  }
  const double det = r.determinant();
  if (det < 0.0) {
    throw Error(ErrorCode::NonOrthonormalRotation, "det(R) is negative (left-handed frame)");
  }
  if (dev <= kExactTolerance && std::abs(det - 1.0) <= kExactTolerance) return r;
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw Error(ErrorCode::InvalidConfig, "focal lengths must be positive");
    if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height)) {
      throw Error(ErrorCode::InvalidConfig, "principal point must lie inside the image");
    }
  }
};

/// A pixel with its raw depth reading. depth_mm == 0 means no depth.
struct PixelDepthPoint {
  double u = 0.0;
  double v = 0.0;
  int depth_mm = 0;

  bool operator==(const PixelDepthPoint&) const = default;
};

class RigidTransform {
 public:
  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

  /// Validates (and if needed re-orthonormalizes) the rotation.
  RigidTransform(const Mat3& rotation, const Vec3& translation)
      : rotation_(validated_rotation(rotation)), translation_(translation) {
    if (!translation_.allFinite()) throw Error(ErrorCode::InvalidConfig, "translation has non-finite entries");
  }

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return RigidTransform(Mat3::Identity(), t); }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Point3 operator*(const Point3& p) const { return rotation_ * p + translation_; }

  bool operator==(const RigidTransform& other) const {
    return rotation_ == other.rotation_ && translation_ == other.translation_;
  }

 private:
  struct Trusted {};
  RigidTransform(const Mat3& rotation, const Vec3& translation, Trusted)
      : rotation_(rotation), translation_(translation) {}

  friend RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
  friend RigidTransform invert_pose(const Mat3& rotation, const Vec3& translation);

  Mat3 rotation_;
  Vec3 translation_;
};

/// [R t; 0 1]⁻¹ = [Rᵀ −Rᵀt; 0 1].
inline RigidTransform invert_pose(const Mat3& rotation, const Vec3& translation) {
  const Mat3 r = validated_rotation(rotation);
  const Mat3 rt = r.transpose();
  return RigidTransform(rt, -(rt * translation), RigidTransform::Trusted{});
}

inline RigidTransform invert(const RigidTransform& t) { return invert_pose(t.rotation(), t.translation()); }

inline Point3 apply_transform(const RigidTransform& t, const Point3& p) { return t * p; }

/// compose(a, b) maps p to a(b(p)).
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return RigidTransform(a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation(),
                        RigidTransform::Trusted{});
}

/// Pinhole back-projection of a pixel with depth in millimeters into the
/// camera frame, in meters.
inline Point3 back_project(const PixelDepthPoint& p, const CameraIntrinsics& k) {
  if (p.depth_mm <= 0) throw Error(ErrorCode::InvalidDepth, "depth is zero");
  const double z = static_cast<double>(p.depth_mm) / 1000.0;
  return {(p.u - k.cx) * z / k.fx, (p.v - k.cy) * z / k.fy, z};
}

/// Forward projection, the inverse of back_project for a given metric depth.
struct Projection {
  double u;
  double v;
  double depth_m;
};

inline Projection project(const Point3& p, const CameraIntrinsics& k) {
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy, p.z()};
}

/// Rotation about the x-axis only: (qx, 0, 0, qw).
class RollQuaternion {
 public:
  RollQuaternion() = default;

  /// Roll quaternion for a palm angle phi: (−sin(φ/2), 0, 0, cos(φ/2)).
  static RollQuaternion from_palm_angle(double phi) {
    return RollQuaternion(-std::sin(phi / 2.0), std::cos(phi / 2.0));
  }

  /// Rotation by angle about +x.
  static RollQuaternion from_roll(double angle) { return RollQuaternion(std::sin(angle / 2.0), std::cos(angle / 2.0)); }

  /// Used when decoding; the components must already be unit norm.
  static RollQuaternion from_components(double qx, double qw) {
    const double norm = std::hypot(qx, qw);
    if (!std::isfinite(norm) || std::abs(norm - 1.0) > kExactTolerance) {
      throw Error(ErrorCode::InvalidConfig, "roll quaternion is not unit norm");
    }
    return RollQuaternion(qx, qw);
  }

  double qx() const { return qx_; }
  double qy() const { return 0.0; }
  double qz() const { return 0.0; }
  double qw() const { return qw_; }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(qw_, qx_, 0.0, 0.0); }
  Mat3 rotation() const { return quaternion().toRotationMatrix(); }

  bool operator==(const RollQuaternion&) const = default;

 private:
  RollQuaternion(double qx, double qw) : qx_(qx), qw_(qw) {}

  double qx_ = 0.0;
  double qw_ = 1.0;
};

}  // namespace teleop::geometry
