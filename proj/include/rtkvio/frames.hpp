#pragma once

// Rigid-body geometry shared by every estimator in the library.
//
// Conventions (fixed for the whole code base):
//  * Tangent vectors are ordered rotation first, translation second:
//    xi = [theta(3); rho(3)].
//  * Perturbations are left-multiplicative: a perturbed pose is exp(xi) * T.
//    Pose covariances are expressed over that xi.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>

namespace rtkvio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using Mat12 = Eigen::Matrix<double, 12, 12>;

// Position in the earth-centered-earth-fixed frame, meters.
class EcefPosition {
 public:
  EcefPosition() : xyz_(Vec3::Zero()) {}
  explicit EcefPosition(const Vec3& xyz) : xyz_(xyz) {}
  EcefPosition(double x, double y, double z) : xyz_(x, y, z) {}

  const Vec3& vec() const { return xyz_; }
  double x() const { return xyz_.x(); }
  double y() const { return xyz_.y(); }
  double z() const { return xyz_.z(); }

  double distance_to(const EcefPosition& other) const {
    return (xyz_ - other.xyz_).norm();
  }

  friend EcefPosition operator+(const EcefPosition& p, const Vec3& d) {
    return EcefPosition(p.xyz_ + d);
  }
  friend Vec3 operator-(const EcefPosition& a, const EcefPosition& b) {
    return a.xyz_ - b.xyz_;
  }
  friend bool operator==(const EcefPosition& a, const EcefPosition& b) {
    return a.xyz_ == b.xyz_;
  }

 private:
  Vec3 xyz_;
};

// Finite and within [6.2e6, 2.7e7] m of the geocenter; throws kInvalidInput.
void validate_ecef(const EcefPosition& p);

struct Twist {
  Vec6 coeffs = Vec6::Zero();

  Twist() = default;
  explicit Twist(const Vec6& v) : coeffs(v) {}
  Twist(const Vec3& rotation, const Vec3& translation) {
    coeffs << rotation, translation;
  }

  Vec3 rotation() const { return coeffs.head<3>(); }
  Vec3 translation() const { return coeffs.tail<3>(); }
};

class Pose {
 public:
  Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Pose(const Mat3& rotation, const Vec3& translation,
       std::optional<Mat6> covariance = std::nullopt)
      : rotation_(rotation),
        translation_(translation),
        covariance_(std::move(covariance)) {}

  static Pose identity() { return Pose(); }
  static Pose from_quaternion(const Eigen::Quaterniond& q,
                              const Vec3& translation,
                              std::optional<Mat6> covariance = std::nullopt);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  const std::optional<Mat6>& covariance() const { return covariance_; }

  void set_covariance(std::optional<Mat6> cov) { covariance_ = std::move(cov); }

  // Inverse transform; the covariance is dropped.
  Pose inverse() const;

  Vec3 transform(const Vec3& point) const {
    return rotation_ * point + translation_;
  }

  // Checks orthonormality, det(R) = +1 and covariance symmetry/PSD.
  void validate() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
  std::optional<Mat6> covariance_;
};

Mat3 skew(const Vec3& v);

Mat3 so3_exp(const Vec3& theta);
// Rotation vector of R; throws kSingularity when the angle is within 1e-6 of pi.
Vec3 so3_log(const Mat3& rotation);

// a * b as rigid transforms. Covariances are not composed.
Pose compose(const Pose& a, const Pose& b);

Pose exp(const Twist& xi);
Twist log(const Pose& pose);

// Jacobians of t = translation(pose_j) - translation(pose_i) with respect to
// left perturbations of pose_i and pose_j.
struct TranslationJacobians {
  Mat36 wrt_first;
  Mat36 wrt_second;
};

TranslationJacobians incremental_translation_jacobians(const Pose& pose_i,
                                                       const Pose& pose_j);

struct TimedPose {
  double time = 0.0;
  Pose pose;
};

// One odometry sample as it is stored on disk. The quaternion is kept so that
// writing and re-reading a trajectory reproduces identical poses.
struct VioSample {
  double time = 0.0;
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
  Vec3 position = Vec3::Zero();
  std::optional<Mat6> covariance;

  TimedPose to_timed_pose() const {
    return {time, Pose::from_quaternion(orientation, position, covariance)};
  }
};

}  // namespace rtkvio
