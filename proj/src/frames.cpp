#include "rtkvio/frames.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "rtkvio/error.hpp"

namespace rtkvio {

namespace {

constexpr double kMinEcefRadius = 6.2e6;
constexpr double kMaxEcefRadius = 2.7e7;
constexpr double kSmallAngle = 1e-5;

// Below this angle the Jacobian coefficients come from their series; the
// closed forms cancel catastrophically (error ~ eps / angle^2).
constexpr double kSeriesAngle = 0.1;

// V(theta): maps the translational tangent part to the pose translation.
Mat3 left_jacobian(const Vec3& theta) {
  const double a2 = theta.squaredNorm();
  const double angle = std::sqrt(a2);
  const Mat3 k = skew(theta);
  double b = 0.0;  // (1 - cos) / angle^2
  double c = 0.0;  // (angle - sin) / angle^3
  if (angle < kSeriesAngle) {
    b = 0.5 - a2 / 24.0 * (1.0 - a2 / 30.0 * (1.0 - a2 / 56.0 * (1.0 - a2 / 90.0)));
    c = 1.0 / 6.0 - a2 / 120.0 * (1.0 - a2 / 42.0 * (1.0 - a2 / 72.0 * (1.0 - a2 / 110.0)));
  } else {
    const double s = std::sin(0.5 * angle);
    b = 2.0 * s * s / a2;
    c = (angle - std::sin(angle)) / (a2 * angle);
  }
  return Mat3::Identity() + b * k + c * k * k;
}

Mat3 inverse_left_jacobian(const Vec3& theta) {
  const double a2 = theta.squaredNorm();
  const double angle = std::sqrt(a2);
  const Mat3 k = skew(theta);
  double c = 0.0;  // (1 - (angle/2) cot(angle/2)) / angle^2
  if (angle < kSeriesAngle) {
    c = 1.0 / 12.0 + a2 / 720.0 + a2 * a2 / 30240.0 + a2 * a2 * a2 / 1209600.0;
  } else {
    const double h = 0.5 * angle;
    c = (1.0 - h * std::cos(h) / std::sin(h)) / a2;
  }
  return Mat3::Identity() - 0.5 * k + c * k * k;
}

}  // namespace

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kOrdering: return "ordering";
    case ErrorCode::kEpochMismatch: return "epoch-mismatch";
    case ErrorCode::kNoCommonSatellite: return "no-common-satellite";
    case ErrorCode::kSingularity: return "singularity";
    case ErrorCode::kDecomposition: return "decomposition-failure";
    case ErrorCode::kSearchOverflow: return "search-overflow";
    case ErrorCode::kInterpolationGap: return "interpolation-gap";
    case ErrorCode::kExcitation: return "insufficient-excitation";
    case ErrorCode::kNoConvergence: return "no-convergence";
    case ErrorCode::kInitialization: return "initialization-failure";
    case ErrorCode::kEmptyEvaluation: return "empty-evaluation";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

void validate_ecef(const EcefPosition& p) {
  if (!p.vec().allFinite()) {
    throw Error(ErrorCode::kInvalidInput, "ECEF position is not finite");
  }
  const double r = p.vec().norm();
  if (r < kMinEcefRadius || r > kMaxEcefRadius) {
    std::ostringstream os;
    os << "ECEF position radius " << r << " m outside [" << kMinEcefRadius
       << ", " << kMaxEcefRadius << "]";
    throw Error(ErrorCode::kInvalidInput, os.str());
  }
}

Pose Pose::from_quaternion(const Eigen::Quaterniond& q, const Vec3& translation,
                           std::optional<Mat6> covariance) {
  return Pose(q.toRotationMatrix(), translation, std::move(covariance));
}

Pose Pose::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return Pose(rt, -rt * translation_);
}

void Pose::validate() const {
  if (!rotation_.allFinite() || !translation_.allFinite()) {
    throw Error(ErrorCode::kInvalidInput, "pose is not finite");
  }
  if ((rotation_.transpose() * rotation_ - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
    throw Error(ErrorCode::kInvalidInput, "pose rotation is not orthonormal");
  }
  if (std::abs(rotation_.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidInput, "pose rotation is not proper");
  }
  if (covariance_) {
    const Mat6& c = *covariance_;
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      throw Error(ErrorCode::kInvalidInput, "pose covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat6> es(c, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-12) {
      throw Error(ErrorCode::kInvalidInput, "pose covariance is not PSD");
    }
  }
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 so3_exp(const Vec3& theta) {
  const double angle = theta.norm();
  if (angle < kSmallAngle) {
    const Mat3 k = skew(theta);
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  return Eigen::AngleAxisd(angle, theta / angle).toRotationMatrix();
}

Vec3 so3_log(const Mat3& r) {
  const Vec3 vee(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double sin_angle = 0.5 * vee.norm();
  const double cos_angle = 0.5 * (r.trace() - 1.0);
  const double angle = std::atan2(sin_angle, cos_angle);
  if (angle > std::numbers::pi - 1e-6) {
    throw Error(ErrorCode::kSingularity, "rotation log is singular near angle pi");
  }
  if (angle < kSmallAngle) {
    return 0.5 * (1.0 + angle * angle / 6.0) * vee;
  }
  return angle / (2.0 * std::sin(angle)) * vee;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation() * b.rotation(),
              a.rotation() * b.translation() + a.translation());
}

Pose exp(const Twist& xi) {
  const Vec3 theta = xi.rotation();
  return Pose(so3_exp(theta), left_jacobian(theta) * xi.translation());
}

Twist log(const Pose& pose) {
  const Vec3 theta = so3_log(pose.rotation());
  return Twist(theta, inverse_left_jacobian(theta) * pose.translation());
}

TranslationJacobians incremental_translation_jacobians(const Pose& pose_i,
                                                       const Pose& pose_j) {
  // Left perturbation: d/d(theta) of (exp(xi) T).t = -[t]x, d/d(rho) = I.
  TranslationJacobians j;
  j.wrt_first << skew(pose_i.translation()), -Mat3::Identity();
  j.wrt_second << -skew(pose_j.translation()), Mat3::Identity();
  return j;
}

}  // namespace rtkvio
