#pragma once

// Registration of the odometry frame O to ECEF together with the
// IMU-to-antenna lever arm t_IA, minimizing
//   sum_i || T_EO * T_OI_i * [t_IA; 1] - p_i ||^2
// over GNSS positions p_i and time-matched odometry poses T_OI_i.

#include <span>
#include <vector>

#include "rtkvio/frames.hpp"

namespace rtkvio {

// Pose at time t: translation interpolated linearly, rotation along the
// geodesic between the bracketing samples. Covariances, when both samples
// carry one, are interpolated linearly. Throws kInterpolationGap for
// extrapolation or a bracketing gap above `max_gap`.
Pose interpolate_pose(std::span<const TimedPose> trajectory, double t,
                      double max_gap = 0.5);

struct Excitation {
  double fer = 1.0;         // largest eigenvalue / eigenvalue sum
  bool degenerate = false;  // zero total spread

  bool sufficient(double threshold = 0.97) const {
    return !degenerate && fer < threshold;
  }
};

// First eigenvalue ratio of the positions' sample covariance. Needs >= 3
// positions (kInvalidInput otherwise).
Excitation excitation_fer(std::span<const Vec3> positions);

struct MatchedSample {
  double time = 0.0;
  EcefPosition gnss;
  Pose vio;  // T_OI at `time`
};

struct AlignmentResult {
  Pose t_eo;
  Vec3 lever_arm = Vec3::Zero();  // t_IA, IMU frame
  double rmse = 0.0;
  double fer = 1.0;
  bool lever_arm_estimated = false;  // false when held at its prior
  int iterations = 0;
};

struct AlignOptions {
  double fer_threshold = 0.97;
  std::size_t min_samples = 10;
  double relative_tolerance = 1e-10;
  int max_iterations = 100;
  int max_rejected_steps = 10;
  // Jacobi-scaled normal-matrix condition number above which t_IA is
  // considered unobservable and held at `prior_lever_arm`.
  double max_condition = 1e8;
  Vec3 prior_lever_arm = Vec3::Zero();
};

// Residual RMSE of the alignment cost, meters.
double alignment_rmse(std::span<const MatchedSample> samples, const Pose& t_eo,
                      const Vec3& lever_arm);

// Closed-form rigid registration with the lever arm held fixed. Needs >= 3
// samples.
AlignmentResult align_fixed_lever_arm(std::span<const MatchedSample> samples,
                                      const Vec3& lever_arm);

// Pass 1: closed-form T_EO with t_IA = 0. Pass 2: joint damped Gauss-Newton
// over T_EO (left tangent perturbation) and t_IA seeded from pass 1.
// Throws kExcitation when the GNSS positions fail the FER gate or there are
// fewer than `min_samples` samples, kNoConvergence after
// `max_rejected_steps` consecutive rejected steps.
AlignmentResult align_two_pass(std::span<const MatchedSample> samples,
                               const AlignOptions& options = {});

struct RealignOptions {
  double max_rmse = 0.1;
  double fer_threshold = 0.97;
  std::size_t min_samples = 10;
};

bool realignment_gate(double rmse, double fer, const RealignOptions& options = {});

struct RealignDecision {
  bool realign = false;
  AlignmentResult alignment;  // the adopted alignment (current one on keep)
};

// Re-estimates T_EO over `window` with the current lever arm held fixed and
// adopts it only if it passes `realignment_gate`.
RealignDecision realign_policy(const AlignmentResult& current,
                               std::span<const MatchedSample> window,
                               const RealignOptions& options = {});

}  // namespace rtkvio
