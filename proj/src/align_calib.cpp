#include "rtkvio/align_calib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "rtkvio/error.hpp"

namespace rtkvio {

namespace {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;

// Rigid transform taking `source` onto `target` in the least-squares sense.
Pose kabsch(std::span<const Vec3> source, std::span<const Vec3> target) {
  const double n = static_cast<double>(source.size());
  Vec3 cs = Vec3::Zero();
  Vec3 ct = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    cs += source[i];
    ct += target[i];
  }
  cs /= n;
  ct /= n;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    h += (source[i] - cs) * (target[i] - ct).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 fix = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) fix(2, 2) = -1.0;
  const Mat3 r = svd.matrixV() * fix * svd.matrixU().transpose();
  return Pose(r, ct - r * cs);
}

Vec3 antenna_in_odometry(const Pose& vio, const Vec3& lever_arm) {
  return vio.transform(lever_arm);
}

double cost(std::span<const MatchedSample> samples, const Vec3& shift, const Pose& t_eo,
            const Vec3& lever_arm) {
  double c = 0.0;
  for (const auto& s : samples) {
    const Vec3 w = t_eo.transform(antenna_in_odometry(s.vio, lever_arm));
    c += (w - (s.gnss.vec() - shift)).squaredNorm();
  }
  return c;
}

// Gauss-Newton normal equations of the shifted problem. Columns: left
// rotation perturbation, translation, lever arm.
void normal_equations(std::span<const MatchedSample> samples, const Vec3& shift,
                      const Pose& t_eo, const Vec3& lever_arm, Mat9& n, Vec9& b) {
  n.setZero();
  b.setZero();
  Eigen::Matrix<double, 3, 9> j;
  for (const auto& s : samples) {
    const Vec3 w = t_eo.transform(antenna_in_odometry(s.vio, lever_arm));
    const Vec3 r = w - (s.gnss.vec() - shift);
    j.block<3, 3>(0, 0) = -skew(w);
    j.block<3, 3>(0, 3) = Mat3::Identity();
    j.block<3, 3>(0, 6) = t_eo.rotation() * s.vio.rotation();
    n += j.transpose() * j;
    b -= j.transpose() * r;
  }
}

double scaled_condition(const Mat9& n) {
  const Vec9 d = n.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  const Mat9 s = d.asDiagonal() * n * d.asDiagonal();
  const Eigen::SelfAdjointEigenSolver<Mat9> eig(s, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

Vec3 centroid(std::span<const MatchedSample> samples) {
  Vec3 c = Vec3::Zero();
  for (const auto& s : samples) c += s.gnss.vec();
  return c / static_cast<double>(samples.size());
}

std::vector<Vec3> gnss_positions(std::span<const MatchedSample> samples) {
  std::vector<Vec3> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.gnss.vec());
  return out;
}

}  // namespace

Pose interpolate_pose(std::span<const TimedPose> trajectory, double t, double max_gap) {
  if (trajectory.empty() || !std::isfinite(t) || t < trajectory.front().time ||
      t > trajectory.back().time) {
    throw Error(ErrorCode::kInterpolationGap,
                "pose requested outside the trajectory at t=" + std::to_string(t));
  }
  auto hi = std::lower_bound(trajectory.begin(), trajectory.end(), t,
                             [](const TimedPose& p, double v) { return p.time < v; });
  if (hi->time == t) return hi->pose;
  const auto lo = std::prev(hi);
  const double gap = hi->time - lo->time;
  if (gap > max_gap) {
    throw Error(ErrorCode::kInterpolationGap,
                "trajectory gap of " + std::to_string(gap) + " s around t=" + std::to_string(t));
  }
  const double a = (t - lo->time) / gap;
  const Mat3& r0 = lo->pose.rotation();
  const Mat3 r = r0 * so3_exp(a * so3_log(r0.transpose() * hi->pose.rotation()));
  const Vec3 p = (1.0 - a) * lo->pose.translation() + a * hi->pose.translation();
  std::optional<Mat6> cov;
  if (lo->pose.covariance() && hi->pose.covariance()) {
    cov = (1.0 - a) * *lo->pose.covariance() + a * *hi->pose.covariance();
  }
  return Pose(r, p, cov);
}

Excitation excitation_fer(std::span<const Vec3> positions) {
  if (positions.size() < 3) {
    throw Error(ErrorCode::kInvalidInput, "excitation check needs at least 3 positions");
  }
  Vec3 mean = Vec3::Zero();
  for (const auto& p : positions) mean += p;
  mean /= static_cast<double>(positions.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : positions) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(positions.size());

  const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov, Eigen::EigenvaluesOnly);
  const Vec3 ev = eig.eigenvalues().cwiseMax(0.0);
  const double total = ev.sum();
  // Rounding noise of identical ECEF coordinates stays far below this.
  const double floor = std::pow(1e-12 * std::max(1.0, mean.norm()), 2);
  if (!(total > floor)) return {1.0 / 3.0, true};
  return {ev.maxCoeff() / total, false};
}

double alignment_rmse(std::span<const MatchedSample> samples, const Pose& t_eo,
                      const Vec3& lever_arm) {
  if (samples.empty()) return 0.0;
  return std::sqrt(cost(samples, Vec3::Zero(), t_eo, lever_arm) /
                   static_cast<double>(samples.size()));
}

AlignmentResult align_fixed_lever_arm(std::span<const MatchedSample> samples,
                                      const Vec3& lever_arm) {
  if (samples.size() < 3) {
    throw Error(ErrorCode::kInvalidInput, "alignment needs at least 3 samples");
  }
  std::vector<Vec3> source;
  source.reserve(samples.size());
  for (const auto& s : samples) source.push_back(antenna_in_odometry(s.vio, lever_arm));
  const auto target = gnss_positions(samples);

  AlignmentResult out;
  out.t_eo = kabsch(source, target);
  out.lever_arm = lever_arm;
  out.rmse = alignment_rmse(samples, out.t_eo, lever_arm);
  out.fer = excitation_fer(target).fer;
  return out;
}

AlignmentResult align_two_pass(std::span<const MatchedSample> samples,
                               const AlignOptions& options) {
  if (samples.size() < std::max<std::size_t>(options.min_samples, 3)) {
    throw Error(ErrorCode::kExcitation,
                "alignment needs at least " + std::to_string(options.min_samples) + " samples");
  }
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].time > samples[i - 1].time)) {
      throw Error(ErrorCode::kOrdering, "alignment samples are not strictly increasing in time");
    }
  }
  const auto positions = gnss_positions(samples);
  const Excitation excitation = excitation_fer(positions);
  if (!excitation.sufficient(options.fer_threshold)) {
    throw Error(ErrorCode::kExcitation,
                "insufficient excitation (FER " + std::to_string(excitation.fer) + ")");
  }

  // Pass 1: closed form with the lever arm at zero.
  const AlignmentResult seed = align_fixed_lever_arm(samples, Vec3::Zero());

  // Pass 2 runs in a frame shifted to the GNSS centroid so that the rotation
  // columns are not swamped by earth-radius lever arms.
  const Vec3 shift = centroid(samples);
  Pose t = Pose(seed.t_eo.rotation(), seed.t_eo.translation() - shift);
  Vec3 lever = Vec3::Zero();

  Mat9 n;
  Vec9 b;
  normal_equations(samples, shift, t, lever, n, b);
  const bool estimate_lever = scaled_condition(n) <= options.max_condition;
  if (!estimate_lever) {
    lever = options.prior_lever_arm;
    // Re-seed T_EO for the held lever arm; nothing else is observable.
    const AlignmentResult held = align_fixed_lever_arm(samples, lever);
    t = Pose(held.t_eo.rotation(), held.t_eo.translation() - shift);
  }
  const int dim = estimate_lever ? 9 : 6;

  double c = cost(samples, shift, t, lever);
  // Residuals cannot resolve below rounding of the absolute coordinates.
  double scale = 1.0;
  for (const auto& p : positions) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  const double floor = 16.0 * std::numeric_limits<double>::epsilon() * scale;
  const double tiny = floor * floor * static_cast<double>(samples.size());
  double lambda = 1e-6;
  int rejected = 0;
  int iter = 0;
  for (; iter < options.max_iterations && c > tiny; ++iter) {
    normal_equations(samples, shift, t, lever, n, b);
    Eigen::MatrixXd a = n.topLeftCorner(dim, dim);
    a.diagonal() += lambda * a.diagonal();
    const Eigen::VectorXd step = a.ldlt().solve(b.head(dim));
    if (!step.allFinite()) {
      throw Error(ErrorCode::kNoConvergence, "alignment step is not finite");
    }
    const Pose t_new = compose(exp(Twist(Vec6(step.head<6>()))), t);
    const Vec3 lever_new = estimate_lever ? Vec3(lever + step.tail<3>()) : lever;
    const double c_new = cost(samples, shift, t_new, lever_new);

    if (c_new <= c) {
      const double decrease = c - c_new;
      t = t_new;
      lever = lever_new;
      c = c_new;
      rejected = 0;
      lambda = std::max(lambda * 0.1, 1e-12);
      if (decrease <= options.relative_tolerance * c_new) break;
    } else {
      // A rise within rounding of the current cost means we are at the optimum.
      if (c_new - c <= options.relative_tolerance * c + tiny) break;
      if (++rejected >= options.max_rejected_steps) {
        throw Error(ErrorCode::kNoConvergence, "alignment failed to reduce its cost");
      }
      lambda *= 10.0;
    }
  }

  AlignmentResult out;
  out.t_eo = Pose(t.rotation(), t.translation() + shift);
  out.lever_arm = lever;
  out.rmse = alignment_rmse(samples, out.t_eo, lever);
  out.fer = excitation.fer;
  out.lever_arm_estimated = estimate_lever;
  out.iterations = iter;
  return out;
}

bool realignment_gate(double rmse, double fer, const RealignOptions& options) {
  return rmse < options.max_rmse && fer < options.fer_threshold;
}

RealignDecision realign_policy(const AlignmentResult& current,
                               std::span<const MatchedSample> window,
                               const RealignOptions& options) {
  RealignDecision keep{false, current};
  if (window.size() < std::max<std::size_t>(options.min_samples, 3)) return keep;
  try {
    const auto positions = gnss_positions(window);
    const Excitation ex = excitation_fer(positions);
    if (ex.degenerate) return keep;
    AlignmentResult candidate = align_fixed_lever_arm(window, current.lever_arm);
    candidate.fer = ex.fer;
    candidate.lever_arm_estimated = current.lever_arm_estimated;
    if (!realignment_gate(candidate.rmse, candidate.fer, options)) return keep;
    return {true, candidate};
  } catch (const Error&) {
    return keep;
  }
}

}  // namespace rtkvio
