#pragma once

// Helpers shared by the unit tests and the acceptance runner: random
// geometry, brute-force oracles, covariance checks and canned scenarios.

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "rtkvio/ambiguity.hpp"
#include "rtkvio/frames.hpp"
#include "rtkvio/fusion.hpp"
#include "rtkvio/sim.hpp"

namespace rtkvio::test {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 random_vec3(Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  return Vec3(n(rng), n(rng), n(rng));
}

inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(std::normal_distribution<double>()(rng),
                       std::normal_distribution<double>()(rng),
                       std::normal_distribution<double>()(rng),
                       std::normal_distribution<double>()(rng));
  return q.normalized().toRotationMatrix();
}

inline Pose random_pose(Rng& rng, double translation_scale = 10.0) {
  return Pose(random_rotation(rng), random_vec3(rng, translation_scale));
}

// Q diag(lambda) Q^T with log-uniform eigenvalues in [lo, hi].
inline Eigen::MatrixXd random_spd(Rng& rng, int n, double lo, double hi) {
  Eigen::MatrixXd g(n, n);
  std::normal_distribution<double> nd;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = nd(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Eigen::VectorXd ev(n);
  for (int i = 0; i < n; ++i) ev(i) = std::exp(uniform(rng, std::log(lo), std::log(hi)));
  Eigen::MatrixXd w = q * ev.asDiagonal() * q.transpose();
  return 0.5 * (w + w.transpose());
}

// Relative error with an absolute floor so near-zero entries compare sanely.
inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

// Exhaustive best and second-best integer vectors within +-radius of
// round(D_hat).
struct BruteForce {
  Eigen::VectorXd best, second;
  double q1 = std::numeric_limits<double>::infinity();
  double q2 = std::numeric_limits<double>::infinity();
};

inline BruteForce brute_force_ils(const IlsProblem& p, int radius) {
  const int n = static_cast<int>(p.float_ambiguities.size());
  const Eigen::MatrixXd w_inv = p.covariance.inverse();
  const Eigen::VectorXd center = p.float_ambiguities.array().round().matrix();
  BruteForce out;
  Eigen::VectorXd d(n);
  std::vector<int> k(n, -radius);
  while (true) {
    for (int i = 0; i < n; ++i) d(i) = center(i) + k[i];
    const Eigen::VectorXd r = d - p.float_ambiguities;
    const double q = r.dot(w_inv * r);
    if (q < out.q1) {
      out.q2 = out.q1;
      out.second = out.best;
      out.q1 = q;
      out.best = d;
    } else if (q < out.q2) {
      out.q2 = q;
      out.second = d;
    }
    int i = 0;
    while (i < n && ++k[i] > radius) k[i++] = -radius;
    if (i == n) break;
  }
  return out;
}

// Exact best and second-best over all of Z^n. Any integer vector with
// residual <= q_bound satisfies |d_i - D_hat_i| <= sqrt(q_bound * W_ii), so
// every prefix (d_1..d_{n-1}) inside those bounds is enumerated and the last
// coordinate is minimized in closed form: for a fixed prefix the residual is
// a 1-D convex quadratic, whose two best integers are the two nearest to its
// minimizer. `q_bound` must be at least the true second-best residual, e.g.
// the larger residual of any two distinct integer vectors.
inline BruteForce exhaustive_ils(const IlsProblem& p, double q_bound) {
  const int n = static_cast<int>(p.float_ambiguities.size());
  const Eigen::MatrixXd a = p.covariance.inverse();
  const Eigen::VectorXd& f = p.float_ambiguities;
  std::vector<long> lo(n), hi(n);
  for (int i = 0; i < n - 1; ++i) {
    const double r = std::sqrt(q_bound * p.covariance(i, i)) + 1e-9;
    lo[i] = static_cast<long>(std::ceil(f(i) - r));
    hi[i] = static_cast<long>(std::floor(f(i) + r));
  }
  BruteForce out;
  auto offer = [&](const Eigen::VectorXd& d) {
    const Eigen::VectorXd r = d - f;
    const double q = r.dot(a * r);
    if (q < out.q1) {
      out.q2 = out.q1;
      out.second = out.best;
      out.q1 = q;
      out.best = d;
    } else if (q < out.q2) {
      out.q2 = q;
      out.second = d;
    }
  };
  Eigen::VectorXd d(n);
  std::vector<long> k(lo.begin(), lo.end());
  while (true) {
    double b = 0.0;
    for (int j = 0; j < n - 1; ++j) {
      d(j) = static_cast<double>(k[j]);
      b += a(n - 1, j) * (d(j) - f(j));
    }
    const double x = f(n - 1) - b / a(n - 1, n - 1);
    const double nearest = std::round(x);
    d(n - 1) = nearest;
    offer(d);
    d(n - 1) = nearest + (x >= nearest ? 1.0 : -1.0);
    offer(d);
    int i = 0;
    while (i < n - 1 && ++k[i] > hi[i]) {
      k[i] = lo[i];
      ++i;
    }
    if (i >= n - 1) break;
  }
  return out;
}

// Symmetric within `sym_tol` and smallest eigenvalue >= -eig_tol.
inline bool symmetric_psd(const Eigen::MatrixXd& m, double sym_tol = 1e-10,
                          double eig_tol = 1e-9) {
  if (!m.allFinite()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > sym_tol) return false;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()),
                                                          Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -eig_tol;
}

// Empirical covariance of the rows produced by `draw`.
inline Eigen::MatrixXd sample_covariance(int dim, int samples,
                                         const std::function<Eigen::VectorXd()>& draw) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(dim, dim);
  for (int i = 0; i < samples; ++i) {
    const Eigen::VectorXd x = draw();
    mean += x;
    second += x * x.transpose();
  }
  mean /= samples;
  return second / samples - mean * mean.transpose();
}

// Draws from N(0, cov) through a Cholesky-like square root.
inline Eigen::VectorXd gaussian(Rng& rng, const Eigen::MatrixXd& sqrt_cov) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd z(sqrt_cov.cols());
  for (int i = 0; i < z.size(); ++i) z(i) = nd(rng);
  return sqrt_cov * z;
}

inline Eigen::MatrixXd matrix_sqrt(const Eigen::MatrixXd& cov) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------
// Scenarios

inline AlignmentResult truth_alignment(const SimOutput& sim) {
  AlignmentResult a;
  a.t_eo = sim.truth.t_eo;
  a.lever_arm = sim.truth.lever_arm;
  return a;
}

// Default open-sky scenario: 11 dual-band satellites, 120 s at 5 Hz.
inline Scenario nominal_scenario(std::uint64_t seed = 1) {
  Scenario sc;
  sc.seed = seed;
  return sc;
}

inline Scenario noiseless_scenario(double duration = 60.0) {
  Scenario sc;
  sc.duration = duration;
  sc.noiseless = true;
  sc.drift = false;
  return sc;
}

// Ten single-band GPS satellites; five of them are masked for the whole
// run after 30 s and the other five take turns carrying NLoS reception
// (15 m code / 0.5 cycle phase bias, lock lost on entry and exit).
inline Scenario blockage_scenario(std::uint64_t seed = 1) {
  Scenario sc;
  sc.seed = seed;
  sc.duration = 150.0;
  sc.satellites = {{Constellation::kGps, 10, {"L1"}, 1}};
  const double t0 = sc.start_time + 30.0;
  BlockageWindow mask;
  mask.start = t0;
  mask.end = sc.start_time + sc.duration;
  for (int prn : {1, 3, 5, 7, 9}) mask.excluded.push_back({Constellation::kGps, prn});
  sc.blockage.push_back(mask);
  const int open[] = {2, 4, 6, 8, 10};
  for (int k = 0; k < 12; ++k) {
    NlosWindow n;
    n.satellite = {Constellation::kGps, open[k % 5]};
    n.start = t0 + 2.0 + 10.0 * k;
    n.end = n.start + 4.0;
    n.loss_of_lock = true;
    sc.nlos.push_back(n);
  }
  return sc;
}

// ~100 m figure-8 with head-mounted levels of pitch and roll, so that every
// lever-arm axis is observable. Odometry is drift-free.
inline Scenario calibration_scenario(std::uint64_t seed = 1) {
  Scenario sc = nominal_scenario(seed);
  sc.duration = 72.0;
  sc.drift = false;
  sc.trajectory.kind = TrajectoryKind::kFigure8;
  sc.trajectory.pitch_amplitude = 0.35;
  sc.trajectory.roll_amplitude = 0.25;
  return sc;
}

// GNSS antenna positions with isotropic noise of `rms` (3-D), matched to the
// true odometry poses.
inline std::vector<MatchedSample> calibration_samples(const SimOutput& sim, Rng& rng,
                                                      double rms) {
  std::vector<MatchedSample> out;
  for (const auto& e : sim.truth.epochs) {
    out.push_back({e.time, e.antenna + random_vec3(rng, rms / std::sqrt(3.0)),
                   interpolate_pose(sim.truth.body_poses, e.time)});
  }
  return out;
}

inline constexpr double kBiasStart = 1060.0;
inline constexpr double kBiasEnd = 1090.0;

// Nominal scenario with a +0.8 cycle phase bias on G01 for 30 s.
inline Scenario phase_bias_scenario(std::uint64_t seed = 1) {
  Scenario sc = nominal_scenario(seed);
  NlosWindow n;
  n.satellite = {Constellation::kGps, 1};
  n.start = kBiasStart;
  n.end = kBiasEnd;
  n.code_bias = 0.0;
  n.phase_bias = 0.8;
  sc.nlos.push_back(n);
  return sc;
}

// True if every fixed integer of `s` matches the simulator's truth.
inline bool integers_correct(const Solution& s, const GroundTruth& truth) {
  for (std::size_t k = 0; k < s.fixed_keys.size(); ++k) {
    const auto d = truth.dd_integer(s.time, s.fixed_keys[k]);
    if (!d || static_cast<double>(*d) != s.fixed_integers(static_cast<Eigen::Index>(k))) {
      return false;
    }
  }
  return true;
}

}  // namespace rtkvio::test
