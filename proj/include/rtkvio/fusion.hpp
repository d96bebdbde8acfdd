#pragma once

// Per-epoch EKF over x = [antenna position (ECEF); DD ambiguities (cycles)].
// Odometry increments drive the prediction; double differences update it;
// integer search with a single satellite-pruning retry produces the fixed
// solution. Fixed integers are reported, never written back into the state.

#include <deque>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "rtkvio/align_calib.hpp"
#include "rtkvio/frames.hpp"
#include "rtkvio/obs_model.hpp"

namespace rtkvio {

struct FilterState {
  EcefPosition position;
  std::vector<AmbiguityKey> keys;  // sorted; one state entry per key
  Eigen::VectorXd ambiguities;
  Eigen::MatrixXd covariance;  // (3 + n) x (3 + n)

  std::size_t size() const { return 3 + keys.size(); }
  Mat3 position_covariance() const { return covariance.topLeftCorner<3, 3>(); }
};

struct VioIncrement {
  Vec3 translation = Vec3::Zero();  // odometry frame
  Mat3 covariance = Mat3::Zero();
};

enum class SolutionStatus { kFixed, kFloat, kPropagated };

const char* to_string(SolutionStatus status);  // FIX / FLOAT / PROP

struct Solution {
  double time = 0.0;
  EcefPosition position;
  SolutionStatus status = SolutionStatus::kPropagated;
  Mat3 covariance = Mat3::Zero();
  double ratio = 0.0;  // of the accepted (or last attempted) search
  std::map<GroupKey, int> satellites_used;  // phase-row satellites incl. reference
  bool constant_velocity_fallback = false;  // VIO bracket missing this epoch

  // Diagnostics.
  bool first_round_failed = false;
  int fix_rounds = 0;
  std::size_t pruned_rows = 0;
  std::vector<AmbiguityKey> fixed_keys;
  Eigen::VectorXd fixed_integers;

  int satellite_count() const;  // distinct physical satellites
};

struct FilterConfig {
  double gate_multiplier = 5.0;
  double gate_floor = 0.05;          // m, keeps a stationary gate open
  double code_gate_multiplier = 5.0;  // code rows use gate * this
  // A row is never gated below this many predicted innovation sigmas.
  double gate_sigma_floor = 3.0;
  double baseline_gate = 30.0;  // m, constant-velocity mode has no motion gate
  double ratio_threshold = 3.0;
  int reprune_rounds = 1;
  std::size_t min_fix_ambiguities = 3;
  double float_significance = 0.001;
  std::size_t min_update_rows = 4;
  NoiseModel noise;
  bool baseline_cv = false;
  double new_ambiguity_sigma = 30.0;  // cycles
  double cv_sigma = 1.0;              // m/s
  double initial_position_sigma = 10.0;
  double vio_cross_correlation = 0.9;  // between consecutive pose covariances
  double vio_max_gap = 0.5;
  // Added in quadrature to every odometry increment, per axis (m); keeps the
  // filter from trusting odometry that reports no uncertainty.
  double vio_sigma_floor = 1e-3;
  // Initialization and re-alignment.
  double initialization_horizon = 120.0;  // s
  double alignment_window = 30.0;         // s
  AlignOptions align;
  RealignOptions realign;
  std::optional<AlignmentResult> prealigned;
};

// Joint covariance of two consecutive poses from their marginals:
// diag(S_i, S_j) [[I, rho I], [rho I, I]] diag(S_i, S_j), S the symmetric root.
Mat12 joint_pose_covariance(const Mat6& first, const Mat6& second, double rho);

// Increment t_j - t_i with covariance J cov J^T.
VioIncrement vio_increment(const Pose& pose_i, const Pose& pose_j, const Mat12& joint);

// p += R_EO t; P_pp += R_EO cov R_EO^T. Ambiguities untouched.
FilterState predict(const FilterState& state, const VioIncrement& increment,
                    const Mat3& r_eo);

// Position random walk: P_pp += (sigma_v dt)^2 I.
FilterState predict_constant_velocity(const FilterState& state, double dt,
                                      double sigma_v);

// Brings the ambiguity block in line with `dd`: remaps on reference changes,
// drops vanished or slipped satellites, and seeds new ones from
// code-minus-carrier with variance sigma^2.
FilterState manage_ambiguities(const FilterState& state, const DoubleDifferenceSet& dd,
                               double new_ambiguity_sigma);

// gate_mult * max(|t|, floor).
double innovation_gate(double increment_norm, double multiplier, double floor);

struct PruneResult {
  FilterState state;  // remapped if a reference was reselected
  DoubleDifferenceSet dd;
  std::size_t pruned_rows = 0;
  std::vector<GroupKey> reselected;
};

// Drops rows whose |z - h(prior)| exceeds the gate (code rows: gate times
// the code multiplier). A group where more than half of one row type fails
// gets a new reference and is re-formed once. `user`/`reference` are the raw
// epochs the set was formed from.
PruneResult prune_by_innovation(const FilterState& prior, const DoubleDifferenceSet& dd,
                                const EpochObservation& user,
                                const EpochObservation& reference,
                                const EcefPosition& station, double gate,
                                const FilterConfig& config);

struct UpdateResult {
  FilterState state;
  bool valid = false;
  double chi_square = 0.0;  // code post-fit statistic
  std::size_t code_rows = 0;
};

UpdateResult measurement_update(const FilterState& prior, const DoubleDifferenceSet& dd,
                                const EcefPosition& station, const FilterConfig& config);

struct FixResult {
  bool fixed = false;
  EcefPosition position;
  Mat3 covariance = Mat3::Zero();
  double ratio = 0.0;
  bool first_round_failed = false;
  int rounds = 0;
  std::vector<AmbiguityKey> keys;
  Eigen::VectorXd integers;
};

// Integer search on the ambiguities observed in `dd`'s phase rows; on a
// failed ratio test removes the satellite with the largest w-statistic of
// the best candidate and retries up to `reprune_rounds` times.
FixResult resolve_and_validate(const FilterState& float_state,
                               const DoubleDifferenceSet& dd, const FilterConfig& config);

struct Prediction {
  enum class Kind { kNone, kVio, kConstantVelocity };
  Kind kind = Kind::kNone;
  VioIncrement increment;
  Mat3 r_eo = Mat3::Identity();
  double dt = 0.0;
  bool fallback = false;  // constant velocity used in place of missing VIO
};

struct EpochResult {
  FilterState state;
  Solution solution;
};

// One pass of the per-epoch routine. `reference` may be null when no
// reference epoch matches; the epoch is then propagated.
EpochResult run_epoch(const FilterState& state, const EpochObservation& user,
                      const EpochObservation* reference, const EcefPosition& station,
                      const Prediction& prediction, const FilterConfig& config);

// Drives run_epoch over a stream: bootstraps from code, runs in
// constant-velocity mode until the odometry can be aligned, then switches to
// odometry-aided prediction and keeps re-aligning over a trailing window.
class FusionFilter {
 public:
  FusionFilter(FilterConfig config, EcefPosition station, std::vector<TimedPose> vio);

  // Returns nullopt until the filter has bootstrapped.
  std::optional<Solution> process(const EpochObservation& user,
                                  const EpochObservation* reference);

  const std::optional<FilterState>& state() const { return state_; }
  const std::optional<AlignmentResult>& alignment() const { return alignment_; }
  bool aligned() const { return alignment_.has_value(); }
  int realignments() const { return realignments_; }

 private:
  std::optional<Pose> antenna_pose(double t) const;
  void record_sample(const Solution& solution);
  std::vector<MatchedSample> window_samples() const;
  void update_alignment(double t);

  FilterConfig config_;
  EcefPosition station_;
  std::vector<TimedPose> vio_;
  std::optional<FilterState> state_;
  std::optional<AlignmentResult> alignment_;
  std::optional<double> first_time_;
  double last_time_ = 0.0;
  int realignments_ = 0;

  struct Sample {
    MatchedSample matched;
    bool fixed = false;
  };
  std::deque<Sample> samples_;
};

// Pairs user epochs with reference epochs within kEpochMatchTolerance and
// runs a FusionFilter over them.
std::vector<Solution> run_fusion(const ObservationStream& user,
                                 const ObservationStream& reference,
                                 std::span<const TimedPose> vio, const FilterConfig& config);

}  // namespace rtkvio
