#pragma once

// Synthetic scenarios with known truth: satellite sky, a user trajectory
// carrying an antenna on a lever arm, raw observations with integer
// ambiguities for a user and a reference receiver, drifting odometry, and
// blockage / non-line-of-sight effects on the user side.

#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rtkvio/frames.hpp"
#include "rtkvio/obs_model.hpp"

namespace rtkvio {

struct ConstellationSpec {
  Constellation constellation = Constellation::kGps;
  int count = 0;
  std::vector<std::string> bands;
  int first_prn = 1;
};

enum class TrajectoryKind { kLoop, kLine, kStatic, kFigure8 };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kLoop;
  double speed = 1.4;         // m/s
  double radius = 15.0;       // loop radius / figure-8 half width, m
  double heading = 0.0;       // initial heading, rad from east
  double vertical_amplitude = 0.3;  // m
  double vertical_period = 20.0;    // s
  double pitch_amplitude = 0.15;    // rad
  double roll_amplitude = 0.10;     // rad
  double pitch_period = 3.0;        // s
  double roll_period = 4.3;         // s
};

// Satellites hidden from the user during [start, end): an explicit list
// and/or every satellite inside an azimuth interval below an elevation.
struct BlockageWindow {
  double start = 0.0;
  double end = 0.0;
  std::vector<SatelliteId> excluded;
  std::optional<std::pair<double, double>> azimuth;  // [min, max) rad
  double max_elevation = 0.5 * std::numbers::pi;
};

struct NlosWindow {
  SatelliteId satellite;
  double start = 0.0;
  double end = 0.0;
  double code_bias = 15.0;  // m
  double phase_bias = 0.5;  // cycles
  bool loss_of_lock = false;
};

struct VioDriftSpec {
  double systematic_rate = 0.005;  // along-track scale error
  double white_rate = 0.002;       // per-step sigma as a fraction of the step
  double step_sigma_floor = 1e-4;  // m per step
  double rotation_sigma = 0.0;     // rad per step random walk
  double cross_correlation = 0.9;  // used to synthesize the reported covariance
  double rate = 5.0;               // Hz
};

struct Scenario {
  std::uint64_t seed = 1;
  double duration = 120.0;
  double epoch_rate = 5.0;
  double start_time = 1000.0;
  double anchor_latitude = 0.6524;    // rad
  double anchor_longitude = -2.1316;  // rad
  double anchor_height = 30.0;
  TrajectorySpec trajectory;
  std::vector<ConstellationSpec> satellites = {
      {Constellation::kGps, 6, {"L1", "L2"}, 1},
      {Constellation::kGalileo, 5, {"E1", "E5a"}, 1},
  };
  double min_elevation = 15.0 * std::numbers::pi / 180.0;
  double max_elevation = 85.0 * std::numbers::pi / 180.0;
  double sky_rate = 0.005 * std::numbers::pi / 180.0;  // rad/s, at most
  double satellite_range = 2.0e7;
  double baseline = 2.0e4;          // m to the reference station
  double baseline_azimuth = 0.7;    // rad
  NoiseModel noise;
  bool noiseless = false;
  std::vector<BlockageWindow> blockage;
  std::vector<NlosWindow> nlos;
  bool drift = true;
  VioDriftSpec vio;
  Vec3 lever_arm = Vec3(0.10, 0.00, 0.05);
};

struct TruthEpoch {
  double time = 0.0;
  EcefPosition antenna;
  std::vector<SatelliteId> visible;
  std::vector<SatelliteId> nlos;
  // Between-receiver single-difference integers N_user - N_reference.
  std::map<std::pair<GroupKey, int>, std::int64_t> single_difference;
};

struct GroundTruth {
  std::vector<TruthEpoch> epochs;
  std::vector<TimedPose> body_poses;  // true T_OI at the odometry rate
  Pose t_eo;
  Vec3 lever_arm = Vec3::Zero();

  // d^(1,s) at the epoch closest to `time` (within 1e-6 s).
  std::optional<std::int64_t> dd_integer(double time, const AmbiguityKey& key) const;
  const TruthEpoch* at(double time) const;
};

struct SimOutput {
  ObservationStream user;
  ObservationStream reference;
  std::vector<VioSample> vio;
  GroundTruth truth;

  std::vector<TimedPose> vio_poses() const;
};

// Throws kInvalidInput for non-positive rates or masks outside
// [0, 2 pi) x [0, pi/2].
void validate_scenario(const Scenario& scenario);

SimOutput generate(const Scenario& scenario);

// Satellites visible to the user at time t after masks and exclusions.
std::vector<SatelliteId> blockage_series(const Scenario& scenario, double t);

}  // namespace rtkvio
