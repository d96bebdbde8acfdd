#include "rtkvio/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "rtkvio/error.hpp"
#include "rtkvio/geodesy.hpp"

namespace rtkvio {

namespace {

using std::numbers::pi;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

struct SkySatellite {
  SatelliteId id;
  std::vector<std::string> bands;
  double azimuth0 = 0.0;
  double elevation0 = 0.0;
  double azimuth_rate = 0.0;
  double elevation_rate = 0.0;
};

std::vector<SkySatellite> make_sky(const Scenario& sc) {
  auto rng = stream(sc.seed, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SkySatellite> sky;
  double phase = 0.0;
  for (const auto& c : sc.satellites) {
    for (int i = 0; i < c.count; ++i) {
      SkySatellite s;
      s.id = {c.constellation, c.first_prn + i};
      s.bands = c.bands;
      // Spread evenly in azimuth with jitter; constellations interleave.
      s.azimuth0 = std::fmod(phase + 2.0 * pi * (i + 0.35 * unit(rng)) / c.count, 2.0 * pi);
      const double margin = 2.0 * pi / 180.0;
      s.elevation0 = sc.min_elevation + margin +
                     (sc.max_elevation - sc.min_elevation - 2.0 * margin) * unit(rng);
      s.azimuth_rate = sc.sky_rate * (2.0 * unit(rng) - 1.0);
      s.elevation_rate = 0.5 * sc.sky_rate * (2.0 * unit(rng) - 1.0);
      sky.push_back(std::move(s));
    }
    phase += 2.0 * pi / (3.0 * std::max(c.count, 1));
  }
  return sky;
}

struct SkyPosition {
  double azimuth;
  double elevation;
};

SkyPosition sky_at(const Scenario& sc, const SkySatellite& s, double t) {
  const double tau = t - sc.start_time;
  double az = std::fmod(s.azimuth0 + s.azimuth_rate * tau, 2.0 * pi);
  if (az < 0.0) az += 2.0 * pi;
  const double el = std::clamp(s.elevation0 + s.elevation_rate * tau, sc.min_elevation,
                               sc.max_elevation);
  return {az, el};
}

bool blocked(const Scenario& sc, const SkySatellite& s, double t) {
  const SkyPosition p = sky_at(sc, s, t);
  for (const auto& w : sc.blockage) {
    if (t < w.start || t >= w.end) continue;
    if (std::find(w.excluded.begin(), w.excluded.end(), s.id) != w.excluded.end()) return true;
    if (w.azimuth && p.azimuth >= w.azimuth->first && p.azimuth < w.azimuth->second &&
        p.elevation < w.max_elevation) {
      return true;
    }
  }
  return false;
}

const NlosWindow* nlos_at(const Scenario& sc, const SatelliteId& id, double t) {
  for (const auto& w : sc.nlos) {
    if (w.satellite == id && t >= w.start && t < w.end) return &w;
  }
  return nullptr;
}

Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }

// Body pose in the local east-north-up frame at the anchor.
Pose body_pose_local(const TrajectorySpec& tr, double tau) {
  Vec3 p = Vec3::Zero();
  double heading = tr.heading;
  switch (tr.kind) {
    case TrajectoryKind::kLoop: {
      const double w = tr.speed / tr.radius;
      const double phi0 = tr.heading - 0.5 * pi;
      const double phi = phi0 + w * tau;
      p.head<2>() = tr.radius * Eigen::Vector2d(std::cos(phi) - std::cos(phi0),
                                                std::sin(phi) - std::sin(phi0));
      heading = phi + 0.5 * pi;
      break;
    }
    case TrajectoryKind::kLine:
      p.head<2>() = tr.speed * tau * Eigen::Vector2d(std::cos(tr.heading), std::sin(tr.heading));
      break;
    case TrajectoryKind::kStatic:
      break;
    case TrajectoryKind::kFigure8: {
      // Lemniscate of Gerono, rotated by the initial heading.
      const double w = tr.speed / tr.radius;
      const double a = w * tau;
      const Eigen::Vector2d q(tr.radius * std::sin(a), tr.radius * std::sin(a) * std::cos(a));
      const Eigen::Vector2d dq(std::cos(a), std::cos(2.0 * a));
      const Eigen::Rotation2Dd r(tr.heading);
      p.head<2>() = r * q;
      const Eigen::Vector2d d = r * dq;
      heading = std::atan2(d.y(), d.x());
      break;
    }
  }
  if (tr.vertical_period > 0.0) {
    p.z() = tr.vertical_amplitude * std::sin(2.0 * pi * tau / tr.vertical_period);
  }
  const double pitch = tr.pitch_period > 0.0
                           ? tr.pitch_amplitude * std::sin(2.0 * pi * tau / tr.pitch_period)
                           : 0.0;
  const double roll = tr.roll_period > 0.0
                          ? tr.roll_amplitude * std::sin(2.0 * pi * tau / tr.roll_period)
                          : 0.0;
  return Pose(rot_z(heading) * rot_y(pitch) * rot_x(roll), p);
}

}  // namespace

std::vector<SatelliteId> blockage_series(const Scenario& scenario, double t) {
  std::vector<SatelliteId> out;
  for (const auto& s : make_sky(scenario)) {
    if (!blocked(scenario, s, t)) out.push_back(s.id);
  }
  return out;
}

const TruthEpoch* GroundTruth::at(double time) const {
  auto it = std::lower_bound(epochs.begin(), epochs.end(), time - 1e-6,
                             [](const TruthEpoch& e, double t) { return e.time < t; });
  if (it == epochs.end() || std::abs(it->time - time) > 1e-6) return nullptr;
  return &*it;
}

std::optional<std::int64_t> GroundTruth::dd_integer(double time, const AmbiguityKey& key) const {
  const TruthEpoch* e = at(time);
  if (e == nullptr) return std::nullopt;
  const auto r = e->single_difference.find({key.group, key.reference_sat});
  const auto s = e->single_difference.find({key.group, key.sat});
  if (r == e->single_difference.end() || s == e->single_difference.end()) return std::nullopt;
  return r->second - s->second;
}

std::vector<TimedPose> SimOutput::vio_poses() const {
  std::vector<TimedPose> out;
  out.reserve(vio.size());
  for (const auto& v : vio) out.push_back(v.to_timed_pose());
  return out;
}

void validate_scenario(const Scenario& sc) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidInput, what); };
  if (!(sc.epoch_rate > 0.0) || !(sc.duration >= 0.0) || !(sc.vio.rate > 0.0)) {
    bad("scenario rates and duration must be positive");
  }
  if (!(sc.vio.cross_correlation >= 0.0 && sc.vio.cross_correlation < 1.0)) {
    bad("odometry cross-correlation must lie in [0, 1)");
  }
  constexpr double kHalfPi = 0.5 * std::numbers::pi;
  if (!(sc.min_elevation >= 0.0 && sc.min_elevation <= sc.max_elevation &&
        sc.max_elevation <= kHalfPi)) {
    bad("satellite elevation band must lie within [0, pi/2]");
  }
  for (const auto& c : sc.satellites) {
    if (c.count < 0 || c.first_prn < 1 || c.bands.empty()) bad("bad constellation entry");
    for (const auto& b : c.bands) carrier_wavelength({c.constellation, b});
  }
  for (const auto& w : sc.blockage) {
    if (!(w.max_elevation >= 0.0 && w.max_elevation <= kHalfPi)) {
      bad("blockage elevation must lie within [0, pi/2]");
    }
    if (w.azimuth && !(w.azimuth->first >= 0.0 && w.azimuth->first < 2.0 * std::numbers::pi &&
                       w.azimuth->second >= 0.0 &&
                       w.azimuth->second <= 2.0 * std::numbers::pi)) {
      bad("blockage azimuth must lie within [0, 2 pi)");
    }
  }
  if (!sc.lever_arm.allFinite()) bad("lever arm is not finite");
}

SimOutput generate(const Scenario& sc) {
  validate_scenario(sc);
  const auto sky = make_sky(sc);
  const EcefPosition anchor =
      geodetic_to_ecef({sc.anchor_latitude, sc.anchor_longitude, sc.anchor_height});
  const Mat3 r_el = enu_to_ecef_rotation(sc.anchor_latitude, sc.anchor_longitude);
  const Pose t_el(r_el, anchor.vec());
  const EcefPosition station =
      anchor + r_el * Vec3(sc.baseline * std::sin(sc.baseline_azimuth),
                           sc.baseline * std::cos(sc.baseline_azimuth), 0.0);

  const Pose body0 = body_pose_local(sc.trajectory, 0.0);
  const Pose t_eo = compose(t_el, body0);
  const Pose body0_inv = body0.inverse();

  SimOutput out;
  out.user.role = ReceiverRole::kUser;
  out.reference.role = ReceiverRole::kReference;
  out.reference.station_position = station;
  out.truth.t_eo = t_eo;
  out.truth.lever_arm = sc.lever_arm;

  auto int_rng = stream(sc.seed, 2);
  auto noise_rng = stream(sc.seed, 3);
  auto clock_rng = stream(sc.seed, 4);
  auto vio_rng = stream(sc.seed, 5);
  std::uniform_int_distribution<std::int64_t> int_dist(-500000, 500000);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> clock0(-3.0e4, 3.0e4);

  // Integer ambiguities per (group, sat): reference fixed, user renewed on
  // every re-acquisition.
  std::map<std::pair<GroupKey, int>, std::int64_t> n_ref, n_user;
  for (const auto& s : sky) {
    for (const auto& b : s.bands) {
      const GroupKey g{s.id.constellation, b};
      carrier_wavelength(g);  // rejects unknown bands early
      n_ref[{g, s.id.prn}] = int_dist(int_rng);
      n_user[{g, s.id.prn}] = int_dist(int_rng);
    }
  }
  std::set<SatelliteId> seen_last;
  std::set<SatelliteId> nlos_last;
  std::set<SatelliteId> last_nlos_slips;
  bool first = true;
  double clock_user = clock0(clock_rng);
  double clock_ref = clock0(clock_rng);

  const auto n_epochs = static_cast<long>(std::floor(sc.duration * sc.epoch_rate + 1e-9)) + 1;
  for (long k = 0; k < n_epochs; ++k) {
    const double tau = static_cast<double>(k) / sc.epoch_rate;
    const double t = sc.start_time + tau;
    const Pose body = body_pose_local(sc.trajectory, tau);
    const EcefPosition antenna(t_el.transform(body.transform(sc.lever_arm)));

    TruthEpoch truth;
    truth.time = t;
    truth.antenna = antenna;
    EpochObservation ue{t, ReceiverRole::kUser, {}};
    EpochObservation re{t, ReceiverRole::kReference, {}};
    if (k > 0) {
      clock_user += 0.3 * gauss(clock_rng);
      clock_ref += 0.3 * gauss(clock_rng);
    }

    std::set<SatelliteId> seen_now;
    std::set<SatelliteId> nlos_now;
    for (const auto& s : sky) {
      const SkyPosition sp = sky_at(sc, s, t);
      const Vec3 dir_enu(std::cos(sp.elevation) * std::sin(sp.azimuth),
                         std::cos(sp.elevation) * std::cos(sp.azimuth),
                         std::sin(sp.elevation));
      const EcefPosition sat = anchor + sc.satellite_range * (r_el * dir_enu);
      const bool visible = !blocked(sc, s, t);
      const NlosWindow* nl = visible ? nlos_at(sc, s.id, t) : nullptr;
      bool slip = false;
      if (visible) {
        seen_now.insert(s.id);
        truth.visible.push_back(s.id);
        if (!first && !seen_last.contains(s.id)) slip = true;
        if (nl) {
          nlos_now.insert(s.id);
          truth.nlos.push_back(s.id);
          if (nl->loss_of_lock && !first && !nlos_last.contains(s.id)) slip = true;
        } else if (nlos_last.contains(s.id) && last_nlos_slips.contains(s.id)) {
          slip = true;  // lock is lost again when the direct path returns
        }
      }
      const double el_user = look_angles(antenna, sat).elevation;
      const double el_ref = look_angles(station, sat).elevation;
      const double range_user = antenna.distance_to(sat);
      const double range_ref = station.distance_to(sat);

      for (const auto& b : s.bands) {
        const GroupKey g{s.id.constellation, b};
        const double lambda = carrier_wavelength(g);
        const auto key = std::make_pair(g, s.id.prn);
        // Noise is drawn for every signal so that the random sequence does
        // not depend on visibility.
        const double np_ref = std::sqrt(sc.noise.phase_variance(el_ref)) * gauss(noise_rng);
        const double nc_ref = std::sqrt(sc.noise.code_variance(el_ref)) * gauss(noise_rng);
        const double np_user = std::sqrt(sc.noise.phase_variance(el_user)) * gauss(noise_rng);
        const double nc_user = std::sqrt(sc.noise.code_variance(el_user)) * gauss(noise_rng);
        const double scale = sc.noiseless ? 0.0 : 1.0;

        SatelliteObservation ro;
        ro.sat_id = s.id.prn;
        ro.group = g;
        ro.satellite_position = sat;
        ro.elevation_rad = el_ref;
        ro.snr_dbhz = 30.0 + 20.0 * std::sin(el_ref);
        ro.phase_cycles = (range_ref + clock_ref + scale * np_ref) / lambda +
                          static_cast<double>(n_ref.at(key));
        ro.pseudorange_m = range_ref + clock_ref + scale * nc_ref;
        re.satellites.push_back(ro);

        if (!visible) continue;
        if (slip) n_user[key] = int_dist(int_rng);
        SatelliteObservation uo;
        uo.sat_id = s.id.prn;
        uo.group = g;
        uo.satellite_position = sat;
        uo.elevation_rad = el_user;
        uo.snr_dbhz = 30.0 + 20.0 * std::sin(el_user) - (nl ? 10.0 : 0.0);
        uo.loss_of_lock = slip;
        uo.phase_cycles = (range_user + clock_user + scale * np_user) / lambda +
                          static_cast<double>(n_user.at(key)) + (nl ? nl->phase_bias : 0.0);
        uo.pseudorange_m = range_user + clock_user + scale * nc_user + (nl ? nl->code_bias : 0.0);
        ue.satellites.push_back(uo);
        truth.single_difference[key] = n_user.at(key) - n_ref.at(key);
      }
    }
    seen_last = std::move(seen_now);
    last_nlos_slips.clear();
    for (const auto& id : nlos_now) {
      if (const NlosWindow* w = nlos_at(sc, id, t); w && w->loss_of_lock) last_nlos_slips.insert(id);
    }
    nlos_last = std::move(nlos_now);
    first = false;
    out.user.epochs.push_back(std::move(ue));
    out.reference.epochs.push_back(std::move(re));
    out.truth.epochs.push_back(std::move(truth));
  }

  // Odometry: truth in the initial body frame, with drift accumulated from
  // per-step errors.
  const double rho = sc.vio.cross_correlation;
  const auto n_vio = static_cast<long>(std::floor(sc.duration * sc.vio.rate + 1e-9)) + 1;
  Vec3 est = Vec3::Zero();
  Mat3 rot_drift = Mat3::Identity();
  Vec3 prev_true = Vec3::Zero();
  for (long k = 0; k < n_vio; ++k) {
    const double tau = static_cast<double>(k) / sc.vio.rate;
    const double t = sc.start_time + tau;
    const Pose truth_oi = compose(body0_inv, body_pose_local(sc.trajectory, tau));
    out.truth.body_poses.push_back({t, truth_oi});

    double step_var = 0.0;
    double rot_var = 0.0;
    if (k == 0) {
      est = truth_oi.translation();
    } else {
      const Vec3 step = truth_oi.translation() - prev_true;
      if (sc.drift) {
        const double len = step.norm();
        const double white =
            std::hypot(sc.vio.white_rate * len, sc.vio.step_sigma_floor);
        // Systematic part: along-track scale error.
        const Vec3 err = sc.vio.systematic_rate * step +
                         white * Vec3(gauss(vio_rng), gauss(vio_rng), gauss(vio_rng));
        est += step + err;
        step_var = std::pow(sc.vio.systematic_rate * len, 2) + white * white;
        if (sc.vio.rotation_sigma > 0.0) {
          const Vec3 dr = sc.vio.rotation_sigma *
                          Vec3(gauss(vio_rng), gauss(vio_rng), gauss(vio_rng));
          rot_drift = so3_exp(dr) * rot_drift;
          rot_var = sc.vio.rotation_sigma * sc.vio.rotation_sigma;
        }
      } else {
        est = truth_oi.translation();
        step_var = sc.vio.step_sigma_floor * sc.vio.step_sigma_floor;
      }
    }
    prev_true = truth_oi.translation();

    VioSample v;
    v.time = t;
    v.orientation = Eigen::Quaterniond(rot_drift * truth_oi.rotation()).normalized();
    v.position = est;
    // Marginal covariance such that consecutive poses correlated by rho give
    // the step variance for the increment.
    Mat6 cov = Mat6::Zero();
    cov.topLeftCorner<3, 3>().diagonal().setConstant(rot_var / (2.0 * (1.0 - rho)));
    cov.bottomRightCorner<3, 3>().diagonal().setConstant(step_var / (2.0 * (1.0 - rho)));
    v.covariance = cov;
    out.vio.push_back(v);
  }
  return out;
}

}  // namespace rtkvio
