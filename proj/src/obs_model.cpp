#include "rtkvio/obs_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/Cholesky>

#include "rtkvio/error.hpp"

namespace rtkvio {

namespace {

struct BandFrequency {
  Constellation constellation;
  const char* band;
  double hz;
};

constexpr BandFrequency kBands[] = {
    {Constellation::kGps, "L1", 1575.42e6},
    {Constellation::kGps, "L2", 1227.60e6},
    {Constellation::kGps, "L5", 1176.45e6},
    {Constellation::kGalileo, "E1", 1575.42e6},
    {Constellation::kGalileo, "E5a", 1176.45e6},
    {Constellation::kGalileo, "E5b", 1207.14e6},
    {Constellation::kGalileo, "E6", 1278.75e6},
    {Constellation::kBeidou, "B1I", 1561.098e6},
    {Constellation::kBeidou, "B1C", 1575.42e6},
    {Constellation::kBeidou, "B2a", 1176.45e6},
    {Constellation::kBeidou, "B3", 1268.52e6},
    {Constellation::kQzss, "L1", 1575.42e6},
    {Constellation::kQzss, "L2", 1227.60e6},
    {Constellation::kQzss, "L5", 1176.45e6},
};

double sin_squared(double elevation_rad) {
  const double s = std::sin(std::max(elevation_rad, 1e-3));
  return s * s;
}

}  // namespace

Constellation parse_constellation(const std::string& token) {
  if (token.size() == 1) {
    switch (token[0]) {
      case 'G': return Constellation::kGps;
      case 'E': return Constellation::kGalileo;
      case 'C': return Constellation::kBeidou;
      case 'J': return Constellation::kQzss;
      default: break;
    }
  }
  throw Error(ErrorCode::kInvalidInput, "unknown constellation '" + token + "'");
}

char constellation_letter(Constellation c) { return static_cast<char>(c); }

std::string GroupKey::to_string() const {
  return std::string(1, constellation_letter(constellation)) + ":" + band;
}

double carrier_wavelength(const GroupKey& group) {
  for (const auto& b : kBands) {
    if (b.constellation == group.constellation && group.band == b.band) {
      return kSpeedOfLight / b.hz;
    }
  }
  throw Error(ErrorCode::kInvalidInput, "unknown signal band " + group.to_string());
}

std::string SatelliteId::to_string() const {
  std::ostringstream os;
  os << constellation_letter(constellation);
  if (prn < 10) os << '0';
  os << prn;
  return os.str();
}

SatelliteId SatelliteId::parse(const std::string& token) {
  if (token.size() < 2) {
    throw Error(ErrorCode::kInvalidInput, "bad satellite id '" + token + "'");
  }
  SatelliteId id;
  id.constellation = parse_constellation(token.substr(0, 1));
  try {
    std::size_t used = 0;
    id.prn = std::stoi(token.substr(1), &used);
    if (used != token.size() - 1 || id.prn <= 0) throw std::invalid_argument(token);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidInput, "bad satellite id '" + token + "'");
  }
  return id;
}

void validate_epoch(const EpochObservation& epoch) {
  if (!std::isfinite(epoch.time)) {
    throw Error(ErrorCode::kInvalidInput, "epoch time is not finite");
  }
  std::set<std::pair<GroupKey, int>> seen;
  for (const auto& s : epoch.satellites) {
    carrier_wavelength(s.group);
    if (!seen.insert({s.group, s.sat_id}).second) {
      throw Error(ErrorCode::kInvalidInput,
                  "duplicate observation of satellite " + s.satellite().to_string() +
                      " on " + s.group.to_string());
    }
    if (!(s.pseudorange_m > 1.5e7 && s.pseudorange_m < 3e7)) {
      throw Error(ErrorCode::kInvalidInput, "pseudorange out of range");
    }
    if (!(s.elevation_rad >= 0.0 && s.elevation_rad <= std::numbers::pi / 2)) {
      throw Error(ErrorCode::kInvalidInput, "elevation out of range");
    }
    if (!std::isfinite(s.phase_cycles) || !std::isfinite(s.snr_dbhz)) {
      throw Error(ErrorCode::kInvalidInput, "observation is not finite");
    }
    validate_ecef(s.satellite_position);
  }
}

double NoiseModel::phase_variance(double elevation_rad) const {
  return phase_base * phase_base +
         phase_elevation * phase_elevation / sin_squared(elevation_rad);
}

double NoiseModel::code_variance(double elevation_rad) const {
  return code_base * code_base +
         code_elevation * code_elevation / sin_squared(elevation_rad);
}

std::size_t DoubleDifferenceSet::row_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.row_count();
  return n;
}

std::size_t DoubleDifferenceSet::phase_row_count() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.phase_rows.size();
  return n;
}

const GroupDoubleDifference* DoubleDifferenceSet::find(const GroupKey& key) const {
  for (const auto& g : groups) {
    if (g.group == key) return &g;
  }
  return nullptr;
}

int select_reference_satellite(std::span<const SatelliteObservation> common) {
  if (common.empty()) {
    throw Error(ErrorCode::kNoCommonSatellite, "no common satellite in group");
  }
  const SatelliteObservation* best = &common.front();
  for (const auto& s : common) {
    if (s.elevation_rad > best->elevation_rad ||
        (s.elevation_rad == best->elevation_rad && s.sat_id < best->sat_id)) {
      best = &s;
    }
  }
  return best->sat_id;
}

DoubleDifferenceSet form_double_differences(
    const EpochObservation& user, const EpochObservation& reference,
    const NoiseModel& noise, std::span<const SatelliteId> excluded_references) {
  if (std::abs(user.time - reference.time) > kEpochMatchTolerance) {
    std::ostringstream os;
    os << "user epoch " << user.time << " and reference epoch " << reference.time
       << " differ by more than " << kEpochMatchTolerance << " s";
    throw Error(ErrorCode::kEpochMismatch, os.str());
  }

  using Key = std::pair<GroupKey, int>;
  std::map<Key, const SatelliteObservation*> ref_by_key;
  for (const auto& s : reference.satellites) ref_by_key[{s.group, s.sat_id}] = &s;

  // Common satellites per group, ascending id.
  std::map<GroupKey, std::vector<std::pair<const SatelliteObservation*,
                                           const SatelliteObservation*>>> groups;
  for (const auto& s : user.satellites) {
    auto it = ref_by_key.find({s.group, s.sat_id});
    if (it != ref_by_key.end()) groups[s.group].push_back({&s, it->second});
  }

  DoubleDifferenceSet out;
  out.time = user.time;
  for (auto& [key, pairs] : groups) {
    if (pairs.size() < 2) continue;
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
      return a.first->sat_id < b.first->sat_id;
    });

    std::vector<SatelliteObservation> eligible;
    for (const auto& p : pairs) {
      const SatelliteId id = p.first->satellite();
      if (std::find(excluded_references.begin(), excluded_references.end(), id) ==
          excluded_references.end()) {
        eligible.push_back(*p.first);
      }
    }
    if (eligible.empty()) continue;
    const int ref_id = select_reference_satellite(eligible);

    GroupDoubleDifference g;
    g.group = key;
    g.wavelength = carrier_wavelength(key);
    const SatelliteObservation* u1 = nullptr;
    const SatelliteObservation* r1 = nullptr;
    for (const auto& p : pairs) {
      if (p.first->sat_id == ref_id) {
        u1 = p.first;
        r1 = p.second;
      }
    }
    auto make_dd_sat = [](const SatelliteObservation& u, const SatelliteObservation& r) {
      DdSatellite d;
      d.sat_id = u.sat_id;
      d.position_at_user = u.satellite_position;
      d.position_at_reference = r.satellite_position;
      d.user_elevation = u.elevation_rad;
      d.loss_of_lock = u.loss_of_lock || r.loss_of_lock;
      return d;
    };
    g.reference = make_dd_sat(*u1, *r1);

    const std::size_t n = pairs.size() - 1;
    g.phase_m.resize(static_cast<Eigen::Index>(n));
    g.code_m.resize(static_cast<Eigen::Index>(n));
    Eigen::VectorXd phase_var(static_cast<Eigen::Index>(n));
    Eigen::VectorXd code_var(static_cast<Eigen::Index>(n));
    const double ref_phase_var = noise.phase_variance(u1->elevation_rad) +
                                 noise.phase_variance(r1->elevation_rad);
    const double ref_code_var = noise.code_variance(u1->elevation_rad) +
                                noise.code_variance(r1->elevation_rad);
    Eigen::Index row = 0;
    for (const auto& [us, rs] : pairs) {
      if (us->sat_id == ref_id) continue;
      g.satellites.push_back(make_dd_sat(*us, *rs));
      g.phase_m(row) = g.wavelength * ((u1->phase_cycles - r1->phase_cycles) -
                                       (us->phase_cycles - rs->phase_cycles));
      g.code_m(row) = (u1->pseudorange_m - r1->pseudorange_m) -
                      (us->pseudorange_m - rs->pseudorange_m);
      phase_var(row) = noise.phase_variance(us->elevation_rad) +
                       noise.phase_variance(rs->elevation_rad);
      code_var(row) = noise.code_variance(us->elevation_rad) +
                      noise.code_variance(rs->elevation_rad);
      g.phase_rows.push_back(static_cast<std::size_t>(row));
      g.code_rows.push_back(static_cast<std::size_t>(row));
      ++row;
    }
    // B Sigma B^T: the shared reference satellite correlates every pair of rows.
    g.phase_cov = Eigen::MatrixXd::Constant(row, row, ref_phase_var);
    g.phase_cov.diagonal() += phase_var;
    g.code_cov = Eigen::MatrixXd::Constant(row, row, ref_code_var);
    g.code_cov.diagonal() += code_var;
    out.groups.push_back(std::move(g));
  }
  return out;
}

double dd_geometric_range(const EcefPosition& user, const EcefPosition& station,
                          const EcefPosition& ref_sat_at_user,
                          const EcefPosition& ref_sat_at_station,
                          const EcefPosition& sat_at_user,
                          const EcefPosition& sat_at_station) {
  return (user.distance_to(ref_sat_at_user) - station.distance_to(ref_sat_at_station)) -
         (user.distance_to(sat_at_user) - station.distance_to(sat_at_station));
}

double h_phi(const EcefPosition& user, double ambiguity_cycles,
             const EcefPosition& ref_sat, const EcefPosition& sat,
             const EcefPosition& station, double wavelength) {
  return h_rho(user, ref_sat, sat, station) + wavelength * ambiguity_cycles;
}

double h_rho(const EcefPosition& user, const EcefPosition& ref_sat,
             const EcefPosition& sat, const EcefPosition& station) {
  return dd_geometric_range(user, station, ref_sat, ref_sat, sat, sat);
}

std::optional<std::size_t> find_ambiguity(std::span<const AmbiguityKey> keys,
                                          const GroupKey& group, int ref_sat,
                                          int sat) {
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].sat == sat && keys[i].reference_sat == ref_sat && keys[i].group == group) {
      return i;
    }
  }
  return std::nullopt;
}

LinearizedMeasurements linearize(const EcefPosition& position,
                                 const Eigen::VectorXd& ambiguities,
                                 std::span<const AmbiguityKey> keys,
                                 const DoubleDifferenceSet& dd,
                                 const EcefPosition& station) {
  const auto n_rows = static_cast<Eigen::Index>(dd.row_count());
  const auto n_cols = static_cast<Eigen::Index>(3 + keys.size());
  LinearizedMeasurements m;
  m.observed.resize(n_rows);
  m.predicted.resize(n_rows);
  m.jacobian = Eigen::MatrixXd::Zero(n_rows, n_cols);
  m.noise = Eigen::MatrixXd::Zero(n_rows, n_rows);
  m.rows.reserve(static_cast<std::size_t>(n_rows));

  auto line_of_sight = [&](const EcefPosition& sat) -> Vec3 {
    return (sat - position).normalized();
  };

  Eigen::Index row = 0;
  for (const RowKind kind : {RowKind::kPhase, RowKind::kCode}) {
    for (std::size_t gi = 0; gi < dd.groups.size(); ++gi) {
      const auto& g = dd.groups[gi];
      const auto& row_index = kind == RowKind::kPhase ? g.phase_rows : g.code_rows;
      const auto& values = kind == RowKind::kPhase ? g.phase_m : g.code_m;
      const auto& cov = kind == RowKind::kPhase ? g.phase_cov : g.code_cov;
      const Vec3 los_ref = line_of_sight(g.reference.position_at_user);
      const Eigen::Index first = row;
      for (std::size_t k = 0; k < row_index.size(); ++k, ++row) {
        const DdSatellite& s = g.satellites[row_index[k]];
        m.rows.push_back({kind, gi, row_index[k]});
        m.observed(row) = values(static_cast<Eigen::Index>(k));
        double h = dd_geometric_range(position, station, g.reference.position_at_user,
                                      g.reference.position_at_reference,
                                      s.position_at_user, s.position_at_reference);
        m.jacobian.block<1, 3>(row, 0) =
            (line_of_sight(s.position_at_user) - los_ref).transpose();
        if (kind == RowKind::kPhase) {
          const auto col = find_ambiguity(keys, g.group, g.reference.sat_id, s.sat_id);
          if (!col) {
            throw Error(ErrorCode::kInvalidInput,
                        "no ambiguity state for " + g.group.to_string() + " sat " +
                            std::to_string(s.sat_id));
          }
          const auto c = static_cast<Eigen::Index>(*col);
          h += g.wavelength * ambiguities(c);
          m.jacobian(row, 3 + c) = g.wavelength;
        }
        m.predicted(row) = h;
      }
      const Eigen::Index count = row - first;
      m.noise.block(first, first, count, count) = cov;
    }
  }
  return m;
}

Eigen::MatrixXd measurement_jacobian(const EcefPosition& position,
                                     const Eigen::VectorXd& ambiguities,
                                     std::span<const AmbiguityKey> keys,
                                     const DoubleDifferenceSet& dd,
                                     const EcefPosition& station) {
  return linearize(position, ambiguities, keys, dd, station).jacobian;
}

std::optional<CodePositionFix> solve_code_position(const DoubleDifferenceSet& dd,
                                                   const EcefPosition& station,
                                                   const EcefPosition& initial) {
  DoubleDifferenceSet code_only;
  code_only.time = dd.time;
  for (const auto& g : dd.groups) {
    GroupDoubleDifference c = g;
    c.phase_rows.clear();
    c.phase_m.resize(0);
    c.phase_cov.resize(0, 0);
    code_only.groups.push_back(std::move(c));
  }
  if (code_only.row_count() < 3) return std::nullopt;

  EcefPosition p = initial;
  const Eigen::VectorXd no_ambiguities;
  for (int iter = 0; iter < 10; ++iter) {
    const auto m = linearize(p, no_ambiguities, {}, code_only, station);
    const Eigen::MatrixXd h = m.jacobian.leftCols<3>();
    const Eigen::LDLT<Eigen::MatrixXd> r(m.noise);
    const Mat3 normal = h.transpose() * r.solve(h);
    const Eigen::LDLT<Mat3> n(normal);
    if (n.info() != Eigen::Success || n.rcond() < 1e-12) return std::nullopt;
    const Vec3 step = n.solve(h.transpose() * r.solve(m.innovation()));
    p = p + step;
    if (step.norm() < 1e-6) {
      return CodePositionFix{p, n.solve(Mat3::Identity())};
    }
  }
  return std::nullopt;
}

}  // namespace rtkvio
