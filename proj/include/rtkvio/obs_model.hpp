#pragma once

#include <Eigen/Core>

#include <compare>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rtkvio/frames.hpp"

namespace rtkvio {

inline constexpr double kSpeedOfLight = 299792458.0;
// Reference and user epochs closer than this are treated as simultaneous.
inline constexpr double kEpochMatchTolerance = 0.02;

enum class Constellation : char {
  kGps = 'G',
  kGalileo = 'E',
  kBeidou = 'C',
  kQzss = 'J',
};

Constellation parse_constellation(const std::string& token);
char constellation_letter(Constellation c);

// Signals of one constellation on one band. Carrier phases are only
// differenced inside a group.
struct GroupKey {
  Constellation constellation = Constellation::kGps;
  std::string band;

  auto operator<=>(const GroupKey&) const = default;
  std::string to_string() const;
};

// Carrier wavelength in meters; throws kInvalidInput for an unknown band.
double carrier_wavelength(const GroupKey& group);

struct SignalGroup {
  GroupKey key;
  double wavelength = 0.0;

  static SignalGroup from_key(const GroupKey& key) {
    return {key, carrier_wavelength(key)};
  }
};

struct SatelliteId {
  Constellation constellation = Constellation::kGps;
  int prn = 0;

  auto operator<=>(const SatelliteId&) const = default;
  std::string to_string() const;  // e.g. "G07"
  static SatelliteId parse(const std::string& token);
};

struct SatelliteObservation {
  int sat_id = 0;
  GroupKey group;
  double phase_cycles = 0.0;
  double pseudorange_m = 0.0;
  EcefPosition satellite_position;  // at transmit time
  double elevation_rad = 0.0;
  double snr_dbhz = 0.0;
  bool loss_of_lock = false;

  SatelliteId satellite() const { return {group.constellation, sat_id}; }
};

enum class ReceiverRole { kUser, kReference };

struct EpochObservation {
  double time = 0.0;  // continuous GPS time scale, seconds
  ReceiverRole role = ReceiverRole::kUser;
  std::vector<SatelliteObservation> satellites;
};

// A receiver's epochs in time order; a reference stream also carries the
// surveyed station position.
struct ObservationStream {
  ReceiverRole role = ReceiverRole::kUser;
  std::optional<EcefPosition> station_position;
  std::vector<EpochObservation> epochs;
};

// Checks the per-observation and per-epoch invariants (ranges, uniqueness).
void validate_epoch(const EpochObservation& epoch);

// Per-satellite variance sigma^2 = base^2 + elev^2 / sin^2(elevation),
// separately for carrier phase and code. Values in meters.
struct NoiseModel {
  double phase_base = 0.003;
  double phase_elevation = 0.003;
  double code_base = 0.3;
  double code_elevation = 0.3;

  double phase_variance(double elevation_rad) const;
  double code_variance(double elevation_rad) const;
};

struct DdSatellite {
  int sat_id = 0;
  EcefPosition position_at_user;
  EcefPosition position_at_reference;
  double user_elevation = 0.0;
  bool loss_of_lock = false;  // set if either receiver flagged it
};

// Double differences of one signal group against its reference satellite.
// `satellites` lists the non-reference satellites in ascending id order; each
// measurement row points into it, so phase and code rows can be pruned
// independently.
struct GroupDoubleDifference {
  GroupKey group;
  double wavelength = 0.0;
  DdSatellite reference;
  std::vector<DdSatellite> satellites;
  std::vector<std::size_t> phase_rows;
  std::vector<std::size_t> code_rows;
  Eigen::VectorXd phase_m;  // lambda * DD(phase cycles)
  Eigen::VectorXd code_m;
  Eigen::MatrixXd phase_cov;
  Eigen::MatrixXd code_cov;

  std::size_t row_count() const { return phase_rows.size() + code_rows.size(); }
};

struct DoubleDifferenceSet {
  double time = 0.0;
  std::vector<GroupDoubleDifference> groups;

  std::size_t row_count() const;
  std::size_t phase_row_count() const;
  bool empty() const { return row_count() == 0; }
  const GroupDoubleDifference* find(const GroupKey& key) const;
};

// Highest user-side elevation, ties broken by the lowest satellite id.
// Throws kNoCommonSatellite on empty input.
int select_reference_satellite(std::span<const SatelliteObservation> common);

// Forms between-receiver, between-satellite differences for every group with
// at least two common satellites. Satellites listed in `excluded_references`
// are not eligible as the reference of their group (they may still appear as
// ordinary satellites). Throws kEpochMismatch when the epochs are more than
// kEpochMatchTolerance apart.
DoubleDifferenceSet form_double_differences(
    const EpochObservation& user, const EpochObservation& reference,
    const NoiseModel& noise,
    std::span<const SatelliteId> excluded_references = {});

// Double-differenced geometric range
// (|pu - p1| - |pr - p1|) - (|pu - ps| - |pr - ps|).
double dd_geometric_range(const EcefPosition& user, const EcefPosition& station,
                          const EcefPosition& ref_sat_at_user,
                          const EcefPosition& ref_sat_at_station,
                          const EcefPosition& sat_at_user,
                          const EcefPosition& sat_at_station);

double h_phi(const EcefPosition& user, double ambiguity_cycles,
             const EcefPosition& ref_sat, const EcefPosition& sat,
             const EcefPosition& station, double wavelength);

double h_rho(const EcefPosition& user, const EcefPosition& ref_sat,
             const EcefPosition& sat, const EcefPosition& station);

// State entry for one double-differenced ambiguity (cycles).
struct AmbiguityKey {
  GroupKey group;
  int reference_sat = 0;
  int sat = 0;

  auto operator<=>(const AmbiguityKey&) const = default;
};

enum class RowKind { kPhase, kCode };

struct RowInfo {
  RowKind kind = RowKind::kPhase;
  std::size_t group_index = 0;
  std::size_t satellite_index = 0;  // into GroupDoubleDifference::satellites
};

// Stacked measurement model for a state x = [position(3); ambiguities].
// Rows are ordered phase rows of every group, then code rows of every group.
struct LinearizedMeasurements {
  Eigen::VectorXd observed;
  Eigen::VectorXd predicted;
  Eigen::MatrixXd jacobian;
  Eigen::MatrixXd noise;
  std::vector<RowInfo> rows;

  Eigen::VectorXd innovation() const { return observed - predicted; }
};

// Index of the state column holding `key`'s ambiguity within `keys`, if any.
std::optional<std::size_t> find_ambiguity(std::span<const AmbiguityKey> keys,
                                          const GroupKey& group, int ref_sat,
                                          int sat);

// Evaluates h_phi/h_rho for every row and their Jacobian. Phase rows must
// have a matching ambiguity in `keys` (throws kInvalidInput otherwise).
LinearizedMeasurements linearize(const EcefPosition& position,
                                 const Eigen::VectorXd& ambiguities,
                                 std::span<const AmbiguityKey> keys,
                                 const DoubleDifferenceSet& dd,
                                 const EcefPosition& station);

Eigen::MatrixXd measurement_jacobian(const EcefPosition& position,
                                     const Eigen::VectorXd& ambiguities,
                                     std::span<const AmbiguityKey> keys,
                                     const DoubleDifferenceSet& dd,
                                     const EcefPosition& station);

// Least-squares position from double-differenced code only, iterated from
// `initial`. Returns nullopt with fewer than 3 code rows or no convergence.
struct CodePositionFix {
  EcefPosition position;
  Mat3 covariance;
};
std::optional<CodePositionFix> solve_code_position(const DoubleDifferenceSet& dd,
                                                   const EcefPosition& station,
                                                   const EcefPosition& initial);

}  // namespace rtkvio
