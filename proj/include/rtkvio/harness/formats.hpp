#pragma once

// Line-oriented text formats shared by the simulator and the CLI. Every file
// starts with a "# format: v1" line; other '#' lines are comments. Doubles
// are written in shortest round-trip form, so write -> read is bit-exact.
//
// observations:  time role sat_id constellation band phase_cycles
//                pseudorange_m sat_x sat_y sat_z elevation_rad snr_dbhz lli
//                (reference files add "# station: x y z")
// odometry:      time tx ty tz qx qy qz qw [21 upper-triangular covariance
//                entries, rotation block first]
// solutions:     time x y z status ratio nsat sdx sdy sdz
// positions:     time x y z  (solution files are accepted too)
// alignment:     key value... lines, see write_alignment

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rtkvio/align_calib.hpp"
#include "rtkvio/frames.hpp"
#include "rtkvio/fusion.hpp"
#include "rtkvio/obs_model.hpp"

namespace rtkvio::harness {

std::string format_double(double value);
// Whole-token parse; throws kParse on trailing garbage or a non-finite value.
double parse_double(std::string_view token);

void write_observations(std::ostream& out, const ObservationStream& stream);
// Throws kParse (with the line number) on malformed lines or duplicate
// (epoch, satellite, group) rows, kOrdering when time decreases.
ObservationStream read_observations(std::istream& in);
ObservationStream read_observations(const std::filesystem::path& path);

void write_vio(std::ostream& out, const std::vector<VioSample>& samples);
// Quaternions off unit length by more than 1e-12 are renormalized; by more
// than 1e-3 they are rejected. Times must increase strictly.
std::vector<VioSample> read_vio(std::istream& in);
std::vector<VioSample> read_vio(const std::filesystem::path& path);
std::vector<TimedPose> to_timed_poses(const std::vector<VioSample>& samples);

void write_solutions(std::ostream& out, const std::vector<Solution>& solutions);

// One row of a position file. `status` is present for solution files.
struct PositionRecord {
  double time = 0.0;
  EcefPosition position;
  std::optional<SolutionStatus> status;
};

void write_positions(std::ostream& out, const std::vector<PositionRecord>& records);
std::vector<PositionRecord> read_positions(std::istream& in);
std::vector<PositionRecord> read_positions(const std::filesystem::path& path);

void write_alignment(std::ostream& out, const AlignmentResult& alignment);
AlignmentResult read_alignment(std::istream& in);
AlignmentResult read_alignment(const std::filesystem::path& path);

// File helpers that raise kIo.
void write_file(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace rtkvio::harness
