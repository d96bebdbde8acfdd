#include "rtkvio/harness/formats.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "rtkvio/error.hpp"

namespace rtkvio::harness {

namespace {

constexpr std::string_view kFormatLine = "# format: v1";

[[noreturn]] void fail_at(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kParse, "line " + std::to_string(line) + ": " + what);
}

std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// Iterates the data lines of a file. Header comments are handed to
// `on_comment`; a format line naming another version is rejected.
template <typename Comment, typename Data>
void scan(std::istream& in, Comment on_comment, Data on_data) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string_view view(line);
    const auto hash = view.find('#');
    if (hash != std::string_view::npos) {
      const auto comment = view.substr(hash);
      if (comment.starts_with("# format:") && comment != kFormatLine) {
        fail_at(number, "unsupported format '" + std::string(comment.substr(9)) + "'");
      }
      on_comment(comment, number);
    }
    const auto tokens = split(view.substr(0, hash));
    if (!tokens.empty()) on_data(tokens, number);
  }
  if (in.bad()) throw Error(ErrorCode::kIo, "read error");
}

double number_at(std::string_view token, std::size_t line, const char* what) {
  try {
    return parse_double(token);
  } catch (const Error&) {
    fail_at(line, std::string("bad ") + what + " '" + std::string(token) + "'");
  }
}

int int_at(std::string_view token, std::size_t line, const char* what) {
  int v = 0;
  const auto r = std::from_chars(token.data(), token.data() + token.size(), v);
  if (r.ec != std::errc() || r.ptr != token.data() + token.size()) {
    fail_at(line, std::string("bad ") + what + " '" + std::string(token) + "'");
  }
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return in;
}

const char* role_name(ReceiverRole role) {
  return role == ReceiverRole::kUser ? "user" : "reference";
}

ReceiverRole parse_role(std::string_view token, std::size_t line) {
  if (token == "user") return ReceiverRole::kUser;
  if (token == "reference") return ReceiverRole::kReference;
  fail_at(line, "unknown receiver role '" + std::string(token) + "'");
}

SolutionStatus parse_status(std::string_view token, std::size_t line) {
  if (token == "FIX") return SolutionStatus::kFixed;
  if (token == "FLOAT") return SolutionStatus::kFloat;
  if (token == "PROP") return SolutionStatus::kPropagated;
  fail_at(line, "unknown status '" + std::string(token) + "'");
}

void put(std::ostream& out, double v) { out << format_double(v); }

void put_row(std::ostream& out, std::initializer_list<double> values) {
  bool first = true;
  for (double v : values) {
    if (!first) out << ' ';
    put(out, v);
    first = false;
  }
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view token) {
  double v = 0.0;
  const char* end = token.data() + token.size();
  // from_chars rejects a leading '+', which hand-edited files may contain.
  const char* begin = token.data();
  if (begin != end && *begin == '+') ++begin;
  const auto r = std::from_chars(begin, end, v);
  if (r.ec != std::errc() || r.ptr != end || !std::isfinite(v)) {
    throw Error(ErrorCode::kParse, "bad number '" + std::string(token) + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Observations

void write_observations(std::ostream& out, const ObservationStream& stream) {
  out << kFormatLine << '\n';
  if (stream.station_position) {
    const auto& p = *stream.station_position;
    out << "# station: ";
    put_row(out, {p.x(), p.y(), p.z()});
    out << '\n';
  }
  for (const auto& e : stream.epochs) {
    for (const auto& s : e.satellites) {
      put(out, e.time);
      out << ' ' << role_name(e.role) << ' ' << s.sat_id << ' '
          << constellation_letter(s.group.constellation) << ' ' << s.group.band << ' ';
      put_row(out, {s.phase_cycles, s.pseudorange_m, s.satellite_position.x(),
                    s.satellite_position.y(), s.satellite_position.z(), s.elevation_rad,
                    s.snr_dbhz});
      out << ' ' << (s.loss_of_lock ? 1 : 0) << '\n';
    }
  }
}

ObservationStream read_observations(std::istream& in) {
  ObservationStream stream;
  std::optional<ReceiverRole> role;
  std::set<std::pair<GroupKey, int>> seen;  // rows of the current epoch
  std::size_t epoch_line = 0;

  auto close_epoch = [&] {
    if (stream.epochs.empty()) return;
    try {
      validate_epoch(stream.epochs.back());
    } catch (const Error& e) {
      fail_at(epoch_line, e.what());
    }
  };

  scan(
      in,
      [&](std::string_view comment, std::size_t line) {
        if (!comment.starts_with("# station:")) return;
        const auto t = split(comment.substr(10));
        if (t.size() != 3) fail_at(line, "station header needs 3 coordinates");
        if (stream.station_position) fail_at(line, "duplicate station header");
        EcefPosition p(number_at(t[0], line, "station x"), number_at(t[1], line, "station y"),
                       number_at(t[2], line, "station z"));
        try {
          validate_ecef(p);
        } catch (const Error& e) {
          fail_at(line, e.what());
        }
        stream.station_position = p;
      },
      [&](const std::vector<std::string_view>& t, std::size_t line) {
        if (t.size() != 13) {
          fail_at(line, "expected 13 fields, found " + std::to_string(t.size()));
        }
        const double time = number_at(t[0], line, "time");
        const ReceiverRole r = parse_role(t[1], line);
        if (role && *role != r) fail_at(line, "receiver role changes within the file");
        role = r;

        SatelliteObservation s;
        s.sat_id = int_at(t[2], line, "satellite id");
        if (s.sat_id <= 0) fail_at(line, "satellite id must be positive");
        try {
          s.group.constellation = parse_constellation(std::string(t[3]));
          s.group.band = std::string(t[4]);
          carrier_wavelength(s.group);
        } catch (const Error& e) {
          fail_at(line, e.what());
        }
        s.phase_cycles = number_at(t[5], line, "phase");
        s.pseudorange_m = number_at(t[6], line, "pseudorange");
        s.satellite_position = EcefPosition(number_at(t[7], line, "satellite x"),
                                            number_at(t[8], line, "satellite y"),
                                            number_at(t[9], line, "satellite z"));
        s.elevation_rad = number_at(t[10], line, "elevation");
        s.snr_dbhz = number_at(t[11], line, "snr");
        if (t[12] == "0") {
          s.loss_of_lock = false;
        } else if (t[12] == "1") {
          s.loss_of_lock = true;
        } else {
          fail_at(line, "loss-of-lock flag must be 0 or 1");
        }

        if (stream.epochs.empty() || time > stream.epochs.back().time) {
          close_epoch();
          stream.epochs.push_back({time, r, {}});
          seen.clear();
          epoch_line = line;
        } else if (time < stream.epochs.back().time) {
          throw Error(ErrorCode::kOrdering,
                      "line " + std::to_string(line) + ": time goes backwards");
        }
        if (!seen.insert({s.group, s.sat_id}).second) {
          fail_at(line, "duplicate row for " + s.satellite().to_string() + " on " +
                            s.group.to_string());
        }
        stream.epochs.back().satellites.push_back(std::move(s));
      });
  close_epoch();
  stream.role = role.value_or(stream.station_position ? ReceiverRole::kReference
                                                      : ReceiverRole::kUser);
  return stream;
}

ObservationStream read_observations(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_observations(in);
}

// ---------------------------------------------------------------------------
// Odometry

void write_vio(std::ostream& out, const std::vector<VioSample>& samples) {
  out << kFormatLine << '\n';
  for (const auto& s : samples) {
    const auto& q = s.orientation;
    put_row(out, {s.time, s.position.x(), s.position.y(), s.position.z(), q.x(), q.y(), q.z(),
                  q.w()});
    if (s.covariance) {
      for (int r = 0; r < 6; ++r) {
        for (int c = r; c < 6; ++c) {
          out << ' ';
          put(out, (*s.covariance)(r, c));
        }
      }
    }
    out << '\n';
  }
}

std::vector<VioSample> read_vio(std::istream& in) {
  std::vector<VioSample> out;
  scan(
      in, [](std::string_view, std::size_t) {},
      [&](const std::vector<std::string_view>& t, std::size_t line) {
        if (t.size() != 8 && t.size() != 29) {
          fail_at(line, "expected 8 or 29 fields, found " + std::to_string(t.size()));
        }
        VioSample s;
        s.time = number_at(t[0], line, "time");
        s.position = Vec3(number_at(t[1], line, "tx"), number_at(t[2], line, "ty"),
                          number_at(t[3], line, "tz"));
        Eigen::Quaterniond q(number_at(t[7], line, "qw"), number_at(t[4], line, "qx"),
                             number_at(t[5], line, "qy"), number_at(t[6], line, "qz"));
        const double deviation = std::abs(q.norm() - 1.0);
        if (!(deviation <= 1e-3)) fail_at(line, "quaternion is not unit length");
        if (deviation > 1e-12) q.normalize();
        s.orientation = q;
        if (t.size() == 29) {
          Mat6 cov;
          std::size_t k = 8;
          for (int r = 0; r < 6; ++r) {
            for (int c = r; c < 6; ++c) {
              cov(r, c) = cov(c, r) = number_at(t[k++], line, "covariance");
            }
          }
          s.covariance = cov;
        }
        try {
          s.to_timed_pose().pose.validate();
        } catch (const Error& e) {
          fail_at(line, e.what());
        }
        if (!out.empty() && !(s.time > out.back().time)) {
          throw Error(ErrorCode::kOrdering,
                      "line " + std::to_string(line) + ": time does not increase");
        }
        out.push_back(std::move(s));
      });
  return out;
}

std::vector<VioSample> read_vio(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_vio(in);
}

std::vector<TimedPose> to_timed_poses(const std::vector<VioSample>& samples) {
  std::vector<TimedPose> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.to_timed_pose());
  return out;
}

// ---------------------------------------------------------------------------
// Solutions and positions

void write_solutions(std::ostream& out, const std::vector<Solution>& solutions) {
  out << kFormatLine << '\n';
  out << "# time x y z status ratio nsat sdx sdy sdz\n";
  for (const auto& s : solutions) {
    put_row(out, {s.time, s.position.x(), s.position.y(), s.position.z()});
    out << ' ' << to_string(s.status) << ' ';
    put(out, s.ratio);
    out << ' ' << s.satellite_count() << ' ';
    const Vec3 sd = s.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    put_row(out, {sd.x(), sd.y(), sd.z()});
    out << '\n';
  }
}

void write_positions(std::ostream& out, const std::vector<PositionRecord>& records) {
  out << kFormatLine << '\n';
  for (const auto& r : records) {
    put_row(out, {r.time, r.position.x(), r.position.y(), r.position.z()});
    if (r.status) out << ' ' << to_string(*r.status);
    out << '\n';
  }
}

std::vector<PositionRecord> read_positions(std::istream& in) {
  std::vector<PositionRecord> out;
  scan(
      in, [](std::string_view, std::size_t) {},
      [&](const std::vector<std::string_view>& t, std::size_t line) {
        if (t.size() != 4 && t.size() != 5 && t.size() != 10) {
          fail_at(line, "expected 4, 5 or 10 fields, found " + std::to_string(t.size()));
        }
        PositionRecord r;
        r.time = number_at(t[0], line, "time");
        r.position = EcefPosition(number_at(t[1], line, "x"), number_at(t[2], line, "y"),
                                  number_at(t[3], line, "z"));
        if (t.size() >= 5) r.status = parse_status(t[4], line);
        if (t.size() == 10) {
          for (std::size_t k = 5; k < 10; ++k) number_at(t[k], line, "solution field");
        }
        if (!out.empty() && !(r.time > out.back().time)) {
          throw Error(ErrorCode::kOrdering,
                      "line " + std::to_string(line) + ": time does not increase");
        }
        out.push_back(r);
      });
  return out;
}

std::vector<PositionRecord> read_positions(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_positions(in);
}

// ---------------------------------------------------------------------------
// Alignment

void write_alignment(std::ostream& out, const AlignmentResult& a) {
  out << kFormatLine << '\n';
  const Mat3& r = a.t_eo.rotation();
  out << "rotation ";
  put_row(out, {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1),
                r(2, 2)});
  out << "\ntranslation ";
  const Vec3& t = a.t_eo.translation();
  put_row(out, {t.x(), t.y(), t.z()});
  out << "\nlever_arm ";
  put_row(out, {a.lever_arm.x(), a.lever_arm.y(), a.lever_arm.z()});
  out << "\nrmse ";
  put(out, a.rmse);
  out << "\nfer ";
  put(out, a.fer);
  out << "\nlever_arm_estimated " << (a.lever_arm_estimated ? 1 : 0) << '\n';
}

AlignmentResult read_alignment(std::istream& in) {
  AlignmentResult a;
  std::optional<Mat3> rotation;
  std::optional<Vec3> translation;
  std::set<std::string> seen;
  scan(
      in, [](std::string_view, std::size_t) {},
      [&](const std::vector<std::string_view>& t, std::size_t line) {
        const std::string key(t[0]);
        if (!seen.insert(key).second) fail_at(line, "duplicate key '" + key + "'");
        auto values = [&](std::size_t n) {
          if (t.size() != n + 1) {
            fail_at(line, "'" + key + "' takes " + std::to_string(n) + " values");
          }
          std::vector<double> v;
          for (std::size_t k = 1; k <= n; ++k) v.push_back(number_at(t[k], line, key.c_str()));
          return v;
        };
        if (key == "rotation") {
          const auto v = values(9);
          Mat3 r;
          r << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
          rotation = r;
        } else if (key == "translation") {
          const auto v = values(3);
          translation = Vec3(v[0], v[1], v[2]);
        } else if (key == "lever_arm") {
          const auto v = values(3);
          a.lever_arm = Vec3(v[0], v[1], v[2]);
        } else if (key == "rmse") {
          a.rmse = values(1)[0];
        } else if (key == "fer") {
          a.fer = values(1)[0];
        } else if (key == "lever_arm_estimated") {
          a.lever_arm_estimated = values(1)[0] != 0.0;
        } else {
          fail_at(line, "unknown key '" + key + "'");
        }
      });
  if (!rotation || !translation) {
    throw Error(ErrorCode::kParse, "alignment file needs rotation and translation");
  }
  a.t_eo = Pose(*rotation, *translation);
  try {
    a.t_eo.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kParse, std::string("alignment rotation: ") + e.what());
  }
  return a;
}

AlignmentResult read_alignment(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_alignment(in);
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << contents;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace rtkvio::harness
