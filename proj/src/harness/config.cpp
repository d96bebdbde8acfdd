#include "rtkvio/harness/config.hpp"

#include <limits>
#include <ostream>
#include <set>
#include <string>

#include <toml.hpp>

#include "rtkvio/error.hpp"

namespace rtkvio::harness {

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::kParse, "config " + path + ": " + what);
}

// A table whose keys must all be consumed.
class Table {
 public:
  Table(const toml::table& table, std::string path) : t_(table), path_(std::move(path)) {}

  void read(std::string_view key, double& v) {
    if (const auto* n = take(key)) {
      if (auto d = n->value_exact<double>()) {
        v = *d;
      } else if (auto i = n->value_exact<std::int64_t>()) {
        v = static_cast<double>(*i);
      } else {
        bad(at(key), "expected a number");
      }
    }
  }

  void read(std::string_view key, int& v) {
    std::int64_t i = v;
    read_integer(key, i, std::numeric_limits<int>::min(), std::numeric_limits<int>::max());
    v = static_cast<int>(i);
  }

  void read(std::string_view key, std::size_t& v) {
    std::int64_t i = static_cast<std::int64_t>(v);
    read_integer(key, i, 0, std::numeric_limits<std::int64_t>::max());
    v = static_cast<std::size_t>(i);
  }

  void read(std::string_view key, bool& v) {
    if (const auto* n = take(key)) {
      auto b = n->value_exact<bool>();
      if (!b) bad(at(key), "expected true or false");
      v = *b;
    }
  }

  void read(std::string_view key, std::string& v) {
    if (const auto* n = take(key)) {
      auto s = n->value_exact<std::string>();
      if (!s) bad(at(key), "expected a string");
      v = *s;
    }
  }

  void read(std::string_view key, Vec3& v) {
    if (const auto* n = take(key)) {
      const auto values = numbers(*n, key);
      if (values.size() != 3) bad(at(key), "expected 3 numbers");
      v = Vec3(values[0], values[1], values[2]);
    }
  }

  std::vector<double> numbers(const toml::node& n, std::string_view key) const {
    const auto* arr = n.as_array();
    if (!arr) bad(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *arr) {
      if (auto d = e.value_exact<double>()) {
        out.push_back(*d);
      } else if (auto i = e.value_exact<std::int64_t>()) {
        out.push_back(static_cast<double>(*i));
      } else {
        bad(at(key), "expected an array of numbers");
      }
    }
    return out;
  }

  std::vector<std::string> strings(std::string_view key) {
    std::vector<std::string> out;
    if (const auto* n = take(key)) {
      const auto* arr = n->as_array();
      if (!arr) bad(at(key), "expected an array of strings");
      for (const auto& e : *arr) {
        auto s = e.value_exact<std::string>();
        if (!s) bad(at(key), "expected an array of strings");
        out.push_back(*s);
      }
    }
    return out;
  }

  const toml::node* take(std::string_view key) {
    const toml::node* n = t_.get(key);
    if (n) used_.insert(std::string(key));
    return n;
  }

  std::optional<Table> table(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return std::nullopt;
    const auto* t = n->as_table();
    if (!t) bad(at(key), "expected a table");
    return Table(*t, at(key));
  }

  // Array of tables; an absent key leaves the list alone.
  template <typename F>
  bool tables(std::string_view key, F each) {
    const toml::node* n = take(key);
    if (!n) return false;
    const auto* arr = n->as_array();
    if (!arr) bad(at(key), "expected an array of tables");
    std::size_t i = 0;
    for (const auto& e : *arr) {
      const auto* t = e.as_table();
      if (!t) bad(at(key), "expected an array of tables");
      Table sub(*t, at(key) + "[" + std::to_string(i++) + "]");
      each(sub);
      sub.finish();
    }
    return true;
  }

  void finish() const {
    for (const auto& [k, v] : t_) {
      if (!used_.contains(std::string(k.str()))) bad(at(k.str()), "unknown key");
    }
  }

  std::string at(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

 private:
  void read_integer(std::string_view key, std::int64_t& v, std::int64_t lo, std::int64_t hi) {
    if (const auto* n = take(key)) {
      auto i = n->value_exact<std::int64_t>();
      if (!i) bad(at(key), "expected an integer");
      if (*i < lo || *i > hi) bad(at(key), "integer out of range");
      v = *i;
    }
  }

  const toml::table& t_;
  std::string path_;
  std::set<std::string> used_;
};

void read_noise(Table& t, NoiseModel& n) {
  t.read("phase_base", n.phase_base);
  t.read("phase_elevation", n.phase_elevation);
  t.read("code_base", n.code_base);
  t.read("code_elevation", n.code_elevation);
  t.finish();
}

TrajectoryKind parse_kind(const std::string& s, const std::string& path) {
  if (s == "loop") return TrajectoryKind::kLoop;
  if (s == "line") return TrajectoryKind::kLine;
  if (s == "static") return TrajectoryKind::kStatic;
  if (s == "figure8") return TrajectoryKind::kFigure8;
  bad(path, "unknown trajectory kind '" + s + "'");
}

const char* kind_name(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kLoop: return "loop";
    case TrajectoryKind::kLine: return "line";
    case TrajectoryKind::kStatic: return "static";
    case TrajectoryKind::kFigure8: return "figure8";
  }
  return "loop";
}

SatelliteId parse_satellite(const std::string& s, const std::string& path) {
  try {
    return SatelliteId::parse(s);
  } catch (const Error& e) {
    bad(path, e.what());
  }
}

void read_scenario(Table& t, Scenario& sc) {
  std::size_t seed = sc.seed;
  t.read("seed", seed);
  sc.seed = seed;
  t.read("duration", sc.duration);
  t.read("epoch_rate", sc.epoch_rate);
  t.read("start_time", sc.start_time);
  t.read("anchor_latitude", sc.anchor_latitude);
  t.read("anchor_longitude", sc.anchor_longitude);
  t.read("anchor_height", sc.anchor_height);
  if (auto tr = t.table("trajectory")) {
    std::string kind = kind_name(sc.trajectory.kind);
    tr->read("kind", kind);
    sc.trajectory.kind = parse_kind(kind, tr->at("kind"));
    tr->read("speed", sc.trajectory.speed);
    tr->read("radius", sc.trajectory.radius);
    tr->read("heading", sc.trajectory.heading);
    tr->read("vertical_amplitude", sc.trajectory.vertical_amplitude);
    tr->read("vertical_period", sc.trajectory.vertical_period);
    tr->read("pitch_amplitude", sc.trajectory.pitch_amplitude);
    tr->read("roll_amplitude", sc.trajectory.roll_amplitude);
    tr->read("pitch_period", sc.trajectory.pitch_period);
    tr->read("roll_period", sc.trajectory.roll_period);
    tr->finish();
  }
  std::vector<ConstellationSpec> sats;
  if (t.tables("satellites", [&](Table& s) {
        ConstellationSpec c;
        std::string letter(1, constellation_letter(c.constellation));
        s.read("constellation", letter);
        try {
          c.constellation = parse_constellation(letter);
        } catch (const Error& e) {
          bad(s.at("constellation"), e.what());
        }
        s.read("count", c.count);
        c.bands = s.strings("bands");
        s.read("first_prn", c.first_prn);
        sats.push_back(std::move(c));
      })) {
    sc.satellites = std::move(sats);
  }
  t.read("min_elevation", sc.min_elevation);
  t.read("max_elevation", sc.max_elevation);
  t.read("sky_rate", sc.sky_rate);
  t.read("satellite_range", sc.satellite_range);
  t.read("baseline", sc.baseline);
  t.read("baseline_azimuth", sc.baseline_azimuth);
  if (auto n = t.table("noise")) read_noise(*n, sc.noise);
  t.read("noiseless", sc.noiseless);
  std::vector<BlockageWindow> blockage;
  if (t.tables("blockage", [&](Table& b) {
        BlockageWindow w;
        b.read("start", w.start);
        b.read("end", w.end);
        for (const auto& s : b.strings("excluded")) {
          w.excluded.push_back(parse_satellite(s, b.at("excluded")));
        }
        if (const auto* az = b.take("azimuth")) {
          const auto v = b.numbers(*az, "azimuth");
          if (v.size() != 2) bad(b.at("azimuth"), "expected [min, max]");
          w.azimuth = std::pair(v[0], v[1]);
        }
        b.read("max_elevation", w.max_elevation);
        blockage.push_back(std::move(w));
      })) {
    sc.blockage = std::move(blockage);
  }
  std::vector<NlosWindow> nlos;
  if (t.tables("nlos", [&](Table& b) {
        NlosWindow w;
        std::string sat;
        b.read("satellite", sat);
        if (sat.empty()) bad(b.at("satellite"), "missing");
        w.satellite = parse_satellite(sat, b.at("satellite"));
        b.read("start", w.start);
        b.read("end", w.end);
        b.read("code_bias", w.code_bias);
        b.read("phase_bias", w.phase_bias);
        b.read("loss_of_lock", w.loss_of_lock);
        nlos.push_back(w);
      })) {
    sc.nlos = std::move(nlos);
  }
  t.read("drift", sc.drift);
  if (auto v = t.table("vio")) {
    v->read("systematic_rate", sc.vio.systematic_rate);
    v->read("white_rate", sc.vio.white_rate);
    v->read("step_sigma_floor", sc.vio.step_sigma_floor);
    v->read("rotation_sigma", sc.vio.rotation_sigma);
    v->read("cross_correlation", sc.vio.cross_correlation);
    v->read("rate", sc.vio.rate);
    v->finish();
  }
  t.read("lever_arm", sc.lever_arm);
  t.finish();
}

void read_filter(Table& t, FilterConfig& f, const std::filesystem::path& base_dir) {
  t.read("gate_multiplier", f.gate_multiplier);
  t.read("gate_floor", f.gate_floor);
  t.read("code_gate_multiplier", f.code_gate_multiplier);
  t.read("gate_sigma_floor", f.gate_sigma_floor);
  t.read("baseline_gate", f.baseline_gate);
  t.read("ratio_threshold", f.ratio_threshold);
  t.read("reprune_rounds", f.reprune_rounds);
  t.read("min_fix_ambiguities", f.min_fix_ambiguities);
  t.read("float_significance", f.float_significance);
  t.read("min_update_rows", f.min_update_rows);
  if (auto n = t.table("noise")) read_noise(*n, f.noise);
  t.read("baseline_cv", f.baseline_cv);
  t.read("new_ambiguity_sigma", f.new_ambiguity_sigma);
  t.read("cv_sigma", f.cv_sigma);
  t.read("initial_position_sigma", f.initial_position_sigma);
  t.read("vio_cross_correlation", f.vio_cross_correlation);
  t.read("vio_max_gap", f.vio_max_gap);
  t.read("vio_sigma_floor", f.vio_sigma_floor);
  t.read("initialization_horizon", f.initialization_horizon);
  t.read("alignment_window", f.alignment_window);
  if (auto a = t.table("align")) {
    a->read("fer_threshold", f.align.fer_threshold);
    a->read("min_samples", f.align.min_samples);
    a->read("relative_tolerance", f.align.relative_tolerance);
    a->read("max_iterations", f.align.max_iterations);
    a->read("max_rejected_steps", f.align.max_rejected_steps);
    a->read("max_condition", f.align.max_condition);
    a->read("prior_lever_arm", f.align.prior_lever_arm);
    a->finish();
  }
  if (auto r = t.table("realign")) {
    r->read("max_rmse", f.realign.max_rmse);
    r->read("fer_threshold", f.realign.fer_threshold);
    r->read("min_samples", f.realign.min_samples);
    r->finish();
  }
  std::string alignment_file;
  t.read("alignment_file", alignment_file);
  if (!alignment_file.empty()) {
    std::filesystem::path p(alignment_file);
    if (p.is_relative()) p = base_dir / p;
    f.prealigned = read_alignment(p);
  }
  t.finish();

  if (!(f.gate_multiplier > 0.0 && f.gate_floor > 0.0 && f.code_gate_multiplier > 0.0 &&
        f.ratio_threshold > 0.0 && f.new_ambiguity_sigma > 0.0 && f.cv_sigma > 0.0 &&
        f.initial_position_sigma > 0.0 && f.float_significance > 0.0 &&
        f.float_significance < 1.0 && f.reprune_rounds >= 0 &&
        f.vio_cross_correlation >= 0.0 && f.vio_cross_correlation <= 1.0)) {
    bad("filter", "values must be positive (significance in (0, 1), correlation in [0, 1])");
  }
}

void read_evaluate(Table& t, EvaluateOptions& e) {
  t.read("match_tolerance", e.match_tolerance);
  t.read("count_propagated", e.count_propagated);
  t.read("start_time", e.start_time);
  t.finish();
}

// TOML writer helpers.
std::string num(double v) { return format_double(v); }

std::string vec(const Vec3& v) {
  return "[" + num(v.x()) + ", " + num(v.y()) + ", " + num(v.z()) + "]";
}

std::string boolean(bool b) { return b ? "true" : "false"; }

void write_noise(std::ostream& out, const NoiseModel& n) {
  out << "phase_base = " << num(n.phase_base) << '\n'
      << "phase_elevation = " << num(n.phase_elevation) << '\n'
      << "code_base = " << num(n.code_base) << '\n'
      << "code_elevation = " << num(n.code_elevation) << '\n';
}

}  // namespace

Config parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::kParse,
                "config line " + std::to_string(e.source().begin.line) + ": " +
                    std::string(e.description()));
  }
  Config c;
  Table top(root, "");
  if (auto t = top.table("scenario")) read_scenario(*t, c.scenario);
  if (auto t = top.table("filter")) read_filter(*t, c.filter, base_dir);
  if (auto t = top.table("evaluate")) read_evaluate(*t, c.evaluate);
  top.finish();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.parent_path());
}

void write_config(std::ostream& out, const Config& c) {
  const Scenario& s = c.scenario;
  out << "[scenario]\n"
      << "seed = " << s.seed << '\n'
      << "duration = " << num(s.duration) << '\n'
      << "epoch_rate = " << num(s.epoch_rate) << '\n'
      << "start_time = " << num(s.start_time) << '\n'
      << "anchor_latitude = " << num(s.anchor_latitude) << '\n'
      << "anchor_longitude = " << num(s.anchor_longitude) << '\n'
      << "anchor_height = " << num(s.anchor_height) << '\n'
      << "min_elevation = " << num(s.min_elevation) << '\n'
      << "max_elevation = " << num(s.max_elevation) << '\n'
      << "sky_rate = " << num(s.sky_rate) << '\n'
      << "satellite_range = " << num(s.satellite_range) << '\n'
      << "baseline = " << num(s.baseline) << '\n'
      << "baseline_azimuth = " << num(s.baseline_azimuth) << '\n'
      << "noiseless = " << boolean(s.noiseless) << '\n'
      << "drift = " << boolean(s.drift) << '\n'
      << "lever_arm = " << vec(s.lever_arm) << '\n';
  if (s.satellites.empty()) out << "satellites = []\n";

  out << "\n[scenario.trajectory]\n"
      << "kind = \"" << kind_name(s.trajectory.kind) << "\"\n"
      << "speed = " << num(s.trajectory.speed) << '\n'
      << "radius = " << num(s.trajectory.radius) << '\n'
      << "heading = " << num(s.trajectory.heading) << '\n'
      << "vertical_amplitude = " << num(s.trajectory.vertical_amplitude) << '\n'
      << "vertical_period = " << num(s.trajectory.vertical_period) << '\n'
      << "pitch_amplitude = " << num(s.trajectory.pitch_amplitude) << '\n'
      << "roll_amplitude = " << num(s.trajectory.roll_amplitude) << '\n'
      << "pitch_period = " << num(s.trajectory.pitch_period) << '\n'
      << "roll_period = " << num(s.trajectory.roll_period) << '\n';

  out << "\n[scenario.noise]\n";
  write_noise(out, s.noise);

  out << "\n[scenario.vio]\n"
      << "systematic_rate = " << num(s.vio.systematic_rate) << '\n'
      << "white_rate = " << num(s.vio.white_rate) << '\n'
      << "step_sigma_floor = " << num(s.vio.step_sigma_floor) << '\n'
      << "rotation_sigma = " << num(s.vio.rotation_sigma) << '\n'
      << "cross_correlation = " << num(s.vio.cross_correlation) << '\n'
      << "rate = " << num(s.vio.rate) << '\n';

  for (const auto& c : s.satellites) {
    out << "\n[[scenario.satellites]]\n"
        << "constellation = \"" << constellation_letter(c.constellation) << "\"\n"
        << "count = " << c.count << '\n'
        << "first_prn = " << c.first_prn << '\n'
        << "bands = [";
    for (std::size_t i = 0; i < c.bands.size(); ++i) {
      out << (i ? ", " : "") << '"' << c.bands[i] << '"';
    }
    out << "]\n";
  }
  for (const auto& w : s.blockage) {
    out << "\n[[scenario.blockage]]\n"
        << "start = " << num(w.start) << '\n'
        << "end = " << num(w.end) << '\n'
        << "max_elevation = " << num(w.max_elevation) << '\n'
        << "excluded = [";
    for (std::size_t i = 0; i < w.excluded.size(); ++i) {
      out << (i ? ", " : "") << '"' << w.excluded[i].to_string() << '"';
    }
    out << "]\n";
    if (w.azimuth) {
      out << "azimuth = [" << num(w.azimuth->first) << ", " << num(w.azimuth->second) << "]\n";
    }
  }
  for (const auto& w : s.nlos) {
    out << "\n[[scenario.nlos]]\n"
        << "satellite = \"" << w.satellite.to_string() << "\"\n"
        << "start = " << num(w.start) << '\n'
        << "end = " << num(w.end) << '\n'
        << "code_bias = " << num(w.code_bias) << '\n'
        << "phase_bias = " << num(w.phase_bias) << '\n'
        << "loss_of_lock = " << boolean(w.loss_of_lock) << '\n';
  }

  const FilterConfig& f = c.filter;
  out << "\n[filter]\n"
      << "gate_multiplier = " << num(f.gate_multiplier) << '\n'
      << "gate_floor = " << num(f.gate_floor) << '\n'
      << "code_gate_multiplier = " << num(f.code_gate_multiplier) << '\n'
      << "gate_sigma_floor = " << num(f.gate_sigma_floor) << '\n'
      << "baseline_gate = " << num(f.baseline_gate) << '\n'
      << "ratio_threshold = " << num(f.ratio_threshold) << '\n'
      << "reprune_rounds = " << f.reprune_rounds << '\n'
      << "min_fix_ambiguities = " << f.min_fix_ambiguities << '\n'
      << "float_significance = " << num(f.float_significance) << '\n'
      << "min_update_rows = " << f.min_update_rows << '\n'
      << "baseline_cv = " << boolean(f.baseline_cv) << '\n'
      << "new_ambiguity_sigma = " << num(f.new_ambiguity_sigma) << '\n'
      << "cv_sigma = " << num(f.cv_sigma) << '\n'
      << "initial_position_sigma = " << num(f.initial_position_sigma) << '\n'
      << "vio_cross_correlation = " << num(f.vio_cross_correlation) << '\n'
      << "vio_max_gap = " << num(f.vio_max_gap) << '\n'
      << "vio_sigma_floor = " << num(f.vio_sigma_floor) << '\n'
      << "initialization_horizon = " << num(f.initialization_horizon) << '\n'
      << "alignment_window = " << num(f.alignment_window) << '\n'
      << "# alignment_file = \"alignment.txt\"  # skips initialization\n";
  out << "\n[filter.noise]\n";
  write_noise(out, f.noise);
  out << "\n[filter.align]\n"
      << "fer_threshold = " << num(f.align.fer_threshold) << '\n'
      << "min_samples = " << f.align.min_samples << '\n'
      << "relative_tolerance = " << num(f.align.relative_tolerance) << '\n'
      << "max_iterations = " << f.align.max_iterations << '\n'
      << "max_rejected_steps = " << f.align.max_rejected_steps << '\n'
      << "max_condition = " << num(f.align.max_condition) << '\n'
      << "prior_lever_arm = " << vec(f.align.prior_lever_arm) << '\n';
  out << "\n[filter.realign]\n"
      << "max_rmse = " << num(f.realign.max_rmse) << '\n'
      << "fer_threshold = " << num(f.realign.fer_threshold) << '\n'
      << "min_samples = " << f.realign.min_samples << '\n';

  out << "\n[evaluate]\n"
      << "match_tolerance = " << num(c.evaluate.match_tolerance) << '\n'
      << "count_propagated = " << boolean(c.evaluate.count_propagated) << '\n'
      << "start_time = " << num(c.evaluate.start_time) << '\n';
}

}  // namespace rtkvio::harness
