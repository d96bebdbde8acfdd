#include "rtkvio/harness/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "rtkvio/error.hpp"
#include "rtkvio/geodesy.hpp"

namespace rtkvio::harness {

namespace {

const PositionRecord* nearest(const std::vector<PositionRecord>& truth, double t,
                              double tolerance) {
  auto it = std::lower_bound(truth.begin(), truth.end(), t,
                             [](const PositionRecord& r, double v) { return r.time < v; });
  const PositionRecord* best = nullptr;
  double best_gap = tolerance;
  for (auto c : {it, it == truth.begin() ? it : std::prev(it)}) {
    if (c == truth.end()) continue;
    const double gap = std::abs(c->time - t);
    if (gap <= best_gap) {
      best_gap = gap;
      best = &*c;
    }
  }
  return best;
}

}  // namespace

std::vector<ErrorSample> match_errors(const std::vector<PositionRecord>& estimated,
                                      const std::vector<PositionRecord>& truth,
                                      const EvaluateOptions& options) {
  std::vector<ErrorSample> out;
  for (const auto& e : estimated) {
    if (e.time < options.start_time) continue;
    const PositionRecord* t = nearest(truth, e.time, options.match_tolerance);
    if (!t) continue;
    ErrorSample s;
    s.time = e.time;
    s.error = e.position - t->position;
    s.ape = s.error.norm();
    s.status = e.status;
    out.push_back(s);
  }
  return out;
}

SolutionStats evaluate(const std::vector<PositionRecord>& estimated,
                       const std::vector<PositionRecord>& truth,
                       const EvaluateOptions& options) {
  const auto samples = match_errors(estimated, truth, options);
  if (samples.empty()) {
    throw Error(ErrorCode::kEmptyEvaluation, "no estimated epoch matches the truth");
  }
  SolutionStats s;
  s.epochs = samples.size();
  std::vector<double> ape;
  ape.reserve(samples.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (const auto& m : samples) {
    ape.push_back(m.ape);
    sum += m.ape;
    sum_sq += m.ape * m.ape;
    const SolutionStatus st = m.status.value_or(SolutionStatus::kFloat);
    if (st == SolutionStatus::kFixed) ++s.fixed;
    if (st != SolutionStatus::kPropagated || options.count_propagated) ++s.attempted;
  }
  const double n = static_cast<double>(samples.size());
  s.mean = sum / n;
  s.rmse = std::sqrt(sum_sq / n);
  double var = 0.0;
  for (double a : ape) var += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(var / n);
  std::sort(ape.begin(), ape.end());
  const std::size_t mid = ape.size() / 2;
  s.median = ape.size() % 2 ? ape[mid] : 0.5 * (ape[mid - 1] + ape[mid]);
  s.max = ape.back();
  s.fsr = s.attempted ? 100.0 * static_cast<double>(s.fixed) /
                            static_cast<double>(s.attempted)
                      : 0.0;
  return s;
}

std::vector<PositionRecord> to_records(const std::vector<Solution>& solutions) {
  std::vector<PositionRecord> out;
  out.reserve(solutions.size());
  for (const auto& s : solutions) out.push_back({s.time, s.position, s.status});
  return out;
}

void write_plot_data(std::ostream& out, const std::vector<ErrorSample>& samples,
                     const std::vector<PositionRecord>& truth) {
  out << "time,ape,east,north,up,status\n";
  for (const auto& s : samples) {
    const PositionRecord* t = nearest(truth, s.time, 1e300);
    const Geodetic g = ecef_to_geodetic(t->position);
    const Vec3 enu = enu_to_ecef_rotation(g.latitude, g.longitude).transpose() * s.error;
    out << format_double(s.time) << ',' << format_double(s.ape) << ','
        << format_double(enu.x()) << ',' << format_double(enu.y()) << ','
        << format_double(enu.z()) << ',' << (s.status ? to_string(*s.status) : "") << '\n';
  }
}

void print_stats(std::ostream& out, const SolutionStats& s) {
  out << "epochs " << s.epochs << '\n'
      << "rmse " << format_double(s.rmse) << '\n'
      << "mean " << format_double(s.mean) << '\n'
      << "median " << format_double(s.median) << '\n'
      << "std " << format_double(s.std) << '\n'
      << "max " << format_double(s.max) << '\n'
      << "fsr " << format_double(s.fsr) << " (" << s.fixed << '/' << s.attempted << ")\n";
}

}  // namespace rtkvio::harness
