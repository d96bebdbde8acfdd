#include "rtkvio/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>

#include "rtkvio/ambiguity.hpp"
#include "rtkvio/error.hpp"

namespace rtkvio {

namespace {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

Mat6 symmetric_sqrt(const Mat6& m) {
  const Eigen::SelfAdjointEigenSolver<Mat6> eig(0.5 * (m + m.transpose()));
  const Vec6 root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

// One entry of a re-keyed ambiguity block: either a combination of old
// entries or a fresh code-minus-carrier seed.
struct Entry {
  AmbiguityKey key;
  std::vector<std::pair<std::size_t, double>> terms;
  double seed = 0.0;
  double seed_variance = 0.0;
};

FilterState apply_entries(const FilterState& state, std::vector<Entry> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.key < b.key; });
  const auto n_old = static_cast<Eigen::Index>(state.size());
  const auto n_new = static_cast<Eigen::Index>(3 + entries.size());
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n_new, n_old);
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(n_new);
  Eigen::VectorXd added = Eigen::VectorXd::Zero(n_new);
  t.topLeftCorner<3, 3>().setIdentity();

  FilterState out;
  out.position = state.position;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(3 + i);
    out.keys.push_back(entries[i].key);
    if (entries[i].terms.empty()) {
      offset(row) = entries[i].seed;
      added(row) = entries[i].seed_variance;
    }
    for (const auto& [old, coef] : entries[i].terms) {
      t(row, static_cast<Eigen::Index>(3 + old)) = coef;
    }
  }
  Eigen::VectorXd x_old(n_old);
  x_old << Vec3::Zero(), state.ambiguities;
  out.ambiguities = (t * x_old + offset).tail(n_new - 3);
  out.covariance = symmetrized(t * state.covariance * t.transpose());
  out.covariance.diagonal() += added;
  return out;
}

// Keeps the listed compacted rows of one row type.
void keep_rows(std::vector<std::size_t>& rows, Eigen::VectorXd& values,
               Eigen::MatrixXd& cov, const std::vector<bool>& keep) {
  std::vector<std::size_t> new_rows;
  std::vector<Eigen::Index> idx;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (keep[k]) {
      new_rows.push_back(rows[k]);
      idx.push_back(static_cast<Eigen::Index>(k));
    }
  }
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::VectorXd v(n);
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    v(a) = values(idx[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < n; ++b) {
      c(a, b) = cov(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
    }
  }
  rows = std::move(new_rows);
  values = std::move(v);
  cov = std::move(c);
}

struct GateOutcome {
  DoubleDifferenceSet dd;
  std::size_t pruned = 0;
  std::vector<SatelliteId> bad_references;
  std::vector<GroupKey> bad_groups;
};

GateOutcome apply_gate(const FilterState& prior, const DoubleDifferenceSet& dd,
                       const EcefPosition& station, double gate,
                       const FilterConfig& config) {
  GateOutcome out{dd, 0, {}, {}};
  if (dd.empty()) return out;
  const auto m = linearize(prior.position, prior.ambiguities, prior.keys, dd, station);
  const Eigen::VectorXd v = m.innovation();
  const Eigen::MatrixXd hp = m.jacobian * prior.covariance;

  std::vector<std::vector<bool>> keep_phase(dd.groups.size());
  std::vector<std::vector<bool>> keep_code(dd.groups.size());
  for (std::size_t g = 0; g < dd.groups.size(); ++g) {
    keep_phase[g].assign(dd.groups[g].phase_rows.size(), true);
    keep_code[g].assign(dd.groups[g].code_rows.size(), true);
  }
  std::vector<std::size_t> phase_cursor(dd.groups.size(), 0);
  std::vector<std::size_t> code_cursor(dd.groups.size(), 0);
  for (Eigen::Index r = 0; r < v.size(); ++r) {
    const RowInfo& info = m.rows[static_cast<std::size_t>(r)];
    const bool phase = info.kind == RowKind::kPhase;
    const double s = hp.row(r).dot(m.jacobian.row(r)) + m.noise(r, r);
    const double row_gate =
        std::max(phase ? gate : gate * config.code_gate_multiplier,
                 config.gate_sigma_floor * std::sqrt(std::max(s, 0.0)));
    auto& cursor = phase ? phase_cursor[info.group_index] : code_cursor[info.group_index];
    auto& keep = phase ? keep_phase[info.group_index] : keep_code[info.group_index];
    if (!(std::abs(v(r)) <= row_gate)) {
      keep[cursor] = false;
      ++out.pruned;
    }
    ++cursor;
  }

  for (std::size_t g = 0; g < dd.groups.size(); ++g) {
    auto& grp = out.dd.groups[g];
    auto failed = [](const std::vector<bool>& k) {
      return static_cast<std::size_t>(std::count(k.begin(), k.end(), false));
    };
    const std::size_t fp = failed(keep_phase[g]);
    const std::size_t fc = failed(keep_code[g]);
    if ((fp >= 2 && 2 * fp > keep_phase[g].size()) || (fc >= 2 && 2 * fc > keep_code[g].size())) {
      out.bad_references.push_back({grp.group.constellation, grp.reference.sat_id});
      out.bad_groups.push_back(grp.group);
    }
    keep_rows(grp.phase_rows, grp.phase_m, grp.phase_cov, keep_phase[g]);
    keep_rows(grp.code_rows, grp.code_m, grp.code_cov, keep_code[g]);
  }
  return out;
}

std::map<GroupKey, int> satellites_in_phase_rows(const DoubleDifferenceSet& dd) {
  std::map<GroupKey, int> out;
  for (const auto& g : dd.groups) {
    if (!g.phase_rows.empty()) out[g.group] = static_cast<int>(g.phase_rows.size()) + 1;
  }
  return out;
}

bool same_satellite(const AmbiguityKey& k, Constellation c, int sat) {
  return k.group.constellation == c && k.sat == sat;
}

}  // namespace

const char* to_string(SolutionStatus status) {
  switch (status) {
    case SolutionStatus::kFixed: return "FIX";
    case SolutionStatus::kFloat: return "FLOAT";
    case SolutionStatus::kPropagated: return "PROP";
  }
  return "?";
}

int Solution::satellite_count() const {
  // Satellites shared across bands of one constellation count once; the
  // per-group counts cannot tell which, so take the largest per constellation.
  std::map<Constellation, int> per;
  for (const auto& [g, n] : satellites_used) {
    per[g.constellation] = std::max(per[g.constellation], n);
  }
  int total = 0;
  for (const auto& [c, n] : per) total += n;
  return total;
}

Mat12 joint_pose_covariance(const Mat6& first, const Mat6& second, double rho) {
  const Mat6 a = symmetric_sqrt(first);
  const Mat6 b = symmetric_sqrt(second);
  Mat12 out;
  out.topLeftCorner<6, 6>() = 0.5 * (first + first.transpose());
  out.bottomRightCorner<6, 6>() = 0.5 * (second + second.transpose());
  out.topRightCorner<6, 6>() = rho * a * b;
  out.bottomLeftCorner<6, 6>() = rho * b * a;
  return out;
}

VioIncrement vio_increment(const Pose& pose_i, const Pose& pose_j, const Mat12& joint) {
  const TranslationJacobians j = incremental_translation_jacobians(pose_i, pose_j);
  Eigen::Matrix<double, 3, 12> jj;
  jj << j.wrt_first, j.wrt_second;
  VioIncrement out;
  out.translation = pose_j.translation() - pose_i.translation();
  const Mat3 c = jj * joint * jj.transpose();
  out.covariance = 0.5 * (c + c.transpose());
  return out;
}

FilterState predict(const FilterState& state, const VioIncrement& increment,
                    const Mat3& r_eo) {
  FilterState out = state;
  out.position = state.position + r_eo * increment.translation;
  const Mat3 q = r_eo * increment.covariance * r_eo.transpose();
  out.covariance.topLeftCorner<3, 3>() += 0.5 * (q + q.transpose());
  return out;
}

FilterState predict_constant_velocity(const FilterState& state, double dt, double sigma_v) {
  FilterState out = state;
  const double s = sigma_v * dt;
  out.covariance.topLeftCorner<3, 3>().diagonal().array() += s * s;
  return out;
}

FilterState manage_ambiguities(const FilterState& state, const DoubleDifferenceSet& dd,
                               double new_ambiguity_sigma) {
  std::vector<Entry> entries;
  const double seed_var = new_ambiguity_sigma * new_ambiguity_sigma;

  for (const auto& g : dd.groups) {
    // Existing entries of this group, by satellite, under their old reference.
    std::map<int, std::size_t> old;
    int old_ref = -1;
    for (std::size_t i = 0; i < state.keys.size(); ++i) {
      if (state.keys[i].group == g.group) {
        old[state.keys[i].sat] = i;
        old_ref = state.keys[i].reference_sat;
      }
    }
    const int ref = g.reference.sat_id;
    const bool reset = g.reference.loss_of_lock ||
                       (old_ref >= 0 && old_ref != ref && !old.contains(ref));
    if (reset) old.clear();

    for (std::size_t k = 0; k < g.phase_rows.size(); ++k) {
      const DdSatellite& s = g.satellites[g.phase_rows[k]];
      Entry e{{g.group, ref, s.sat_id}, {}, 0.0, 0.0};
      if (!s.loss_of_lock && !old.empty()) {
        if (old_ref == ref) {
          if (auto it = old.find(s.sat_id); it != old.end()) e.terms = {{it->second, 1.0}};
        } else if (s.sat_id == old_ref) {
          e.terms = {{old.at(ref), -1.0}};  // d(1',1) = -d(1,1')
        } else if (auto it = old.find(s.sat_id); it != old.end()) {
          e.terms = {{it->second, 1.0}, {old.at(ref), -1.0}};  // d(1',s) = d(1,s) - d(1,1')
        }
      }
      if (e.terms.empty()) {
        // Code-minus-carrier seed; needs the satellite's code row.
        const auto code = std::find(g.code_rows.begin(), g.code_rows.end(), g.phase_rows[k]);
        if (code == g.code_rows.end()) continue;
        const auto ci = static_cast<Eigen::Index>(code - g.code_rows.begin());
        e.seed = (g.phase_m(static_cast<Eigen::Index>(k)) - g.code_m(ci)) / g.wavelength;
        e.seed_variance = seed_var;
      }
      entries.push_back(std::move(e));
    }
  }
  return apply_entries(state, std::move(entries));
}

double innovation_gate(double increment_norm, double multiplier, double floor) {
  return multiplier * std::max(increment_norm, floor);
}

PruneResult prune_by_innovation(const FilterState& prior, const DoubleDifferenceSet& dd,
                                const EpochObservation& user,
                                const EpochObservation& reference,
                                const EcefPosition& station, double gate,
                                const FilterConfig& config) {
  GateOutcome first = apply_gate(prior, dd, station, gate, config);
  if (first.bad_references.empty()) {
    return {prior, std::move(first.dd), first.pruned, {}};
  }
  const DoubleDifferenceSet reformed =
      form_double_differences(user, reference, config.noise, first.bad_references);
  FilterState remapped = manage_ambiguities(prior, reformed, config.new_ambiguity_sigma);
  GateOutcome second = apply_gate(remapped, reformed, station, gate, config);
  return {std::move(remapped), std::move(second.dd), second.pruned,
          std::move(first.bad_groups)};
}

UpdateResult measurement_update(const FilterState& prior, const DoubleDifferenceSet& dd,
                                const EcefPosition& station, const FilterConfig& config) {
  UpdateResult out{prior, false, 0.0, 0};
  if (dd.row_count() < std::max<std::size_t>(config.min_update_rows, 1)) return out;

  const auto m = linearize(prior.position, prior.ambiguities, prior.keys, dd, station);
  const Eigen::MatrixXd& h = m.jacobian;
  const Eigen::MatrixXd& p = prior.covariance;
  const Eigen::MatrixXd s = symmetrized(h * p * h.transpose() + m.noise);
  const Eigen::LDLT<Eigen::MatrixXd> s_ldlt(s);
  if (s_ldlt.info() != Eigen::Success) return out;
  const Eigen::MatrixXd k = s_ldlt.solve(h * p).transpose();
  const Eigen::VectorXd dx = k * m.innovation();

  FilterState post = prior;
  post.position = prior.position + Vec3(dx.head<3>());
  post.ambiguities = prior.ambiguities + dx.tail(dx.size() - 3);
  const auto n = static_cast<Eigen::Index>(prior.size());
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(n, n) - k * h;
  post.covariance = symmetrized(ikh * p * ikh.transpose() + k * m.noise * k.transpose());

  // Post-fit code residuals against the code noise.
  const auto fit = linearize(post.position, post.ambiguities, post.keys, dd, station);
  const Eigen::VectorXd r = fit.innovation();
  std::vector<Eigen::Index> code;
  for (std::size_t i = 0; i < fit.rows.size(); ++i) {
    if (fit.rows[i].kind == RowKind::kCode) code.push_back(static_cast<Eigen::Index>(i));
  }
  out.code_rows = code.size();
  if (!code.empty()) {
    const auto nc = static_cast<Eigen::Index>(code.size());
    const Eigen::Index first = code.front();  // code rows are contiguous
    const Eigen::VectorXd rc = r.segment(first, nc);
    const Eigen::MatrixXd rn = fit.noise.block(first, first, nc, nc);
    out.chi_square = rc.dot(rn.ldlt().solve(rc));
    const boost::math::chi_squared dist(static_cast<double>(nc));
    const double limit = boost::math::quantile(boost::math::complement(dist, config.float_significance));
    if (!(out.chi_square <= limit)) {
      out.state = std::move(post);
      return out;
    }
  }
  out.valid = post.covariance.allFinite() && dx.allFinite();
  out.state = std::move(post);
  return out;
}

FixResult resolve_and_validate(const FilterState& float_state, const DoubleDifferenceSet& dd,
                               const FilterConfig& config) {
  FixResult out;
  out.position = float_state.position;
  out.covariance = float_state.position_covariance();

  std::vector<std::size_t> cols;
  for (const auto& g : dd.groups) {
    for (const std::size_t row : g.phase_rows) {
      const auto c = find_ambiguity(float_state.keys, g.group, g.reference.sat_id,
                                    g.satellites[row].sat_id);
      if (c) cols.push_back(*c);
    }
  }
  std::sort(cols.begin(), cols.end());

  for (int round = 0; round <= config.reprune_rounds; ++round) {
    if (cols.size() < std::max<std::size_t>(config.min_fix_ambiguities, 1)) break;
    ++out.rounds;
    const auto n = static_cast<Eigen::Index>(cols.size());
    Eigen::VectorXd d_hat(n);
    Eigen::MatrixXd w(n, n);
    Eigen::Matrix<double, 3, Eigen::Dynamic> p_pd(3, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto ca = static_cast<Eigen::Index>(cols[static_cast<std::size_t>(a)]);
      d_hat(a) = float_state.ambiguities(ca);
      p_pd.col(a) = float_state.covariance.block<3, 1>(0, 3 + ca);
      for (Eigen::Index b = 0; b < n; ++b) {
        w(a, b) = float_state.covariance(3 + ca, 3 + cols[static_cast<std::size_t>(b)]);
      }
    }
    w = symmetrized(w);

    std::optional<IlsSolution> sol;
    try {
      sol = search({d_hat, w});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSearchOverflow && e.code() != ErrorCode::kDecomposition) throw;
    }
    if (sol) {
      out.ratio = sol->ratio();
      if (ratio_test(*sol, config.ratio_threshold)) {
        const Eigen::LDLT<Eigen::MatrixXd> w_ldlt(w);
        out.fixed = true;
        out.position = float_state.position + Vec3(p_pd * w_ldlt.solve(sol->best() - d_hat));
        const Mat3 c = float_state.position_covariance() - p_pd * w_ldlt.solve(p_pd.transpose());
        out.covariance = 0.5 * (c + c.transpose());
        out.integers = sol->best();
        for (const std::size_t col : cols) out.keys.push_back(float_state.keys[col]);
        return out;
      }
    }
    if (round == 0) out.first_round_failed = true;
    if (!sol || round == config.reprune_rounds) break;

    // w-test on the best candidate: largest |(W^-1 e)_i| / sqrt((W^-1)_ii).
    const Eigen::MatrixXd w_inv = w.ldlt().solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::VectorXd we = w_inv * (sol->best() - d_hat);
    Eigen::Index worst = 0;
    double worst_stat = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double stat = std::abs(we(i)) / std::sqrt(std::max(w_inv(i, i), 1e-300));
      if (stat > worst_stat) {
        worst_stat = stat;
        worst = i;
      }
    }
    const AmbiguityKey bad = float_state.keys[cols[static_cast<std::size_t>(worst)]];
    std::erase_if(cols, [&](std::size_t c) {
      return same_satellite(float_state.keys[c], bad.group.constellation, bad.sat);
    });
  }
  return out;
}

EpochResult run_epoch(const FilterState& state, const EpochObservation& user,
                      const EpochObservation* reference, const EcefPosition& station,
                      const Prediction& prediction, const FilterConfig& config) {
  FilterState prior = state;
  double gate = config.baseline_gate;
  switch (prediction.kind) {
    case Prediction::Kind::kVio:
      prior = predict(state, prediction.increment, prediction.r_eo);
      gate = innovation_gate(prediction.increment.translation.norm(), config.gate_multiplier,
                             config.gate_floor);
      break;
    case Prediction::Kind::kConstantVelocity:
      prior = predict_constant_velocity(state, prediction.dt, config.cv_sigma);
      break;
    case Prediction::Kind::kNone:
      break;
  }

  Solution sol;
  sol.time = user.time;
  sol.constant_velocity_fallback = prediction.fallback;

  auto propagated = [&](FilterState s) {
    sol.status = SolutionStatus::kPropagated;
    sol.position = s.position;
    sol.covariance = s.position_covariance();
    return EpochResult{std::move(s), std::move(sol)};
  };

  if (reference == nullptr) return propagated(std::move(prior));
  DoubleDifferenceSet dd = form_double_differences(user, *reference, config.noise);
  prior = manage_ambiguities(prior, dd, config.new_ambiguity_sigma);
  if (dd.empty()) return propagated(std::move(prior));

  PruneResult pruned =
      prune_by_innovation(prior, dd, user, *reference, station, gate, config);
  sol.pruned_rows = pruned.pruned_rows;
  prior = std::move(pruned.state);

  UpdateResult upd = measurement_update(prior, pruned.dd, station, config);
  if (!upd.valid) return propagated(std::move(prior));

  sol.satellites_used = satellites_in_phase_rows(pruned.dd);
  FixResult fix = resolve_and_validate(upd.state, pruned.dd, config);
  sol.ratio = fix.ratio;
  sol.first_round_failed = fix.first_round_failed;
  sol.fix_rounds = fix.rounds;
  FilterState post = std::move(upd.state);
  if (fix.fixed) {
    sol.status = SolutionStatus::kFixed;
    sol.position = fix.position;
    sol.covariance = fix.covariance;
    sol.fixed_keys = fix.keys;
    sol.fixed_integers = fix.integers;
    // The state keeps the float mean. Moving only the position to the fixed
    // value would contradict the float ambiguities it is correlated with.
  } else {
    sol.status = SolutionStatus::kFloat;
    sol.position = post.position;
    sol.covariance = post.position_covariance();
  }
  return {std::move(post), std::move(sol)};
}

FusionFilter::FusionFilter(FilterConfig config, EcefPosition station,
                           std::vector<TimedPose> vio)
    : config_(std::move(config)), station_(station), vio_(std::move(vio)) {
  for (std::size_t i = 1; i < vio_.size(); ++i) {
    if (!(vio_[i].time > vio_[i - 1].time)) {
      throw Error(ErrorCode::kOrdering, "odometry timestamps are not strictly increasing");
    }
  }
  if (!config_.baseline_cv && config_.prealigned) alignment_ = config_.prealigned;
}

std::optional<Pose> FusionFilter::antenna_pose(double t) const {
  if (vio_.empty() || !alignment_) return std::nullopt;
  try {
    const Pose p = interpolate_pose(vio_, t, config_.vio_max_gap);
    // Right-composing with a pure translation leaves the left-perturbation
    // covariance unchanged.
    return Pose(p.rotation(), p.transform(alignment_->lever_arm), p.covariance());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInterpolationGap) throw;
    return std::nullopt;
  }
}

void FusionFilter::record_sample(const Solution& solution) {
  if (config_.baseline_cv || vio_.empty()) return;
  if (solution.status == SolutionStatus::kPropagated) return;
  try {
    const Pose p = interpolate_pose(vio_, solution.time, config_.vio_max_gap);
    samples_.push_back({{solution.time, solution.position, p},
                        solution.status == SolutionStatus::kFixed});
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInterpolationGap) throw;
  }
  while (!samples_.empty() &&
         samples_.front().matched.time < solution.time - config_.alignment_window) {
    samples_.pop_front();
  }
}

std::vector<MatchedSample> FusionFilter::window_samples() const {
  std::vector<MatchedSample> fixed;
  std::vector<MatchedSample> all;
  for (const auto& s : samples_) {
    all.push_back(s.matched);
    if (s.fixed) fixed.push_back(s.matched);
  }
  return fixed.size() >= config_.align.min_samples ? fixed : all;
}

void FusionFilter::update_alignment(double t) {
  if (config_.baseline_cv || vio_.empty()) return;
  const auto window = window_samples();
  if (!alignment_) {
    if (window.size() >= config_.align.min_samples) {
      try {
        AlignmentResult a = align_two_pass(window, config_.align);
        if (realignment_gate(a.rmse, a.fer, config_.realign)) {
          alignment_ = std::move(a);
          return;
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kExcitation && e.code() != ErrorCode::kNoConvergence &&
            e.code() != ErrorCode::kSingularity) {
          throw;
        }
      }
    }
    if (first_time_ && t - *first_time_ > config_.initialization_horizon) {
      throw Error(ErrorCode::kInitialization,
                  "odometry could not be aligned within " +
                      std::to_string(config_.initialization_horizon) + " s");
    }
    return;
  }
  const RealignDecision d = realign_policy(*alignment_, window, config_.realign);
  if (d.realign) {
    alignment_ = d.alignment;
    ++realignments_;
  }
}

std::optional<Solution> FusionFilter::process(const EpochObservation& user,
                                              const EpochObservation* reference) {
  validate_epoch(user);
  if (state_ && !(user.time > last_time_)) {
    throw Error(ErrorCode::kOrdering, "user epochs are not strictly increasing in time");
  }
  if (!first_time_) first_time_ = user.time;

  Prediction prediction;
  if (!state_) {
    if (reference == nullptr) return std::nullopt;
    const DoubleDifferenceSet dd = form_double_differences(user, *reference, config_.noise);
    if (dd.row_count() < 2 * config_.min_update_rows) return std::nullopt;
    const auto fix = solve_code_position(dd, station_, station_);
    if (!fix) return std::nullopt;
    FilterState s;
    s.position = fix->position;
    s.ambiguities.resize(0);
    s.covariance = Eigen::MatrixXd::Identity(3, 3) *
                   (config_.initial_position_sigma * config_.initial_position_sigma);
    state_ = std::move(s);
  } else {
    const double dt = user.time - last_time_;
    prediction.kind = Prediction::Kind::kConstantVelocity;
    prediction.dt = dt;
    if (!config_.baseline_cv && alignment_) {
      const auto pi = antenna_pose(last_time_);
      const auto pj = antenna_pose(user.time);
      if (pi && pj) {
        const Mat6 ci = pi->covariance().value_or(Mat6::Zero());
        const Mat6 cj = pj->covariance().value_or(Mat6::Zero());
        prediction.kind = Prediction::Kind::kVio;
        prediction.increment =
            vio_increment(*pi, *pj, joint_pose_covariance(ci, cj, config_.vio_cross_correlation));
        prediction.increment.covariance.diagonal().array() +=
            config_.vio_sigma_floor * config_.vio_sigma_floor;
        prediction.r_eo = alignment_->t_eo.rotation();
      } else {
        prediction.fallback = true;
      }
    }
  }

  EpochResult r = run_epoch(*state_, user, reference, station_, prediction, config_);
  state_ = std::move(r.state);
  last_time_ = user.time;
  record_sample(r.solution);
  update_alignment(user.time);
  return std::move(r.solution);
}

std::vector<Solution> run_fusion(const ObservationStream& user,
                                 const ObservationStream& reference,
                                 std::span<const TimedPose> vio, const FilterConfig& config) {
  if (!reference.station_position) {
    throw Error(ErrorCode::kInvalidInput, "reference stream carries no station position");
  }
  FusionFilter filter(config, *reference.station_position,
                      std::vector<TimedPose>(vio.begin(), vio.end()));
  std::vector<Solution> out;
  std::size_t j = 0;
  for (const auto& u : user.epochs) {
    while (j < reference.epochs.size() &&
           reference.epochs[j].time < u.time - kEpochMatchTolerance) {
      ++j;
    }
    const EpochObservation* ref = nullptr;
    if (j < reference.epochs.size() &&
        std::abs(reference.epochs[j].time - u.time) <= kEpochMatchTolerance) {
      ref = &reference.epochs[j];
    }
    if (auto s = filter.process(u, ref)) out.push_back(std::move(*s));
  }
  return out;
}

}  // namespace rtkvio
