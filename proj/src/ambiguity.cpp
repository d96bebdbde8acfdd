#include "rtkvio/ambiguity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "rtkvio/error.hpp"

namespace rtkvio {

namespace {

constexpr double kPivotFloor = 1e-12;

double round_half_up(double x) { return std::floor(x + 0.5); }
double sign_of(double x) { return x <= 0.0 ? -1.0 : 1.0; }

// Q = L^T diag(D) L, factored from the last row upwards.
bool ltdl(const Eigen::MatrixXd& q, Eigen::MatrixXd& l, Eigen::VectorXd& d,
          double pivot_floor) {
  const Eigen::Index n = q.rows();
  Eigen::MatrixXd a = q;
  l = Eigen::MatrixXd::Zero(n, n);
  d = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    d(i) = a(i, i);
    if (!(d(i) > pivot_floor) || !std::isfinite(d(i))) return false;
    const double s = std::sqrt(d(i));
    for (Eigen::Index j = 0; j <= i; ++j) l(i, j) = a(i, j) / s;
    for (Eigen::Index j = 0; j < i; ++j) {
      for (Eigen::Index k = 0; k <= j; ++k) a(j, k) -= l(i, k) * l(i, j);
    }
    for (Eigen::Index j = 0; j <= i; ++j) l(i, j) /= l(i, i);
  }
  return true;
}

// Integer Gauss transformation zeroing L(i, j) up to rounding. `zt` holds Z^T.
void integer_gauss(Eigen::MatrixXd& l, Eigen::MatrixXd& zt, Eigen::Index i,
                   Eigen::Index j) {
  const double mu = round_half_up(l(i, j));
  if (mu == 0.0) return;
  const Eigen::Index n = l.rows();
  for (Eigen::Index k = i; k < n; ++k) l(k, j) -= mu * l(k, i);
  for (Eigen::Index k = 0; k < n; ++k) zt(k, j) -= mu * zt(k, i);
}

void permute(Eigen::MatrixXd& l, Eigen::VectorXd& d, Eigen::Index j, double del,
             Eigen::MatrixXd& zt) {
  const Eigen::Index n = l.rows();
  const double eta = d(j) / del;
  const double lam = d(j + 1) * l(j + 1, j) / del;
  d(j) = eta * d(j + 1);
  d(j + 1) = del;
  for (Eigen::Index k = 0; k < j; ++k) {
    const double a0 = l(j, k);
    const double a1 = l(j + 1, k);
    l(j, k) = -l(j + 1, j) * a0 + a1;
    l(j + 1, k) = eta * a0 + lam * a1;
  }
  l(j + 1, j) = lam;
  for (Eigen::Index k = j + 2; k < n; ++k) std::swap(l(k, j), l(k, j + 1));
  for (Eigen::Index k = 0; k < n; ++k) std::swap(zt(k, j), zt(k, j + 1));
}

void reduce(Eigen::MatrixXd& l, Eigen::VectorXd& d, Eigen::MatrixXd& zt) {
  const Eigen::Index n = l.rows();
  Eigen::Index j = n - 2;
  Eigen::Index k = n - 2;
  while (j >= 0) {
    if (j <= k) {
      for (Eigen::Index i = j + 1; i < n; ++i) integer_gauss(l, zt, i, j);
    }
    const double del = d(j) + l(j + 1, j) * l(j + 1, j) * d(j + 1);
    if (del + 1e-6 < d(j + 1)) {
      permute(l, d, j, del, zt);
      k = j;
      j = n - 2;
    } else {
      --j;
    }
  }
}

void check_problem(const IlsProblem& p) {
  const auto n = p.float_ambiguities.size();
  if (n < 1 || p.covariance.rows() != n || p.covariance.cols() != n) {
    throw Error(ErrorCode::kInvalidInput, "ILS problem has inconsistent dimensions");
  }
  if (!p.float_ambiguities.allFinite() || !p.covariance.allFinite()) {
    throw Error(ErrorCode::kInvalidInput, "ILS problem is not finite");
  }
  const double scale = std::max(1.0, p.covariance.cwiseAbs().maxCoeff());
  if ((p.covariance - p.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(ErrorCode::kInvalidInput, "ILS covariance is not symmetric");
  }
}

struct Candidate {
  Eigen::VectorXd z;
  double dist;
};

// Depth-first enumeration in the decorrelated space, keeping the m best.
std::vector<Candidate> enumerate(const Eigen::MatrixXd& l, const Eigen::VectorXd& d,
                                 const Eigen::VectorXd& zs, std::size_t m,
                                 std::size_t max_nodes) {
  const Eigen::Index n = l.rows();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n + 1, n);
  Eigen::VectorXd dist = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd zb(n), z(n), step(n);
  std::vector<Candidate> found;
  double maxdist = std::numeric_limits<double>::infinity();

  Eigen::Index k = n - 1;
  zb(k) = zs(k);
  z(k) = round_half_up(zb(k));
  double y = zb(k) - z(k);
  step(k) = sign_of(y);

  for (std::size_t nodes = 0;; ++nodes) {
    if (nodes >= max_nodes) {
      throw Error(ErrorCode::kSearchOverflow, "integer search exceeded its node budget");
    }
    const double newdist = dist(k) + y * y / d(k);
    if (newdist < maxdist) {
      if (k != 0) {
        --k;
        dist(k) = newdist;
        for (Eigen::Index i = 0; i <= k; ++i) {
          s(k, i) = s(k + 1, i) + (z(k + 1) - zb(k + 1)) * l(k + 1, i);
        }
        zb(k) = zs(k) + s(k, k);
        z(k) = round_half_up(zb(k));
        y = zb(k) - z(k);
        step(k) = sign_of(y);
      } else {
        if (found.size() < m) {
          found.push_back({z, newdist});
        } else {
          auto worst = std::max_element(found.begin(), found.end(),
                                        [](const auto& a, const auto& b) { return a.dist < b.dist; });
          *worst = {z, newdist};
        }
        if (found.size() == m) {
          maxdist = std::max_element(found.begin(), found.end(),
                                     [](const auto& a, const auto& b) { return a.dist < b.dist; })
                        ->dist;
        }
        z(0) += step(0);
        y = zb(0) - z(0);
        step(0) = -step(0) - sign_of(step(0));
      }
    } else {
      if (k == n - 1) break;
      ++k;
      z(k) += step(k);
      y = zb(k) - z(k);
      step(k) = -step(k) - sign_of(step(k));
    }
  }
  return found;
}

}  // namespace

double IlsSolution::ratio() const {
  const double q1 = best_residual();
  const double q2 = second_residual();
  if (q1 > 0.0) return q2 / q1;
  return q2 > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

Decorrelation decorrelate(const IlsProblem& problem) {
  check_problem(problem);
  const Eigen::Index n = problem.float_ambiguities.size();
  const Eigen::MatrixXd w = 0.5 * (problem.covariance + problem.covariance.transpose());

  Decorrelation out;
  if (!ltdl(w, out.lower, out.diagonal, kPivotFloor)) {
    Eigen::MatrixXd loaded = w;
    loaded.diagonal().array() += kPivotFloor * w.trace() / static_cast<double>(n);
    if (!ltdl(loaded, out.lower, out.diagonal, 0.0)) {
      throw Error(ErrorCode::kDecomposition, "ambiguity covariance is not positive definite");
    }
  }
  Eigen::MatrixXd zt = Eigen::MatrixXd::Identity(n, n);
  reduce(out.lower, out.diagonal, zt);
  out.z = zt.transpose();
  out.transformed_float = out.z * problem.float_ambiguities;
  out.transformed_covariance = out.z * w * out.z.transpose();
  return out;
}

IlsSolution search(const IlsProblem& problem, const SearchOptions& options) {
  if (options.num_candidates < 2) {
    throw Error(ErrorCode::kInvalidInput, "integer search needs at least two candidates");
  }
  const Decorrelation dec = decorrelate(problem);
  const auto found = enumerate(dec.lower, dec.diagonal, dec.transformed_float,
                               options.num_candidates, options.max_nodes);

  // Back to the original space: a = Z^-1 z, exact integers up to rounding.
  const Eigen::FullPivLU<Eigen::MatrixXd> z_lu(dec.z);
  IlsSolution out;
  std::vector<std::pair<double, Eigen::VectorXd>> ranked;
  for (const auto& c : found) {
    Eigen::VectorXd a = z_lu.solve(c.z).unaryExpr([](double v) { return std::round(v); });
    ranked.emplace_back(ils_residual(problem, a), std::move(a));
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& x, const auto& y) { return x.first < y.first; });
  for (auto& [q, a] : ranked) {
    out.residuals.push_back(q);
    out.candidates.push_back(std::move(a));
  }
  if (out.candidates.size() < 2) {
    throw Error(ErrorCode::kSearchOverflow, "integer search found fewer than two candidates");
  }
  return out;
}

double ils_residual(const IlsProblem& problem, const Eigen::VectorXd& d) {
  const Eigen::VectorXd e = d - problem.float_ambiguities;
  const Eigen::LDLT<Eigen::MatrixXd> w(problem.covariance);
  return e.dot(w.solve(e));
}

bool ratio_test(const IlsSolution& solution, double threshold) {
  const double q1 = solution.best_residual();
  const double q2 = solution.second_residual();
  if (q1 <= 0.0) return q2 > 0.0;
  return q2 / q1 >= threshold;
}

}  // namespace rtkvio
