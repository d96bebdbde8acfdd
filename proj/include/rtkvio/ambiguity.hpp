#pragma once

// Integer least squares over double-differenced ambiguities:
//   D = argmin_{D in Z^N} (D - D_hat)^T W^-1 (D - D_hat)
// solved by integer decorrelation followed by a depth-first search that
// shrinks the ellipsoid as better candidates are found.

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace rtkvio {

struct IlsProblem {
  Eigen::VectorXd float_ambiguities;  // D_hat, cycles
  Eigen::MatrixXd covariance;         // W, symmetric positive definite
};

// Integer vectors are stored as doubles holding exact integers.
struct IlsSolution {
  std::vector<Eigen::VectorXd> candidates;  // ascending residual
  std::vector<double> residuals;

  const Eigen::VectorXd& best() const { return candidates.at(0); }
  const Eigen::VectorXd& second() const { return candidates.at(1); }
  double best_residual() const { return residuals.at(0); }
  double second_residual() const { return residuals.at(1); }
  // q2 / q1; +inf when q1 == 0 < q2, 0 when both are zero.
  double ratio() const;
};

// z = Z * a. Z is unimodular and integer-valued; the transformed covariance
// Z W Z^T = L^T diag(D) L with L unit lower triangular.
struct Decorrelation {
  Eigen::MatrixXd z;
  Eigen::VectorXd transformed_float;
  Eigen::MatrixXd transformed_covariance;
  Eigen::MatrixXd lower;
  Eigen::VectorXd diagonal;
};

// Throws kDecomposition when the covariance is not symmetric positive
// definite (after one diagonal-loading retry).
Decorrelation decorrelate(const IlsProblem& problem);

struct SearchOptions {
  std::size_t num_candidates = 2;
  std::size_t max_nodes = 1'000'000;
};

// Global best `num_candidates` integer vectors. Throws kSearchOverflow when
// more than `max_nodes` tree nodes are visited.
IlsSolution search(const IlsProblem& problem, const SearchOptions& options = {});

// Quadratic form (d - D_hat)^T W^-1 (d - D_hat).
double ils_residual(const IlsProblem& problem, const Eigen::VectorXd& d);

// Passes iff q2/q1 >= threshold; q1 = 0 < q2 passes, q1 = q2 = 0 fails.
bool ratio_test(const IlsSolution& solution, double threshold = 3.0);

}  // namespace rtkvio
