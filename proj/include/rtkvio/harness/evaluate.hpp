#pragma once

// Absolute position error statistics and fixed solution rate of a solution
// stream against time-matched truth.

#include <iosfwd>
#include <vector>

#include "rtkvio/harness/formats.hpp"

namespace rtkvio::harness {

struct SolutionStats {
  double rmse = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // population
  double max = 0.0;
  double fsr = 0.0;  // percent
  std::size_t epochs = 0;     // matched epochs
  std::size_t fixed = 0;
  std::size_t attempted = 0;  // FSR denominator
};

struct EvaluateOptions {
  double match_tolerance = 0.02;  // s
  // FSR counts Propagated epochs in its denominator when set.
  bool count_propagated = false;
  double start_time = -1e300;  // epochs before this are ignored
};

// One matched epoch.
struct ErrorSample {
  double time = 0.0;
  Vec3 error = Vec3::Zero();  // estimate - truth, ECEF
  double ape = 0.0;
  std::optional<SolutionStatus> status;
};

std::vector<ErrorSample> match_errors(const std::vector<PositionRecord>& estimated,
                                      const std::vector<PositionRecord>& truth,
                                      const EvaluateOptions& options = {});

// Throws kEmptyEvaluation when nothing matches. Epochs without a status count
// as Float for the rate.
SolutionStats evaluate(const std::vector<PositionRecord>& estimated,
                       const std::vector<PositionRecord>& truth,
                       const EvaluateOptions& options = {});

std::vector<PositionRecord> to_records(const std::vector<Solution>& solutions);

// CSV of the per-epoch error, with the error also resolved into local
// east/north/up at the truth position.
void write_plot_data(std::ostream& out, const std::vector<ErrorSample>& samples,
                     const std::vector<PositionRecord>& truth);

void print_stats(std::ostream& out, const SolutionStats& stats);

}  // namespace rtkvio::harness
