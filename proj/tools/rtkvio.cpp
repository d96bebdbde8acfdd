// Command-line front end: simulate, calibrate, fuse, evaluate, defaults.
//
// Exit codes: 0 success, 2 usage error, 10 + ErrorCode for categorized
// failures (see README), 3 for anything unexpected.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rtkvio/error.hpp"
#include "rtkvio/harness/config.hpp"
#include "rtkvio/harness/evaluate.hpp"
#include "rtkvio/harness/formats.hpp"

namespace fs = std::filesystem;
using namespace rtkvio;
using namespace rtkvio::harness;

namespace {

Config config_from(const std::string& path) {
  return path.empty() ? Config{} : load_config(path);
}

template <typename Writer, typename Value>
void save(const fs::path& path, Writer write, const Value& value) {
  std::ostringstream ss;
  write(ss, value);
  write_file(path, ss.str());
}

int simulate(const std::string& scenario_path, const std::string& out_dir,
             std::optional<std::size_t> seed) {
  Config cfg = load_config(scenario_path);
  if (seed) cfg.scenario.seed = *seed;
  const SimOutput sim = generate(cfg.scenario);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + out_dir + ": " + ec.message());
  const fs::path dir(out_dir);

  save(dir / "user.obs", write_observations, sim.user);
  save(dir / "reference.obs", write_observations, sim.reference);
  save(dir / "vio.txt", write_vio, sim.vio);
  std::vector<PositionRecord> truth;
  for (const auto& e : sim.truth.epochs) truth.push_back({e.time, e.antenna, std::nullopt});
  save(dir / "truth.txt", write_positions, truth);
  AlignmentResult a;
  a.t_eo = sim.truth.t_eo;
  a.lever_arm = sim.truth.lever_arm;
  save(dir / "truth_alignment.txt", write_alignment, a);

  std::cout << "wrote " << sim.user.epochs.size() << " epochs, " << sim.vio.size()
            << " odometry samples to " << out_dir << '\n';
  return 0;
}

int calibrate(const std::string& gnss_path, const std::string& vio_path,
              const std::string& out_path, const std::string& config_path) {
  const Config cfg = config_from(config_path);
  const auto gnss = read_positions(gnss_path);
  const auto vio = to_timed_poses(read_vio(vio_path));

  std::vector<MatchedSample> samples;
  for (const auto& g : gnss) {
    if (g.status == SolutionStatus::kPropagated) continue;
    try {
      samples.push_back({g.time, g.position, interpolate_pose(vio, g.time, cfg.filter.vio_max_gap)});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInterpolationGap) throw;
    }
  }
  const AlignmentResult a = align_two_pass(samples, cfg.filter.align);
  save(out_path, write_alignment, a);
  std::cout << "samples " << samples.size() << "\nrmse " << format_double(a.rmse) << "\nfer "
            << format_double(a.fer) << "\nlever_arm " << format_double(a.lever_arm.x()) << ' '
            << format_double(a.lever_arm.y()) << ' ' << format_double(a.lever_arm.z())
            << (a.lever_arm_estimated ? "" : " (held at prior)") << '\n';
  return 0;
}

int fuse(const std::string& user_path, const std::string& ref_path, const std::string& vio_path,
         bool baseline_cv, const std::string& alignment_path, const std::string& config_path,
         const std::string& out_path) {
  Config cfg = config_from(config_path);
  if (baseline_cv) cfg.filter.baseline_cv = true;
  if (!alignment_path.empty()) cfg.filter.prealigned = read_alignment(alignment_path);
  if (vio_path.empty() && !cfg.filter.baseline_cv) {
    throw Error(ErrorCode::kInvalidInput, "--vio is required unless --baseline-cv is given");
  }
  const auto user = read_observations(user_path);
  const auto ref = read_observations(ref_path);
  const std::vector<TimedPose> vio =
      vio_path.empty() ? std::vector<TimedPose>{} : to_timed_poses(read_vio(vio_path));
  const auto solutions = run_fusion(user, ref, vio, cfg.filter);
  save(out_path, write_solutions, solutions);

  std::size_t fixed = 0;
  std::size_t floating = 0;
  for (const auto& s : solutions) {
    fixed += s.status == SolutionStatus::kFixed;
    floating += s.status == SolutionStatus::kFloat;
  }
  std::cout << "epochs " << solutions.size() << " fixed " << fixed << " float " << floating
            << " propagated " << solutions.size() - fixed - floating << '\n';
  return 0;
}

int evaluate_cmd(const std::string& est_path, const std::string& truth_path,
                 const std::string& plot_path, const std::string& config_path,
                 bool count_propagated, std::optional<double> start) {
  Config cfg = config_from(config_path);
  if (count_propagated) cfg.evaluate.count_propagated = true;
  if (start) cfg.evaluate.start_time = *start;
  const auto est = read_positions(est_path);
  const auto truth = read_positions(truth_path);
  const SolutionStats stats = evaluate(est, truth, cfg.evaluate);
  print_stats(std::cout, stats);
  if (!plot_path.empty()) {
    std::ostringstream ss;
    write_plot_data(ss, match_errors(est, truth, cfg.evaluate), truth);
    write_file(plot_path, ss.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GNSS RTK / visual-inertial odometry fusion toolkit"};
  app.require_subcommand(1);

  std::string scenario, out, gnss, vio, user, ref, alignment, config, est, truth, plot;
  bool baseline_cv = false;
  bool count_propagated = false;
  std::optional<std::size_t> seed;
  std::optional<double> start;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic scenario");
  sim->add_option("scenario", scenario, "scenario TOML file")->required()->check(CLI::ExistingFile);
  sim->add_option("-o,--out", out, "output directory")->required();
  sim->add_option("--seed", seed, "override the scenario seed");

  auto* cal = app.add_subcommand("calibrate", "align odometry to GNSS positions");
  cal->add_option("--gnss", gnss, "GNSS position or solution file")->required();
  cal->add_option("--vio", vio, "odometry file")->required();
  cal->add_option("-o,--out", out, "alignment file to write")->required();
  cal->add_option("--config", config, "TOML config ([filter] table)");

  auto* fu = app.add_subcommand("fuse", "run the fusion filter");
  fu->add_option("--user", user, "user observation file")->required();
  fu->add_option("--ref", ref, "reference observation file")->required();
  fu->add_option("--vio", vio, "odometry file");
  fu->add_flag("--baseline-cv", baseline_cv, "constant-velocity baseline, no odometry");
  fu->add_option("--alignment", alignment, "pre-computed alignment; skips initialization");
  fu->add_option("--config", config, "TOML config ([filter] table)");
  fu->add_option("-o,--out", out, "solution file to write")->required();

  auto* ev = app.add_subcommand("evaluate", "position error statistics and fix rate");
  ev->add_option("--est", est, "solution file")->required();
  ev->add_option("--truth", truth, "truth position file")->required();
  ev->add_option("--plot-data", plot, "per-epoch error CSV to write");
  ev->add_flag("--count-propagated", count_propagated,
               "count propagated epochs in the fix-rate denominator");
  ev->add_option("--start", start, "ignore epochs before this time");
  ev->add_option("--config", config, "TOML config ([evaluate] table)");

  auto* def = app.add_subcommand("defaults", "print a config file with every default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sim) return simulate(scenario, out, seed);
    if (*cal) return calibrate(gnss, vio, out, config);
    if (*fu) return fuse(user, ref, vio, baseline_cv, alignment, config, out);
    if (*ev) return evaluate_cmd(est, truth, plot, config, count_propagated, start);
    if (*def) {
      write_config(std::cout, Config{});
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 10 + static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
