#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "meanfield/model_coefficients.hpp"
#include "meanfield/stats.hpp"

namespace meanfield {

// Invalid or unknown configuration; mapped to exit code 1 by the CLI.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Log-log power-law fit of errors against sizes.
struct RateFit {
  Eigen::VectorXd log_sizes, log_errors;
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r2 = 0.0;
};

// Ordinary least squares on (log size, log error); >= 3 points, errors > 0.
RateFit fit_rate(const std::vector<double>& sizes,
                 const std::vector<double>& errors);

// Particles-per-column count for the built-in scaling schedules:
//   "clt"      M = ceil(N^(alpha/d))^2 / 4,
//   "critical" sqrt(M) = N^(alpha/d),
//   "broken"   sqrt(M) = 3 N^(alpha/d).
int schedule_M(const std::string& schedule, int N, double alpha, int d);

struct ExperimentConfig {
  std::string experiment;
  uint64_t seed = 0;
  nlohmann::json tree;  // full validated configuration

  // Hash of the canonical serialized configuration (with the effective
  // seed), stamped into every emitted table.
  uint64_t config_hash() const;

  static ExperimentConfig load_file(const std::string& path);
  static ExperimentConfig parse(const nlohmann::json& j);
};

// Dispatches on cfg.experiment, writes CSV/SVG artifacts and summary.json
// into out_dir. Returns 0 on success, 3 when an acceptance rule failed.
// Throws ConfigError for configuration problems and std::runtime_error for
// numerical failures.
int run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                   int workers);

// Model construction from the "model" configuration subtree.
CoefficientModel model_from_json(const nlohmann::json& j);

// --- artifact helpers (shared with the verification binaries) ---

uint64_t fnv1a_hash(const std::string& s);

// Shortest round-trip decimal representation (deterministic across runs).
std::string format_double(double v);

// Writes body prefixed with '#'-comment lines carrying the configuration
// hash and the content hash of the body.
void write_table(const std::string& path, uint64_t config_hash,
                 const std::string& body);

void write_text_file(const std::string& path, const std::string& contents);

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};

// Minimal native SVG line plot (optionally log10 axes).
std::string svg_line_plot(const std::string& title,
                          const std::vector<PlotSeries>& series,
                          bool log_x = false, bool log_y = false);

}  // namespace meanfield
