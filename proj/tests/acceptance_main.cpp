// Acceptance gate: runs the ten release criteria and prints one PASS/FAIL
// line per criterion. Exits nonzero if any criterion fails.
//
// usage: acceptance <configs_dir> <out_dir>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "meanfield/counter_rng.hpp"
#include "meanfield/experiments.hpp"
#include "meanfield/fokker_planck.hpp"
#include "meanfield/noise_field.hpp"
#include "meanfield/particle_dynamics.hpp"
#include "meanfield/test_space.hpp"
#include "meanfield/transport.hpp"

using namespace meanfield;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass,
            const std::string& detail) {
  std::printf("[%2d/10] %-24s %s  (%s)\n", index, name.c_str(),
              pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

WeightedPointCloud random_small_cloud(const CounterKey& key, int n,
                                      uint64_t salt) {
  CounterKey k = key.with(salt);
  WeightedPointCloud c;
  c.x.resize(n, 1);
  c.u.resize(n, 1);
  c.w = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (int i = 0; i < n; ++i) {
    c.x(i, 0) = counter_uniform(k, 2 * i);
    c.u(i, 0) = 3.0 * counter_uniform(k, 2 * i + 1);
  }
  return c;
}

// 1. Generated noise field matches dt * R^eps.
void criterion_noise() {
  const double eps = 0.1, dt = 1e-3;
  const int n_loc = 64, n_steps = 10000;
  Eigen::MatrixXd loc(n_loc, 1);
  for (int i = 0; i < n_loc; ++i) loc(i, 0) = i * 0.003;
  NoiseFieldSampler s(eps, loc, dt, 20260825);

  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n_loc, 1);
  Eigen::VectorXd cov = Eigen::VectorXd::Zero(n_loc);
  for (int step = 0; step < n_steps; ++step) {
    Eigen::MatrixXd dW = s.sample_increments(step);
    for (int j = 0; j < n_loc; ++j) cov[j] += dW(0, 0) * dW(j, 0);
  }
  cov /= n_steps;

  bool pass = true;
  double worst = 0.0;
  for (int j = 0; j < n_loc; ++j) {
    double R = correlation_R_1d(loc(j, 0), eps);
    double tol = 0.05 * dt * std::max(R, 0.2);
    worst = std::max(worst, std::abs(cov[j] - dt * R) / (dt * 0.2));
    if (std::abs(cov[j] - dt * R) > tol) pass = false;
  }
  if (std::abs(correlation_R_1d(0.0, eps) - 1.0) > 1e-8) pass = false;
  // Exactly zero beyond 2 eps (here both exact second moments and samples).
  Eigen::MatrixXd far(2, 1);
  far << 0.1, 0.45;
  NoiseFieldSampler sf(eps, far, dt, 3);
  if (sf.covariance(0, 1) != 0.0) pass = false;
  std::ostringstream d;
  d << "64 pairs, 1e4 steps, worst rel dev " << worst;
  report(1, "noise covariance", pass, d.str());
}

// 2. Linearization exactness identity.
void criterion_exactness() {
  LinrelaxParams p;
  p.lacunary_depth = 2;
  p.a0 = 0.3;
  CoefficientModel m = make_linrelax(p);
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3);
  CounterKey key{424242};
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    WeightedPointCloud mu = random_small_cloud(key, 6, 2 * inst);
    WeightedPointCloud nu = random_small_cloud(key, 5, 2 * inst + 1);
    for (const TestFunction& psi : dict.members) {
      double lhs = 0.0, rhs = 0.0;
      for (Eigen::Index i = 0; i < mu.size(); ++i)
        lhs += mu.w[i] * apply_L(m, mu, 0.3, psi, mu.x.row(i).transpose(),
                                 mu.u.row(i).transpose());
      for (Eigen::Index i = 0; i < nu.size(); ++i)
        lhs -= nu.w[i] * apply_L(m, nu, 0.3, psi, nu.x.row(i).transpose(),
                                 nu.u.row(i).transpose());
      LinearizedGenerator lin(m, mu, nu, 0.3, psi);
      for (Eigen::Index i = 0; i < mu.size(); ++i)
        rhs += mu.w[i] * lin(mu.x.row(i).transpose(), mu.u.row(i).transpose());
      for (Eigen::Index i = 0; i < nu.size(); ++i)
        rhs -= nu.w[i] * lin(nu.x.row(i).transpose(), nu.u.row(i).transpose());
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  std::ostringstream d;
  d << "100 pairs x " << dict.size() << " members, max |lhs-rhs| = " << worst;
  report(2, "linearization identity", worst < 1e-8, d.str());
}

// 3. Coupled zero-test for the interaction-free model.
void criterion_zero_test() {
  CoefficientModel m = make_decoupled();
  SimOptions opts;
  opts.T = 0.2;
  opts.dt = 2e-3;
  opts.seed = 11;
  double worst = 0.0;
  for (auto [M, N] : {std::pair{16, 8}, {64, 16}, {256, 32}}) {
    CoupledResult cr =
        coupled_run(m, SpatialGrid::with_columns(N, 1), M, {}, opts);
    worst = std::max(worst, cr.error_sup);
  }
  std::ostringstream d;
  d << "3 sizes, max sup-gap = " << worst;
  report(3, "coupled zero-test", worst == 0.0, d.str());
}

int run_cfg(const std::string& path, const std::string& out) {
  ExperimentConfig cfg = ExperimentConfig::load_file(path);
  return run_experiment(cfg, out, 8);
}

// Exact W1 between two 1-D value-axis atomic measures via CDFs.
double w1_1d(const WeightedPointCloud& a, const WeightedPointCloud& b) {
  struct Atom {
    double u, wa, wb;
  };
  std::vector<Atom> atoms;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    atoms.push_back({a.u(i, 0), a.w[i], 0.0});
  for (Eigen::Index i = 0; i < b.size(); ++i)
    atoms.push_back({b.u(i, 0), 0.0, b.w[i]});
  std::sort(atoms.begin(), atoms.end(),
            [](const Atom& p, const Atom& q) { return p.u < q.u; });
  double w1 = 0.0, diff = 0.0;
  for (size_t i = 0; i + 1 < atoms.size(); ++i) {
    diff += atoms[i].wa - atoms[i].wb;
    w1 += std::abs(diff) * (atoms[i + 1].u - atoms[i].u);
  }
  return w1;
}

// 8. x-homogeneous ensemble marginal against the Fokker-Planck solver.
void criterion_fokker_planck() {
  nlohmann::json mj = {{"name", "linrelax"}, {"c_b", 0.0}};
  CoefficientModel m = model_from_json(mj);
  SimOptions opts;
  opts.T = 1.0;
  opts.dt = 1e-3;
  opts.seed = 314159;
  opts.init_c = 0.0;  // x-homogeneous initial law
  opts.snapshot_times = {1.0};
  SimulationResult ens =
      simulate_mckean_ensemble(m, SpatialGrid::with_columns(1, 1), 4000, opts);
  WeightedPointCloud mc =
      value_marginal(snapshot_cloud(SpatialGrid::with_columns(1, 1),
                                    ens.snapshots_u.back()));

  FPGrid1D grid;
  Eigen::VectorXd f0 = fp_initial_density(grid, 1.0, 2718, 400000);
  FPResult fp = solve_fp_1d(m, f0, 1.0, grid, 1e-4);
  double w1 = w1_1d(mc, fp_cloud(grid, fp.final_density));
  std::ostringstream d;
  d << "W1(ensemble, FP) = " << w1 << " at T=1";
  report(8, "cross-solver oracle", w1 < 0.05, d.str());
}

// 9. Network simplex equals brute-force assignment.
void criterion_transport() {
  CounterKey key{606060};
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    int n = 2 + static_cast<int>(counter_uniform(key.with(1), inst) * 5);
    int p = 1 + inst % 2;
    WeightedPointCloud a = random_small_cloud(key, n, 100 + 2 * inst);
    WeightedPointCloud b = random_small_cloud(key, n, 101 + 2 * inst);
    double ws = wasserstein(a, b, p, WassersteinMethod::NetworkSimplex);
    double bf = wasserstein_bruteforce(a, b, p);
    worst = std::max(worst, std::abs(ws - bf));
  }
  std::ostringstream d;
  d << "50 instances, max |simplex - brute| = " << worst;
  report(9, "transport oracle", worst < 1e-9, d.str());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10. Byte-identical CSVs under different worker counts.
void criterion_determinism(const std::string& cfg_dir,
                           const std::string& out_dir) {
  ExperimentConfig cfg =
      ExperimentConfig::load_file(cfg_dir + "/determinism.json");
  std::vector<std::string> outs;
  for (int workers : {1, 4, 8}) {
    std::string out = out_dir + "/determinism_w" + std::to_string(workers);
    run_experiment(cfg, out, workers);  // slope result irrelevant here
    outs.push_back(out);
  }
  bool pass = true;
  for (const char* file :
       {"rate_runs.csv", "rate_summary.csv", "summary.json"}) {
    std::string base = slurp(outs[0] + "/" + file);
    if (base.empty()) pass = false;
    for (size_t i = 1; i < outs.size(); ++i)
      if (slurp(outs[i] + "/" + file) != base) pass = false;
  }
  report(10, "determinism", pass, "1/4/8 workers, byte-compared artifacts");
}

void run_experiment_criterion(int index, const std::string& name,
                              const std::vector<std::string>& cfgs,
                              const std::string& cfg_dir,
                              const std::string& out_dir) {
  bool pass = true;
  std::string detail;
  for (const std::string& c : cfgs) {
    std::string out = out_dir + "/" + c;
    int rc = 2;
    try {
      rc = run_cfg(cfg_dir + "/" + c + ".json", out);
    } catch (const std::exception& e) {
      detail += std::string(e.what()) + "; ";
    }
    if (rc != 0) pass = false;
    detail += c + (rc == 0 ? " ok; " : " failed; ");
  }
  detail += "see " + out_dir;
  report(index, name, pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: acceptance <configs_dir> <out_dir>\n");
    return 2;
  }
  std::string cfg_dir = argv[1], out_dir = argv[2];
  std::filesystem::create_directories(out_dir);

  criterion_noise();
  criterion_exactness();
  criterion_zero_test();
  run_experiment_criterion(4, "mean-field rate", {"mean_field_rate"}, cfg_dir,
                           out_dir);
  run_experiment_criterion(5, "qv convergence", {"qv_convergence"}, cfg_dir,
                           out_dir);
  run_experiment_criterion(6, "initial-data CLT",
                           {"clt_initial_good", "clt_initial_broken"},
                           cfg_dir, out_dir);
  run_experiment_criterion(7, "trajectory CLT", {"clt_trajectory"}, cfg_dir,
                           out_dir);
  criterion_fokker_planck();
  criterion_transport();
  criterion_determinism(cfg_dir, out_dir);

  if (g_failures == 0) {
    std::printf("acceptance: all 10 criteria PASS\n");
    return 0;
  }
  std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
  return 1;
}
