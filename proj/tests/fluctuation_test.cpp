#include <doctest.h>

#include <cmath>

#include "meanfield/counter_rng.hpp"
#include "meanfield/fluctuation.hpp"
#include "meanfield/noise_field.hpp"
#include "meanfield/test_space.hpp"

using namespace meanfield;

TEST_CASE("gaussianity test accepts normal samples and flags inflation") {
  CounterKey k{321};
  std::vector<double> samples(500);
  for (int i = 0; i < 500; ++i) samples[i] = counter_gauss(k, i);
  GaussianityReport ok = gaussianity_test(samples, 1.0);
  CHECK(ok.p_value > 0.05);
  CHECK(ok.variance_ratio == doctest::Approx(1.0).epsilon(0.2));

  for (double& s : samples) s *= 2.0;
  GaussianityReport bad = gaussianity_test(samples, 1.0);
  CHECK(bad.variance_ratio > 1.5);
  CHECK(bad.variance_ratio_p < 0.01);
  // A pure mean shift also inflates the ratio about the null mean 0.
  for (double& s : samples) s = 0.5 * s + 3.0;
  GaussianityReport shifted = gaussianity_test(samples, 1.0);
  CHECK(shifted.variance_ratio > 1.5);
}

TEST_CASE("initial pairing covariance is grid-independent for flat profiles") {
  InitialDataSampler init;
  init.c = 0.0;  // u is shared across locations within one copy
  init.seed = 31;
  TestFunctionDictionary dict = build_dictionary(1, 1, 1, 3);
  CovarianceEstimate a = initial_covariance_Q(
      init, SpatialGrid::with_columns(8, 1), dict.members, 1000);
  CovarianceEstimate b = initial_covariance_Q(
      init, SpatialGrid::with_columns(64, 1), dict.members, 1000);
  CHECK((a.Q - b.Q).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-12);
  // PSD and symmetric.
  CHECK((a.Q - a.Q.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.Q);
  CHECK(es.eigenvalues().minCoeff() > -1e-12);
}

TEST_CASE("parallel initial covariance equals the serial result") {
  InitialDataSampler init;
  init.seed = 8;
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3);
  SpatialGrid grid = SpatialGrid::with_columns(16, 1);
  CovarianceEstimate serial =
      initial_covariance_Q(init, grid, dict.members, 1000, 1);
  CovarianceEstimate parallel =
      initial_covariance_Q(init, grid, dict.members, 1000, 4);
  CHECK((serial.Q - parallel.Q).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reference pairing equals the snapshot cloud pairing") {
  InitialDataSampler init;
  init.seed = 12;
  SpatialGrid grid = SpatialGrid::with_columns(8, 1);
  Eigen::MatrixXd u;
  init.fill(grid, 4, u);
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3);
  for (int p : {0, 4, 8}) {
    PairingEstimate est = reference_pairing(grid, u, 4, dict.members[p]);
    double direct = cloud_pairing(snapshot_cloud(grid, u), dict.members[p]);
    CHECK(est.value == doctest::Approx(direct).epsilon(1e-12));
    CHECK(est.std_error >= 0.0);
  }
}

TEST_CASE("accumulator quadratic variation matches the hand formula") {
  SpatialGrid grid = SpatialGrid::with_columns(2, 1);
  TestFunctionDictionary dict = build_dictionary(1, 1, 1, 1);
  double dt = 1e-2, eps = 0.3, C = 2.0;
  int M = 1;
  FluctuationAccumulator acc(grid, M, dict.members, C, dt, eps, true);
  Eigen::MatrixXd u(2, 1), sig(2, 1), dW(2, 1);
  u << 0.5, 1.5;
  sig << 0.7, 0.4;
  dW << 0.02, -0.01;
  acc.on_step(0, 0.0, u, sig, dW);

  auto A = [&](int i) {
    return dict.members[0].grad1(grid.centers(i, 0), u(i, 0)) * sig(i, 0);
  };
  double N = 2.0;
  double expect = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double sep = grid.centers(i, 0) - grid.centers(j, 0);
      expect += A(i) * A(j) * correlation_R_1d(sep, eps);
    }
  expect *= C * C / (M * M * N * N) * dt;
  CHECK(acc.qv_final()(0, 0) == doctest::Approx(expect).epsilon(1e-10));

  // Martingale term: C/(MN) sum grad . sigma dW.
  double mart = (A(0) * dW(0, 0) + A(1) * dW(1, 0)) * C / (M * N);
  MartingaleRecord rec = acc.martingale();
  CHECK(rec.values(rec.values.rows() - 1, 0) ==
        doctest::Approx(mart).epsilon(1e-10));
}

TEST_CASE("estimated g is symmetric, PSD and nondecreasing on the diagonal") {
  CoefficientModel m = make_linrelax();
  SpatialGrid grid = SpatialGrid::with_columns(8, 1);
  SimOptions opts;
  opts.T = 0.1;
  opts.dt = 1e-2;
  opts.seed = 3;
  opts.snapshot_times = {0.0, 0.05, 0.1};
  SimulationResult ens = simulate_mckean_ensemble(m, grid, 32, opts);
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3);
  CovarianceEstimate g =
      estimate_g(m, grid, ens, 32, dict.members, opts.epsilon);
  REQUIRE(g.g.size() == 3);
  CHECK(g.g.front().cwiseAbs().maxCoeff() == 0.0);
  for (size_t s = 1; s < g.g.size(); ++s) {
    CHECK((g.g[s] - g.g[s].transpose()).cwiseAbs().maxCoeff() < 1e-12);
    for (int p = 0; p < dict.size(); ++p)
      CHECK(g.g[s](p, p) >= g.g[s - 1](p, p) - 1e-14);
  }
  // Mismatched epsilon is a hard error.
  CHECK_THROWS(estimate_g(m, grid, ens, 32, dict.members, 0.05));
}

TEST_CASE("semimartingale residual starts at zero and stays bounded") {
  CoefficientModel m = make_linrelax();
  SpatialGrid grid = SpatialGrid::with_columns(8, 1);
  double dt = 1e-2, T = 0.05;
  std::vector<double> every_step;
  for (int s = 0; s <= 5; ++s) every_step.push_back(s * dt);

  SimOptions opts;
  opts.T = T;
  opts.dt = dt;
  opts.seed = 14;
  opts.snapshot_times = every_step;
  int M = 16;
  double C = std::sqrt(static_cast<double>(M));
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3);
  FluctuationAccumulator acc(grid, M, {dict.members[3]}, C, dt, opts.epsilon,
                             false);
  opts.observer = &acc;
  SimulationResult run = simulate_particle_system(m, grid, M, opts);
  opts.observer = nullptr;
  opts.seed = 15;
  SimulationResult ref = simulate_mckean_ensemble(m, grid, 64, opts);

  std::vector<double> r = semimartingale_residual(
      m, grid, run.snapshots_u, grid, ref.snapshots_u, dict.members[3], C, dt,
      acc.martingale(), 0);
  REQUIRE(r.size() == every_step.size());
  CHECK(r.front() == doctest::Approx(0.0));
  for (double v : r) CHECK(std::abs(v) < 0.5);
}
