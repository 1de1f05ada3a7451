#include <doctest.h>

#include <cmath>

#include "meanfield/fokker_planck.hpp"

using namespace meanfield;

namespace {

CoefficientModel wall_model(double s) {
  // Constant drift toward the wall with constant diffusion: the stationary
  // zero-flux density is C exp(-2 u / s^2).
  CoefficientModel m;
  m.name = "wall";
  m.b0 = [](const Eigen::VectorXd&, double, const Eigen::VectorXd& u) {
    return Eigen::VectorXd::Constant(u.size(), -1.0).eval();
  };
  m.sigma0 = [s](const Eigen::VectorXd&, double, const Eigen::VectorXd& u) {
    return Eigen::VectorXd::Constant(u.size(), s).eval();
  };
  return m;
}

}  // namespace

TEST_CASE("finite volume conserves mass to machine precision") {
  FPGrid1D grid;
  grid.u_max = 8.0;
  grid.n_cells = 400;
  Eigen::VectorXd f0 = fp_initial_density(grid, 1.0, 3, 40000);
  CoefficientModel m = make_decoupled(0.5);
  FPResult res = solve_fp_1d(m, f0, 0.5, grid, 1e-4);
  CHECK(res.final_density.sum() * grid.du() ==
        doctest::Approx(1.0).epsilon(1e-10));
  CHECK(res.final_density.minCoeff() >= -1e-12);
}

TEST_CASE("long-time density approaches the closed-form stationary law") {
  FPGrid1D grid;  // defaults: u_max 12, 800 cells
  double s = 0.7;
  CoefficientModel m = wall_model(s);
  Eigen::VectorXd f0 = fp_initial_density(grid, 1.0, 5, 40000);
  FPResult res = solve_fp_1d(m, f0, 10.0, grid, 5e-5);
  Eigen::VectorXd centers = grid.centers();
  double lambda = 2.0 / (s * s);
  double l1 = 0.0;
  for (int i = 0; i < grid.n_cells; ++i) {
    double target = lambda * std::exp(-lambda * centers[i]) /
                    (1.0 - std::exp(-lambda * grid.u_max));
    l1 += std::abs(res.final_density[i] - target) * grid.du();
  }
  CHECK(l1 < 0.03);
  CHECK(res.boundary_mass < 1e-6);
}

TEST_CASE("zero coefficients leave the density invariant") {
  FPGrid1D grid;
  grid.u_max = 4.0;
  grid.n_cells = 100;
  CoefficientModel m;
  m.name = "frozen";
  m.b0 = [](const Eigen::VectorXd&, double, const Eigen::VectorXd& u) {
    return Eigen::VectorXd::Zero(u.size()).eval();
  };
  m.sigma0 = [](const Eigen::VectorXd&, double, const Eigen::VectorXd& u) {
    return Eigen::VectorXd::Zero(u.size()).eval();
  };
  Eigen::VectorXd f0 = fp_initial_density(grid, 1.0, 7, 20000);
  FPResult res = solve_fp_1d(m, f0, 0.1, grid, 1e-3);
  Eigen::VectorXd f0n = f0 / (f0.sum() * grid.du());
  CHECK((res.final_density - f0n).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fp cloud carries the density as value-axis weights") {
  FPGrid1D grid;
  grid.u_max = 2.0;
  grid.n_cells = 10;
  Eigen::VectorXd f = Eigen::VectorXd::Constant(10, 0.5);
  WeightedPointCloud c = fp_cloud(grid, f);
  CHECK(c.size() == 10);
  CHECK(c.dim_x() == 0);
  CHECK(c.w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.u(3, 0) == doctest::Approx(0.7).epsilon(1e-12));
}
