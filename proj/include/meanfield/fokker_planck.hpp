#pragma once

#include <Eigen/Dense>
#include <vector>

#include "meanfield/cloud.hpp"
#include "meanfield/model_coefficients.hpp"

namespace meanfield {

// Finite-volume grid on [0, u_max] with n_cells uniform cells.
struct FPGrid1D {
  double u_max = 12.0;
  int n_cells = 800;

  double du() const { return u_max / n_cells; }
  Eigen::VectorXd centers() const;
};

struct FPResult {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> densities;
  Eigen::VectorXd final_density;
  double boundary_mass = 0.0;  // mass in the last cell at T (truncation check)
};

// Conservative explicit finite-volume solve of the 1-D Fokker-Planck
// equation with zero-flux boundaries at u = 0 and u = u_max:
//   d_t f = -d_u( b f - 1/2 d_u(sigma^2 f) ),
// drift flux upwinded, diffusive flux centered. The model must be
// x-homogeneous with d_v = 1; its measure argument is closed
// self-consistently by the solver's own current density.
FPResult solve_fp_1d(const CoefficientModel& model, const Eigen::VectorXd& f0,
                     double T, const FPGrid1D& grid, double dt,
                     const std::vector<double>& snapshot_times = {});

// Density as an atomic measure on the value axis only (no spatial
// coordinate), for Wasserstein comparison against ensemble u-marginals.
WeightedPointCloud fp_cloud(const FPGrid1D& grid, const Eigen::VectorXd& f);

// u-marginal of a cloud (drops the x coordinates).
WeightedPointCloud value_marginal(const WeightedPointCloud& cloud);

// Cell-averaged density of the initial-data law |xi0| * profile + |xi1|
// (standard normal xi, Monte Carlo histogram; x-homogeneous case where
// profile = 1 + c |sin(pi x)|^alpha is a constant).
Eigen::VectorXd fp_initial_density(const FPGrid1D& grid, double profile,
                                   uint64_t seed, int n_mc);

}  // namespace meanfield
