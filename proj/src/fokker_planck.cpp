#include "meanfield/fokker_planck.hpp"

#include <cmath>
#include <stdexcept>

#include "meanfield/counter_rng.hpp"

namespace meanfield {

Eigen::VectorXd FPGrid1D::centers() const {
  Eigen::VectorXd c(n_cells);
  double h = du();
  for (int i = 0; i < n_cells; ++i) c[i] = (i + 0.5) * h;
  return c;
}

namespace {

// Density -> cloud used as the self-consistent measure argument (atoms at
// cell centers, x fixed at the origin of the torus; the model must not
// depend on x).
WeightedPointCloud density_cloud(const FPGrid1D& grid,
                                 const Eigen::VectorXd& f, int d) {
  WeightedPointCloud c;
  c.x = Eigen::MatrixXd::Zero(grid.n_cells, d);
  c.u = grid.centers();
  c.w = f * grid.du();
  double s = c.w.sum();
  if (s > 0.0) c.w /= s;
  return c;
}

}  // namespace

FPResult solve_fp_1d(const CoefficientModel& model, const Eigen::VectorXd& f0,
                     double T, const FPGrid1D& grid, double dt,
                     const std::vector<double>& snapshot_times) {
  if (model.d_v != 1)
    throw std::invalid_argument("solve_fp_1d: model must have d_v = 1");
  if (f0.size() != grid.n_cells)
    throw std::invalid_argument("solve_fp_1d: f0 size != n_cells");
  const int n = grid.n_cells;
  const double du = grid.du();
  const int n_steps = static_cast<int>(std::round(T / dt));
  if (std::abs(n_steps * dt - T) > 1e-9)
    throw std::invalid_argument("solve_fp_1d: T must be a multiple of dt");

  Eigen::VectorXd f = f0;
  double mass = f.sum() * du;
  if (mass <= 0.0)
    throw std::invalid_argument("solve_fp_1d: initial density has no mass");
  f /= mass;

  FPResult res;
  auto snapshot = [&](double t) {
    for (double ts : snapshot_times)
      if (std::abs(ts - t) < 0.5 * dt) {
        res.times.push_back(t);
        res.densities.push_back(f);
      }
  };
  snapshot(0.0);

  Eigen::VectorXd centers = grid.centers();
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(model.d);
  Eigen::VectorXd b(n), s2(n), g(n), flux(n + 1);
  Eigen::VectorXd uvec(1);

  for (int step = 0; step < n_steps; ++step) {
    double t = step * dt;
    WeightedPointCloud mu = density_cloud(grid, f, model.d);
    // Interaction integrals: with kernels independent of u (built-ins),
    // one evaluation serves every cell; recompute per cell otherwise.
    InteractionSums shared_sums;
    bool have_shared = false;
    if (model.interaction_u_independent) {
      uvec[0] = centers[0];
      shared_sums = interaction_sums(model, x0, t, uvec, mu);
      have_shared = true;
    }
    for (int i = 0; i < n; ++i) {
      uvec[0] = centers[i];
      InteractionSums sums =
          have_shared ? shared_sums : interaction_sums(model, x0, t, uvec, mu);
      b[i] = drift_b(model, x0, t, uvec, sums)[0];
      double sg = diffusion_sigma(model, x0, t, uvec, sums)[0];
      s2[i] = sg * sg;
      g[i] = s2[i] * f[i];
    }
    // CFL guard for the explicit update.
    double bmax = b.cwiseAbs().maxCoeff();
    double smax = s2.maxCoeff();
    double limit = 0.9 / (bmax / du + smax / (du * du) + 1e-300);
    if (dt > limit)
      throw std::invalid_argument(
          "solve_fp_1d: CFL violation, need dt <= " + std::to_string(limit));

    flux[0] = 0.0;
    flux[n] = 0.0;
    for (int i = 1; i < n; ++i) {
      double bi = 0.5 * (b[i - 1] + b[i]);
      double adv = bi > 0.0 ? bi * f[i - 1] : bi * f[i];
      double dif = -0.5 * (g[i] - g[i - 1]) / du;
      flux[i] = adv + dif;
    }
    for (int i = 0; i < n; ++i) f[i] -= dt / du * (flux[i + 1] - flux[i]);
    snapshot((step + 1) * dt);
  }
  res.final_density = f;
  res.boundary_mass = f[n - 1] * du;
  return res;
}

WeightedPointCloud fp_cloud(const FPGrid1D& grid, const Eigen::VectorXd& f) {
  WeightedPointCloud c;
  c.x.resize(grid.n_cells, 0);
  c.u = grid.centers();
  c.w = f * grid.du();
  double s = c.w.sum();
  if (s > 0.0) c.w /= s;
  return c;
}

WeightedPointCloud value_marginal(const WeightedPointCloud& cloud) {
  WeightedPointCloud c;
  c.x.resize(cloud.size(), 0);
  c.u = cloud.u;
  c.w = cloud.w;
  return c;
}

Eigen::VectorXd fp_initial_density(const FPGrid1D& grid, double profile,
                                   uint64_t seed, int n_mc) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(grid.n_cells);
  CounterKey key = CounterKey(seed).with(0x66706930ULL);  // "fpi0"
  double du = grid.du();
  for (int s = 0; s < n_mc; ++s) {
    double v = std::abs(counter_gauss(key, 2 * s)) * profile +
               std::abs(counter_gauss(key, 2 * s + 1));
    int cell = static_cast<int>(v / du);
    if (cell >= 0 && cell < grid.n_cells) f[cell] += 1.0;
  }
  f /= f.sum() * du;
  return f;
}

}  // namespace meanfield
