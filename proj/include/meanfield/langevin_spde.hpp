#pragma once

#include <Eigen/Dense>
#include <vector>

#include "meanfield/fluctuation.hpp"
#include "meanfield/particle_dynamics.hpp"
#include "meanfield/test_space.hpp"

namespace meanfield {

// Finite-dimensional closure of the limiting linear SPDE on the
// orthonormalized dictionary: coordinates y_q(t) = <eta_t, psi~_q> evolve
// as dy = A(t)^T y dt + dG with Cov(dG) = C(t) dt and y_0 ~ N(0, Q0).
struct GalerkinSystem {
  int P = 0;
  std::vector<double> times;        // nodes for A and C
  std::vector<Eigen::MatrixXd> A;   // P x P: Lin[psi~_q] ~ sum_p A_pq psi~_p
  std::vector<Eigen::MatrixXd> C;   // P x P noise covariance rates
  Eigen::MatrixXd Q0;               // P x P initial covariance
  Eigen::MatrixXd residuals;        // nodes x P projection residual norms
  double clip_C = 0.0;              // total eigenvalue mass clipped from C
  double clip_Q0 = 0.0;

  Eigen::MatrixXd A_at(double t) const;  // linear interpolation
  Eigen::MatrixXd C_at(double t) const;
};

// Least-squares projection of Lin_t(f,f)[psi~_q] onto the orthonormalized
// dictionary under the ensemble-quadrature inner product, at the ensemble's
// snapshot times. Throws if the empirical Gram is ill-conditioned beyond
// 1e10.
GalerkinSystem assemble_galerkin(const CoefficientModel& model,
                                 const SpatialGrid& grid,
                                 const SimulationResult& ensemble, int K,
                                 const TestFunctionDictionary& dict);

// Noise covariance rates C(t) by symmetric finite differences of g_t
// (estimated on the raw members), transformed to the orthonormal basis and
// PSD-clipped.
void set_noise_covariance(GalerkinSystem& sys, const CovarianceEstimate& g_est,
                          const TestFunctionDictionary& dict);

// Q0 from an initial-covariance estimate on the raw members, transformed
// to the orthonormal basis and PSD-clipped.
void set_initial_covariance(GalerkinSystem& sys, const Eigen::MatrixXd& Q_raw,
                            const TestFunctionDictionary& dict);

// Euler-Maruyama paths; returns the n_paths x P matrix of c_T samples.
// Throws if dt * (max spectral radius of A) >= 0.1 or if no PSD factor of
// C(t) exists after clipping.
Eigen::MatrixXd simulate_spde(const GalerkinSystem& sys, double T, double dt,
                              int n_paths, uint64_t seed);

// Deterministic law of the Gaussian solution: d Sigma = A^T Sigma +
// Sigma A + C, Sigma(0) = Q0, by RK4; returns Sigma at each step
// (step 0 = Q0).
std::vector<Eigen::MatrixXd> covariance_ode(const GalerkinSystem& sys,
                                            double T, double dt);

}  // namespace meanfield
