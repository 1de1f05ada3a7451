#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "meanfield/cloud.hpp"
#include "meanfield/model_coefficients.hpp"
#include "meanfield/noise_field.hpp"

namespace meanfield {

// Equispaced cell centers of [0,1]^d: N = m^d cells of side 1/m.
struct SpatialGrid {
  int N = 0;
  int d = 1;
  Eigen::MatrixXd centers;  // N x d

  static SpatialGrid regular(int cells_per_dim, int d);
  // Requires N to be a perfect d-th power.
  static SpatialGrid with_columns(int N, int d);
};

// Activity levels of the N-column, M-copy system. Row layout: particle
// (i,k) at row i*M + k.
struct ParticleSystemState {
  double t = 0.0;
  int N = 0, M = 0, d_v = 1;
  Eigen::MatrixXd u;    // (N*M) x d_v, >= 0
  Eigen::MatrixXd ell;  // (N*M) x d_v, cumulative reflection, nondecreasing
};

// Genuinely alpha-Hoelder (nowhere smoother) spatial profile: normalized
// lacunary cosine sum
//   w(x) = sum_{m<depth} 2^(-alpha m) cos(2 pi 2^m x) / sum_{m<depth} 2^(-alpha m),
// with values in [-1, 1].
double rough_profile(double x, double alpha, int depth);

// Spatially correlated nonnegative initial field, shared across locations
// within one copy:
//   u_k(x,0)^beta = |xi0_{k,beta}| (1 + c w(x_1)) + |xi1_{k,beta}|
// with w the rough alpha-Hoelder profile above (|c| < 1 keeps the factor
// positive) and xi i.i.d. standard normal keyed by (seed, stream, copy,
// beta).
struct InitialDataSampler {
  double c = 0.5;
  double alpha = 0.5;
  int profile_depth = 11;
  int d_v = 1;
  uint64_t seed = 0;
  uint64_t stream = 0;

  Eigen::VectorXd sample(const Eigen::VectorXd& x, int64_t copy) const;
  void fill(const SpatialGrid& grid, int M, Eigen::MatrixXd& u) const;
};

// Hook for per-step accumulation (martingale terms, quadratic variation).
// Receives the start-of-step state (Ito convention) together with the
// sigma values and noise increments used in that step. All matrices are
// (N*M) x d_v in the (i,k) layout.
class StepObserver {
 public:
  virtual ~StepObserver() = default;
  virtual void on_step(int64_t step, double t, const Eigen::MatrixXd& u_before,
                       const Eigen::MatrixXd& sigma_vals,
                       const Eigen::MatrixXd& dW) = 0;
};

// Per-step interaction feature sums of a (possibly frozen) measure path,
// for separable kernels: S_b(x) = sum_r lhs_r(x) features_b(step, r).
struct MeasurePath {
  double dt = 0.0;
  int n_steps = 0;
  Eigen::MatrixXd features_b;  // (n_steps+1) x rank_b, start-of-step
  Eigen::MatrixXd features_s;  // (n_steps+1) x rank_s
  bool has_b = false, has_s = false;
};

struct SimOptions {
  double T = 1.0;
  double dt = 1e-3;
  uint64_t seed = 0;
  uint64_t noise_stream_offset = 0;  // added to the copy index
  uint64_t init_stream = 0;
  double init_c = 0.5;
  double blowup_cap = 1e6;
  double epsilon = 0.1;
  double noise_h = -1.0;  // auxiliary grid spacing; <0 -> eps/8
  int n_threads = 1;
  std::vector<double> snapshot_times;
  StepObserver* observer = nullptr;
  bool record_features = false;  // store the MeasurePath of the run
};

struct SimulationResult {
  ParticleSystemState state;  // final
  std::vector<double> snapshot_times;
  std::vector<Eigen::MatrixXd> snapshots_u;
  MeasurePath features;  // only if record_features
  double epsilon = 0.0;  // noise correlation radius used
};

// Per-particle diffusion values sigma(x_i, t, u_ik, law proxy of `u`),
// using the separable fast path when available.
Eigen::MatrixXd sigma_field(const CoefficientModel& model,
                            const SpatialGrid& grid, const Eigen::MatrixXd& u,
                            double t);

int n_steps_for(double T, double dt);  // T must be a multiple of dt

// One explicit Euler step with componentwise projection on the orthant;
// the measure argument is the start-of-step cloud (frozen-measure scheme).
// Exposed for oracle tests; the simulate_* drivers use the equivalent
// fast path.
void reflected_euler_step(ParticleSystemState& state,
                          const CoefficientModel& model,
                          const SpatialGrid& grid,
                          const WeightedPointCloud& frozen_measure,
                          const Eigen::MatrixXd& noise_increments, double dt);

// True particle system (self-interacting through its own empirical cloud).
SimulationResult simulate_particle_system(const CoefficientModel& model,
                                          const SpatialGrid& grid, int M,
                                          const SimOptions& opts);

// Self-consistent McKean-Vlasov ensemble: K copies per location, measure
// argument = the ensemble's own location-weighted cloud.
SimulationResult simulate_mckean_ensemble(const CoefficientModel& model,
                                          const SpatialGrid& location_grid,
                                          int K, const SimOptions& opts);

struct CoupledResult {
  // sqrt of mean over (i,k) of sup_t |u_ik - ubar_ik|^2 / ^4.
  double error_l2 = 0.0;
  double error_l4 = 0.0;
  // sup over (i,k) of sup_t |u_ik - ubar_ik|.
  double error_sup = 0.0;
  ParticleSystemState particle_final, mckean_final;
};

// Setting-3.1 coupling: the particle system and a McKean ensemble at the
// same grid points share initial data and noise streams bit-exactly. The
// McKean side's measure argument is the frozen `reference` path (from an
// independent self-consistent ensemble). Models with interaction must
// provide separable kernels; without interaction `reference` may be empty.
CoupledResult coupled_run(const CoefficientModel& model,
                          const SpatialGrid& grid, int M,
                          const MeasurePath& reference,
                          const SimOptions& opts);

// Empirical cloud of a state on the given grid (atoms (x_i, u_ik),
// weight 1/(N*M)).
WeightedPointCloud state_cloud(const SpatialGrid& grid,
                               const ParticleSystemState& state);
WeightedPointCloud snapshot_cloud(const SpatialGrid& grid,
                                  const Eigen::MatrixXd& u);

}  // namespace meanfield
