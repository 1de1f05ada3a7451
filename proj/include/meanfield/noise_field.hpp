#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "meanfield/counter_rng.hpp"

namespace meanfield {

// Radial kernel supported in the unit ball, values in [0,1], together with
// the normalization C_rho = (int rho^2)^{-1}.
struct Mollifier {
  int d = 1;
  double c_rho = 0.0;

  explicit Mollifier(int dim);

  // Default profile (1-r^2)^2 for r < 1, else 0.
  static double radial(double r);

  double operator()(const Eigen::VectorXd& z) const;
};

// R^eps(x) = C_rho int rho(z + x/eps) rho(z) dz, by the same fixed
// tensor-product quadrature used for C_rho (so R(0) = 1 to rule accuracy).
double correlation_R(const Eigen::VectorXd& x, double epsilon,
                     const Mollifier& m);
double correlation_R_1d(double x, double epsilon);  // convenience, d = 1

// Discrete eps-correlated Gaussian field on Q = [0,1]^d (periodic), white in
// time: increments over one step of size dt at a fixed set of locations.
// White-noise atoms live on an auxiliary periodic grid of spacing h <= eps/4
// and are convolved with rho_eps; the per-location output is rescaled so the
// single-point increment variance equals dt exactly at finite h.
//
// Atom draws are keyed by (seed, stream, step, cell, direction), so equal
// parameters give bit-identical streams under any parallel schedule, and two
// systems sharing (seed, stream) consume the identical field.
class NoiseFieldSampler {
 public:
  NoiseFieldSampler(double epsilon, Eigen::MatrixXd locations, double dt,
                    uint64_t seed, uint64_t stream = 0, int d_v = 1,
                    double h_request = -1.0);  // default h = eps/8

  // Increments Delta W^eps(x_i) for one step: locations x d_v.
  Eigen::MatrixXd sample_increments(int64_t step_index) const;
  // Same, overriding the stream id (independent field copies W^{eps,k}
  // share one sampler; copy k draws with stream = k).
  Eigen::MatrixXd sample_increments(int64_t step_index,
                                    uint64_t stream) const;
  // In-place variant writing into `out` (n_locations x d_v), using `atoms`
  // as scratch; avoids per-call allocation in hot loops.
  void sample_increments_into(int64_t step_index, uint64_t stream,
                              Eigen::MatrixXd& atoms,
                              Eigen::MatrixXd& out) const;

  // Exact second moments of the constructed discrete field.
  double covariance(int loc_a, int loc_b) const;  // per step, exact
  double variance(int loc) const { return covariance(loc, loc); }

  double epsilon() const { return epsilon_; }
  double dt() const { return dt_; }
  double h() const { return h_; }
  int d() const { return d_; }
  int d_v() const { return d_v_; }
  Eigen::Index n_locations() const { return locations_.rows(); }
  const Eigen::MatrixXd& locations() const { return locations_; }

 private:
  double epsilon_, dt_, h_;
  int d_, d_v_;
  int cells_per_dim_;
  Eigen::MatrixXd locations_;
  CounterKey pre_stream_;  // (seed, domain tag); stream appended per draw
  uint64_t stream_;

  // Per location: indices into active_cells_ and convolution weights
  // (renormalized, including the sqrt(dt) factor).
  std::vector<std::vector<std::pair<int, double>>> weights_;
  std::vector<int64_t> active_cells_;  // sorted flat cell indices

  friend class NoiseFieldProbe;
};

}  // namespace meanfield
