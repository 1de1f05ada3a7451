#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "meanfield/cloud.hpp"

namespace meanfield {

// Empirical measure of a particle configuration: columns at centers
// `x` (N x d), M particles per column stacked as rows of `u` ((N*M) x d_v),
// row index i*M + k. Atoms (x_i, u_{ik}) with uniform weight 1/(M*N).
WeightedPointCloud empirical_measure(const Eigen::MatrixXd& x,
                                     const Eigen::MatrixXd& u, int M);

// Joint empirical measure: atoms (x_i, x_j, u_{ik}, u_{jk}) over all column
// pairs (i,j) and the shared copy index k, weight 1/(M*N^2). If the atom
// count would exceed `max_atoms`, pairs (i,j,k) are subsampled uniformly
// (counter RNG keyed by `seed`) and `pairs_represented` records the total.
JointPointCloud joint_empirical(const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& u, int M,
                                Eigen::Index max_atoms = 1 << 22,
                                uint64_t seed = 0);

// Squared ground distance on Q^d x R^{d_v}: torus metric on x, Euclidean
// on u.
double ground_dist2(const WeightedPointCloud& a, Eigen::Index i,
                    const WeightedPointCloud& b, Eigen::Index j);

enum class WassersteinMethod { Auto, Exact1d, NetworkSimplex, Subsampled };

struct WassersteinResult {
  double value = 0.0;
  double std_error = 0.0;  // nonzero only for the subsampled method
  WassersteinMethod method_used = WassersteinMethod::Auto;
};

// W_p between atomic measures, p in {1,2}.
//  - Exact1d: sorted quantile coupling; requires total dimension 1 and
//    uniform weights with equal atom counts, otherwise falls through to
//    NetworkSimplex.
//  - NetworkSimplex: exact discrete OT (transportation simplex), up to
//    2048 atoms per side.
//  - Subsampled: average of exact OT over `resamples` draws of
//    `subsample_n` atoms (weight-proportional, counter RNG), with standard
//    error.
//  - Auto: Exact1d if eligible, else NetworkSimplex if small enough, else
//    Subsampled.
WassersteinResult wasserstein_full(const WeightedPointCloud& a,
                                   const WeightedPointCloud& b, int p,
                                   WassersteinMethod method =
                                       WassersteinMethod::Auto,
                                   uint64_t seed = 0, int subsample_n = 512,
                                   int resamples = 8);

double wasserstein(const WeightedPointCloud& a, const WeightedPointCloud& b,
                   int p,
                   WassersteinMethod method = WassersteinMethod::Auto,
                   uint64_t seed = 0);

// Exact optimal transport cost sum_ij pi_ij * cost_ij for given marginals
// (transportation simplex). Exposed for oracle tests.
double transport_cost(const Eigen::MatrixXd& cost, const Eigen::VectorXd& wa,
                      const Eigen::VectorXd& wb);

// Brute-force W_p by exhaustive assignment enumeration; requires equal atom
// counts (<= 8) with uniform weights, where optimal transport reduces to an
// assignment problem.
double wasserstein_bruteforce(const WeightedPointCloud& a,
                              const WeightedPointCloud& b, int p);

}  // namespace meanfield
