#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>

namespace meanfield {

// Atomic measure on Q x R_+^{d_v}: row i of `x` / `u` is one atom.
struct WeightedPointCloud {
  Eigen::MatrixXd x;  // n x d
  Eigen::MatrixXd u;  // n x d_v
  Eigen::VectorXd w;  // n, nonnegative, sums to 1

  Eigen::Index size() const { return w.size(); }
  int dim_x() const { return static_cast<int>(x.cols()); }
  int dim_u() const { return static_cast<int>(u.cols()); }

  void validate(double tol = 1e-12) const {
    if (x.rows() != w.size() || u.rows() != w.size())
      throw std::invalid_argument("cloud: inconsistent atom counts");
    if (w.size() > 0 && (w.minCoeff() < 0.0 ||
                         std::abs(w.sum() - 1.0) > tol))
      throw std::invalid_argument("cloud: weights must be >= 0 and sum to 1");
  }
};

// Atomic measure on Q^2 x R_+^{2 d_v}.
struct JointPointCloud {
  Eigen::MatrixXd x, y;  // n x d each
  Eigen::MatrixXd u, v;  // n x d_v each
  Eigen::VectorXd w;

  Eigen::Index size() const { return w.size(); }
  // Number of (i,j) pairs actually represented (subsampling bookkeeping).
  Eigen::Index pairs_represented = 0;
};

template <class Psi>
double pairing(const WeightedPointCloud& cloud, Psi&& psi) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    s += cloud.w[i] * psi(cloud.x.row(i).transpose(), cloud.u.row(i).transpose());
  return s;
}

}  // namespace meanfield
