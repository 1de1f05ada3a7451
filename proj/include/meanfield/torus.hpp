#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace meanfield {

// Q = [0,1]^d with periodic identification.

inline double torus_wrap(double x) {
  double y = x - std::floor(x);
  return (y == 1.0) ? 0.0 : y;
}

// Signed displacement in [-1/2, 1/2).
inline double torus_delta(double a, double b) {
  double d = a - b;
  d -= std::round(d);
  return d;
}

inline double torus_dist2(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    double d = torus_delta(a[i], b[i]);
    s += d * d;
  }
  return s;
}

inline double torus_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt(torus_dist2(a, b));
}

}  // namespace meanfield
