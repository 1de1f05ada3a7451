#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "meanfield/cloud.hpp"

namespace meanfield {

// Coefficient structure
//   b(x,t,u,mu)     = b0(x,t,u)     + phi( <mu, b1(x,.,t,u,.)> ) * 1
//   sigma(x,t,u,mu) = sigma0(x,t,u) + phi( <mu, sigma1(x,.,t,u,.)> ) * 1
// with one shared scalar interaction kernel per direction.
struct CoefficientModel {
  std::string name;
  int d = 1;
  int d_v = 1;
  double alpha = 1.0;  // spatial Hoelder exponent

  using Field = std::function<Eigen::VectorXd(
      const Eigen::VectorXd& x, double t, const Eigen::VectorXd& u)>;
  using Kernel = std::function<double(
      const Eigen::VectorXd& x, const Eigen::VectorXd& y, double t,
      const Eigen::VectorXd& u, const Eigen::VectorXd& v)>;

  Field b0, sigma0;
  Kernel b1, sigma1;  // empty std::function means no interaction term
  std::function<double(double)> phi, dphi;

  bool has_b1() const { return static_cast<bool>(b1); }
  bool has_sigma1() const { return static_cast<bool>(sigma1); }

  // Declared regularity constants (audited numerically, not enforced).
  struct Constants {
    double lipschitz = 0.0;  // joint (x^alpha, u, W1^alpha, W1) modulus
    double growth = 0.0;     // |b| / (1 + |u| + int |v| dmu)
    double phi_sup = 0.0, dphi_sup = 0.0;
  };
  Constants declared;

  // Optional separable fast path for the interaction kernels:
  //   kernel(x,y,t,u,v) = sum_r lhs_r(x) * rhs_r(y) * val(v).
  // The measure sum then factors through per-measure feature sums
  //   F_r(mu) = <mu, rhs_r(y) val(v)>, kernel sum = sum_r lhs_r(x) F_r.
  struct Separable {
    std::vector<std::function<double(const Eigen::VectorXd&)>> lhs, rhs;
    std::function<double(const Eigen::VectorXd&)> val;
    int rank() const { return static_cast<int>(lhs.size()); }
  };
  std::optional<Separable> b1_sep, sigma1_sep;

  // Optional structural fast paths for the local parts.
  bool b0_affine = false;  // b0 = b0_lin * u + b0_off(x), per component
  double b0_lin = 0.0;
  std::function<double(const Eigen::VectorXd& x)> b0_off;
  bool sigma0_const = false;
  double sigma0_value = 0.0;
  // True when b1/sigma1 ignore their u argument (all built-ins), letting
  // one inner-integral evaluation serve every particle at a location.
  bool interaction_u_independent = false;
};

// Inner interaction integrals S_b = <mu, b1>, S_sigma = <mu, sigma1>
// before phi is applied.
struct InteractionSums {
  double b1_sum = 0.0;
  double sigma1_sum = 0.0;
};

InteractionSums interaction_sums(const CoefficientModel& model,
                                 const Eigen::VectorXd& x, double t,
                                 const Eigen::VectorXd& u,
                                 const WeightedPointCloud& mu);

// Per-measure separable feature sums F_r (fast path; one evaluation serves
// every particle in a step).
Eigen::VectorXd separable_features(const CoefficientModel::Separable& sep,
                                   const WeightedPointCloud& mu);
double separable_sum(const CoefficientModel::Separable& sep,
                     const Eigen::VectorXd& x,
                     const Eigen::VectorXd& features);

Eigen::VectorXd drift_b(const CoefficientModel& model, const Eigen::VectorXd& x,
                        double t, const Eigen::VectorXd& u,
                        const WeightedPointCloud& mu);
Eigen::VectorXd diffusion_sigma(const CoefficientModel& model,
                                const Eigen::VectorXd& x, double t,
                                const Eigen::VectorXd& u,
                                const WeightedPointCloud& mu);

// Same with precomputed inner integrals (avoids the measure sweep).
Eigen::VectorXd drift_b(const CoefficientModel& model, const Eigen::VectorXd& x,
                        double t, const Eigen::VectorXd& u,
                        const InteractionSums& sums);
Eigen::VectorXd diffusion_sigma(const CoefficientModel& model,
                                const Eigen::VectorXd& x, double t,
                                const Eigen::VectorXd& u,
                                const InteractionSums& sums);

// alpha-Hoelder spatial profile |sin(pi x)|^alpha.
double holder_profile(double x, double alpha);

struct LinrelaxParams {
  double alpha = 0.5;    // Hoelder exponent
  double c_b = 1.0;      // local drift spatial amplitude
  double s0 = 0.5;       // constant local diffusion
  double kappa = 0.5;    // diffusion interaction amplitude
  double amp_b = 1.0;    // drift interaction amplitude
  double a0 = 0.0;       // constant spatial mode of the drift kernel
  int lacunary_depth = 1;  // modes 2^m, m < J, weights 2^(-alpha m)
  int d = 1;
  int d_v = 1;
};

// Built-in relaxation model with genuine measure coupling:
//   b0 = -u + 1 + c_b |sin(pi x)|^alpha, sigma0 = s0,
//   b1 = amp_b (a0 + sum_{m<J} 2^(-alpha m) cos(2 pi 2^m (x-y))) r(vbar),
//   sigma1 = kappa cos(2 pi (x-y)) / (1 + vbar^2),  phi = tanh,
// with r(z) = z/(1+z^2) and vbar the mean of v's components. J = 1, a0 = 0,
// amp_b = 1 gives the plain single-cosine kernel.
CoefficientModel make_linrelax(const LinrelaxParams& params = {});

// b1 = sigma1 = 0: no interaction, exact zero-test for the coupled solver.
CoefficientModel make_decoupled(double s0 = 0.5, int d = 1, int d_v = 1);

struct AuditReport {
  double max_lipschitz_ratio_b = 0.0, max_lipschitz_ratio_sigma = 0.0;
  double max_growth_ratio_b = 0.0, max_growth_ratio_sigma = 0.0;
  bool lipschitz_violation = false, growth_violation = false;
  int n_samples = 0;
};

// Samples random (x,x',u,u',mu,mu') tuples and reports the largest observed
// modulus-of-continuity and growth ratios against the declared constants.
AuditReport audit_regularity(const CoefficientModel& model, int n_samples,
                             uint64_t rng_seed);

}  // namespace meanfield
