#pragma once

#include <Eigen/Dense>
#include <vector>

#include "meanfield/cloud.hpp"
#include "meanfield/model_coefficients.hpp"

namespace meanfield {

// Spatial factor g on the torus Q: constant 1 or a normalized Fourier mode
// sqrt(2) cos(2 pi m x_1) / sqrt(2) sin(2 pi m x_1) (first coordinate),
// so that int_Q g_a g_b dx = delta_ab.
struct SpatialFactor {
  enum class Kind { Const, Cos, Sin };
  Kind kind = Kind::Const;
  int mode = 0;  // m >= 1 for Cos/Sin

  double operator()(const Eigen::VectorXd& x) const { return eval(x[0]); }
  double eval(double x1) const;
  double overlap(const SpatialFactor& o) const;  // int_Q g g' dx
};

// Value factor h(u) = q^b exp(-q/(2 s^2)) with q = |u|^2: even in every
// coordinate, so the normal derivative vanishes on the boundary of the
// orthant (structural no-flux).
struct ValueFactor {
  int b = 0;
  double s = 1.0;

  // Radial profile G and derivatives in q.
  double G(double q) const;
  double Gp(double q) const;
  double Gpp(double q) const;

  double value(const Eigen::VectorXd& u) const { return G(u.squaredNorm()); }
  Eigen::VectorXd grad(const Eigen::VectorXd& u) const;
  Eigen::MatrixXd hess(const Eigen::VectorXd& u) const;
};

struct TestFunction {
  SpatialFactor g;
  ValueFactor h;

  double value(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    return g(x) * h.value(u);
  }
  Eigen::VectorXd grad_u(const Eigen::VectorXd& x,
                         const Eigen::VectorXd& u) const {
    return g(x) * h.grad(u);
  }
  Eigen::MatrixXd hess_u(const Eigen::VectorXd& x,
                         const Eigen::VectorXd& u) const {
    return g(x) * h.hess(u);
  }

  // Scalar fast path for d = d_v = 1 hot loops.
  double value1(double x1, double u1) const { return g.eval(x1) * h.G(u1 * u1); }
  double grad1(double x1, double u1) const {
    return g.eval(x1) * 2.0 * h.Gp(u1 * u1) * u1;
  }
};

// Derivative tensor evaluators ("evaluation operators"): j = 0 value,
// j = 1 gradient, j = 2 Hessian, flattened row-major into a vector.
Eigen::VectorXd eval_V(int j, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& u, const TestFunction& psi);

struct TestFunctionDictionary {
  std::vector<TestFunction> members;
  int d = 1, d_v = 1;

  // Exponent bookkeeping stored as metadata (only theta weights are used
  // in computations; orders beyond 2 are never evaluated).
  double kappa1 = 0, kappa2 = 0, theta1 = 0, theta2 = 0, e_alpha = 0;

  int norm_k = 0;
  double norm_theta = 0.0;
  Eigen::MatrixXd gram;   // under (norm_k, norm_theta)
  Eigen::MatrixXd ortho;  // ortho^T gram ortho = I (symmetric inv. sqrt)

  int size() const { return static_cast<int>(members.size()); }

  // Value of the j-th orthonormalized member at (x,u).
  double eval_ortho(int j, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& u) const;
};

// Members are all products of the first P_x spatial factors (constant, then
// cos/sin of modes 1, 2, ...) with P_u value factors (b cycling 0,1,2 over
// the given scales).
TestFunctionDictionary build_dictionary(int d, int d_v, int P_x, int P_u,
                                        const std::vector<double>& scales = {
                                            1.0},
                                        double alpha = 0.5,
                                        int norm_k = 0,
                                        double norm_theta = 0.0);

// Weighted Sobolev quadrature inner product
//   sum_{j<=k} int_{R_+^{d_v}} (D^j h_p . D^j h_q) / (1+|u|^{2 theta}) du
// times the exact spatial overlap int_Q g_p g_q dx.
double weighted_inner(const TestFunction& a, const TestFunction& b, int k,
                      double theta, int d_v);
double weighted_norm(const TestFunction& psi, int k, double theta, int d_v);

// Generator application
//   L_t(mu)[psi](x,u) = grad_u psi . b(x,t,u,mu)
//                       + 1/2 sum_beta d^2_bb psi sigma_beta(x,t,u,mu)^2.
double apply_L(const CoefficientModel& model, const WeightedPointCloud& mu,
               double t, const TestFunction& psi, const Eigen::VectorXd& x,
               const Eigen::VectorXd& u);

// Chord average of dphi: int_0^1 dphi(lambda p + (1-lambda) q) dlambda by
// fixed 16-point Gauss-Legendre quadrature.
double chord_dphi(const CoefficientModel& model, double p, double q);

// Exact linearization of the measure dependence:
//   <mu, L(mu) psi> - <nu, L(nu) psi> = <mu - nu, Lin(mu,nu) psi>
// with
//   Lin(mu,nu)[psi](y,v) = L(mu)[psi](y,v)
//     + sum_a nu_a { (sum_b d_b psi)(x_a,u_a) b1(x_a,y,t,u_a,v)
//                      chord_dphi(B_a(mu), B_a(nu))
//       + 1/2 sum_b d^2_bb psi(x_a,u_a)
//             (2 sigma0_b(x_a,u_a) + phi(S_a(mu)) + phi(S_a(nu)))
//             sigma1(x_a,y,t,u_a,v) chord_dphi(S_a(mu), S_a(nu)) },
// where B_a, S_a are the inner interaction integrals at atom a of nu.
class LinearizedGenerator {
 public:
  LinearizedGenerator(const CoefficientModel& model,
                      const WeightedPointCloud& mu,
                      const WeightedPointCloud& nu, double t,
                      const TestFunction& psi);

  double operator()(const Eigen::VectorXd& y, const Eigen::VectorXd& v) const;

 private:
  const CoefficientModel* model_;
  const WeightedPointCloud* mu_;
  double t_;
  const TestFunction* psi_;

  // Per-atom precomputation over nu (the correction sum).
  struct AtomData {
    Eigen::VectorXd x, u;
    double weight;
    double grad_sum;                 // sum_b d_b psi at the atom
    Eigen::VectorXd hess_diag;      // d^2_bb psi at the atom
    Eigen::VectorXd sigma0;         // sigma0_b at the atom
    double chord_b, chord_s;        // chord dphi values
    double phi_s_mu, phi_s_nu;      // phi at the sigma inner integrals
  };
  std::vector<AtomData> atoms_;

  // Separable collapse: correction(y,v) = val_b(v) sum_r cb_r rhs_b_r(y)
  //                                     + val_s(v) sum_r cs_r rhs_s_r(y).
  bool separable_ = false;
  Eigen::VectorXd coef_b_, coef_s_;
  // Features of mu for the O(rank) evaluation of the L(mu) part.
  Eigen::VectorXd fb_mu_, fs_mu_;

  double l_part(const Eigen::VectorXd& y, const Eigen::VectorXd& v) const;
};

double apply_linearized_L(const CoefficientModel& model,
                          const WeightedPointCloud& mu,
                          const WeightedPointCloud& nu, double t,
                          const TestFunction& psi, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& v);

}  // namespace meanfield
