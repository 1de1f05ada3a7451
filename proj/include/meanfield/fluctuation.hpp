#pragma once

#include <Eigen/Dense>
#include <vector>

#include "meanfield/cloud.hpp"
#include "meanfield/particle_dynamics.hpp"
#include "meanfield/stats.hpp"
#include "meanfield/test_space.hpp"

namespace meanfield {

// <cloud, psi> for dictionary members (scalar fast path inside).
double cloud_pairing(const WeightedPointCloud& cloud, const TestFunction& psi);

// Mean and copy-wise standard error of <f_ens(t), psi> for an ensemble
// snapshot (K copies per location).
struct PairingEstimate {
  double value = 0.0;
  double std_error = 0.0;
};
PairingEstimate reference_pairing(const SpatialGrid& grid,
                                  const Eigen::MatrixXd& u, int K,
                                  const TestFunction& psi);

struct FluctuationRecord {
  std::vector<double> times;
  Eigen::MatrixXd pairings;          // times x P, <eta_t, psi_p>
  Eigen::MatrixXd reference;         // times x P, <f(t), psi_p>
  Eigen::MatrixXd reference_stderr;  // times x P
  double C_MN = 0.0;
  bool reference_noisy = false;  // reference noise not << 1/C_MN
};

// <eta_t, psi_p> = C_MN (<f_MN(t), psi_p> - <f(t), psi_p>) at matching
// snapshot times of a run and an independent reference ensemble.
FluctuationRecord fluctuation_pairings(
    const SpatialGrid& run_grid, const std::vector<double>& times,
    const std::vector<Eigen::MatrixXd>& run_snapshots,
    const SpatialGrid& ref_grid,
    const std::vector<Eigen::MatrixXd>& ref_snapshots, int K_ref,
    const std::vector<TestFunction>& members, double C_MN);

struct MartingaleRecord {
  std::vector<double> times;
  Eigen::MatrixXd values;  // times x P, starts at 0
};

// Step observer accumulating the martingale term
//   M_t(psi_p) = (C/(MN)) sum_{i,k,steps<=t} grad_u psi_p . sigma dW
// and, optionally, its quadratic variation
//   QV_t(p,q) += (C^2/(M^2 N^2)) sum_k sum_{i,j} A^p_ik A^q_jk
//                R^eps(x_i - x_j) dt,   A^p_ik = grad psi_p . sigma,
// with the banded correlation table R^eps on the grid.
class FluctuationAccumulator : public StepObserver {
 public:
  FluctuationAccumulator(const SpatialGrid& grid, int M,
                         std::vector<TestFunction> members, double C_MN,
                         double dt, double epsilon, bool accumulate_qv);

  void on_step(int64_t step, double t, const Eigen::MatrixXd& u_before,
               const Eigen::MatrixXd& sigma_vals,
               const Eigen::MatrixXd& dW) override;

  MartingaleRecord martingale() const;
  // Quadratic variation time series; entry s is after step s (P x P).
  const std::vector<Eigen::MatrixXd>& qv_series() const { return qv_; }
  Eigen::MatrixXd qv_final() const;
  const std::vector<double>& step_times() const { return times_; }

 private:
  SpatialGrid grid_;
  int M_;
  std::vector<TestFunction> members_;
  double C_, dt_;
  bool do_qv_;
  // Banded stationary correlation table: for each offset, R value.
  std::vector<std::pair<int, double>> band_;  // (j - i mod N, R)
  std::vector<double> times_;
  std::vector<Eigen::VectorXd> mart_;       // per step, P
  std::vector<Eigen::MatrixXd> qv_;         // per step, P x P
  Eigen::VectorXd mart_acc_;
  Eigen::MatrixXd qv_acc_;
  Eigen::MatrixXd A_;  // scratch, (N*M) x P
};

struct CovarianceEstimate {
  Eigen::MatrixXd Q;         // P x P
  Eigen::MatrixXd Q_stderr;  // P x P
  Eigen::VectorXd mean;      // P, Monte Carlo mean of the pairings
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> g;  // P x P at each time node
  double epsilon = 0.0;
  double clip_magnitude = 0.0;
};

// g_t(p,q) = int_0^t < (grad psi_p sigma)(x,u) (grad psi_q sigma)(y,v)
//                      R^eps(x-y), f^{2,eps} > dr
// from an independent self-consistent ensemble: the joint law over
// locations (x_i, x_j) and shared copy k is exactly the ensemble's
// two-point law. Trapezoid in time over the stored snapshots. Throws if
// the ensemble was built with a different epsilon.
CovarianceEstimate estimate_g(const CoefficientModel& model,
                              const SpatialGrid& grid,
                              const SimulationResult& ensemble, int K,
                              const std::vector<TestFunction>& members,
                              double epsilon);

// Q(p,q) = Cov( int_Q psi_p(x, u_k(x,0)) dx, int_Q psi_q(y, u_k(y,0)) dy )
// by Monte Carlo over n_mc independent copies; spatial integral over the
// location grid.
CovarianceEstimate initial_covariance_Q(const InitialDataSampler& init,
                                        const SpatialGrid& grid,
                                        const std::vector<TestFunction>&
                                            members,
                                        int n_mc, int n_threads = 1);

// Semimartingale residual of one run against a reference ensemble path:
//   r_t = <eta_t,psi> - <eta_0,psi>
//         - sum_{steps r<t} <eta_r, Lin_r(f_MN, f)[psi]> dt - M_t(psi).
// Requires snapshots of both the run and the reference at every step.
std::vector<double> semimartingale_residual(
    const CoefficientModel& model, const SpatialGrid& run_grid,
    const std::vector<Eigen::MatrixXd>& run_steps, const SpatialGrid& ref_grid,
    const std::vector<Eigen::MatrixXd>& ref_steps, const TestFunction& psi,
    double C_MN, double dt, const MartingaleRecord& mart, int member_index);

struct GaussianityReport {
  double ks_statistic = 0.0;
  double p_value = 0.0;
  double variance_ratio = 0.0;     // mean square about 0 over the null Q
  double variance_ratio_p = 0.0;   // one-sided chi-square upper tail
};

// KS test of samples against N(0, Q_psi) plus the mean-square ratio test
// (about the null mean 0, so a deterministic shift inflates it).
GaussianityReport gaussianity_test(const std::vector<double>& samples,
                                   double Q_psi);

}  // namespace meanfield
