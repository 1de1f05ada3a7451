#include "meanfield/fluctuation.hpp"

#include <cmath>
#include <stdexcept>

#include "meanfield/noise_field.hpp"
#include "meanfield/thread_pool.hpp"
#include "meanfield/torus.hpp"
#include "meanfield/transport.hpp"

namespace meanfield {

double cloud_pairing(const WeightedPointCloud& cloud, const TestFunction& psi) {
  double s = 0.0;
  if (cloud.dim_u() == 1) {
    for (Eigen::Index i = 0; i < cloud.size(); ++i)
      s += cloud.w[i] * psi.value1(cloud.x(i, 0), cloud.u(i, 0));
  } else {
    for (Eigen::Index i = 0; i < cloud.size(); ++i)
      s += cloud.w[i] * psi.value(cloud.x.row(i).transpose(),
                                  cloud.u.row(i).transpose());
  }
  return s;
}

PairingEstimate reference_pairing(const SpatialGrid& grid,
                                  const Eigen::MatrixXd& u, int K,
                                  const TestFunction& psi) {
  const int N = grid.N;
  if (u.rows() != static_cast<Eigen::Index>(N) * K)
    throw std::invalid_argument("reference_pairing: u shape mismatch");
  // Per-copy spatial means are i.i.d. across copies.
  Eigen::VectorXd per_copy = Eigen::VectorXd::Zero(K);
  for (int i = 0; i < N; ++i) {
    double x1 = grid.centers(i, 0);
    for (int k = 0; k < K; ++k) {
      double v = (u.cols() == 1)
                     ? psi.value1(x1, u(static_cast<Eigen::Index>(i) * K + k,
                                        0))
                     : psi.value(grid.centers.row(i).transpose(),
                                 u.row(static_cast<Eigen::Index>(i) * K + k)
                                     .transpose());
      per_copy[k] += v;
    }
  }
  per_copy /= static_cast<double>(N);
  PairingEstimate e;
  e.value = per_copy.mean();
  if (K > 1) {
    double var = (per_copy.array() - e.value).square().sum() / (K - 1);
    e.std_error = std::sqrt(var / K);
  }
  return e;
}

FluctuationRecord fluctuation_pairings(
    const SpatialGrid& run_grid, const std::vector<double>& times,
    const std::vector<Eigen::MatrixXd>& run_snapshots,
    const SpatialGrid& ref_grid,
    const std::vector<Eigen::MatrixXd>& ref_snapshots, int K_ref,
    const std::vector<TestFunction>& members, double C_MN) {
  if (run_snapshots.size() != times.size() ||
      ref_snapshots.size() != times.size())
    throw std::invalid_argument("fluctuation_pairings: snapshot count");
  const int P = static_cast<int>(members.size());
  const int T = static_cast<int>(times.size());
  FluctuationRecord rec;
  rec.times = times;
  rec.C_MN = C_MN;
  rec.pairings.resize(T, P);
  rec.reference.resize(T, P);
  rec.reference_stderr.resize(T, P);
  for (int s = 0; s < T; ++s) {
    WeightedPointCloud run_cloud = snapshot_cloud(run_grid, run_snapshots[s]);
    for (int p = 0; p < P; ++p) {
      PairingEstimate ref =
          reference_pairing(ref_grid, ref_snapshots[s], K_ref, members[p]);
      rec.reference(s, p) = ref.value;
      rec.reference_stderr(s, p) = ref.std_error;
      rec.pairings(s, p) =
          C_MN * (cloud_pairing(run_cloud, members[p]) - ref.value);
    }
  }
  double rms = std::sqrt(rec.pairings.array().square().mean());
  double noise = C_MN * rec.reference_stderr.mean();
  rec.reference_noisy = noise > 0.3 * std::max(rms, 1e-12);
  return rec;
}

FluctuationAccumulator::FluctuationAccumulator(
    const SpatialGrid& grid, int M, std::vector<TestFunction> members,
    double C_MN, double dt, double epsilon, bool accumulate_qv)
    : grid_(grid),
      M_(M),
      members_(std::move(members)),
      C_(C_MN),
      dt_(dt),
      do_qv_(accumulate_qv) {
  const int P = static_cast<int>(members_.size());
  mart_acc_ = Eigen::VectorXd::Zero(P);
  qv_acc_ = Eigen::MatrixXd::Zero(P, P);
  A_.resize(static_cast<Eigen::Index>(grid.N) * M, P);
  if (do_qv_) {
    // Stationary banded table of R^eps offsets (d = 1 equispaced torus
    // grid; exact zeros beyond 2 eps are dropped).
    if (grid.d != 1)
      throw std::invalid_argument(
          "FluctuationAccumulator: QV table needs a 1-d grid");
    for (int off = 0; off < grid.N; ++off) {
      double dx = torus_delta(grid.centers(off, 0), grid.centers(0, 0));
      double r = correlation_R_1d(dx, epsilon);
      if (r != 0.0) band_.emplace_back(off, r);
    }
  }
}

void FluctuationAccumulator::on_step(int64_t, double t,
                                     const Eigen::MatrixXd& u_before,
                                     const Eigen::MatrixXd& sigma_vals,
                                     const Eigen::MatrixXd& dW) {
  const int P = static_cast<int>(members_.size());
  const int N = grid_.N, d_v = static_cast<int>(u_before.cols());
  const double inv_mn = 1.0 / (static_cast<double>(N) * M_);

  for (int p = 0; p < P; ++p) {
    const TestFunction& psi = members_[p];
    double mart_inc = 0.0;
    if (d_v == 1) {
      for (int i = 0; i < N; ++i) {
        double x1 = grid_.centers(i, 0);
        for (int k = 0; k < M_; ++k) {
          Eigen::Index row = static_cast<Eigen::Index>(i) * M_ + k;
          double gs = psi.grad1(x1, u_before(row, 0)) * sigma_vals(row, 0);
          A_(row, p) = gs;
          mart_inc += gs * dW(row, 0);
        }
      }
    } else {
      Eigen::VectorXd x(grid_.d), u(d_v), grad(d_v);
      for (int i = 0; i < N; ++i) {
        x = grid_.centers.row(i).transpose();
        for (int k = 0; k < M_; ++k) {
          Eigen::Index row = static_cast<Eigen::Index>(i) * M_ + k;
          u = u_before.row(row).transpose();
          grad = psi.grad_u(x, u);
          double a = 0.0;
          for (int beta = 0; beta < d_v; ++beta) {
            double gsb = grad[beta] * sigma_vals(row, beta);
            a += gsb;
            mart_inc += gsb * dW(row, beta);
          }
          A_(row, p) = a;
        }
      }
    }
    mart_acc_[p] += C_ * inv_mn * mart_inc;
  }

  if (do_qv_) {
    // B_q(i,:) = sum_j R_{ij} A_q(j,:) via the stationary offset table.
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(A_.rows(), P);
    for (const auto& [off, r] : band_) {
      for (int i = 0; i < N; ++i) {
        int j = i + off;
        if (j >= N) j -= N;
        B.middleRows(static_cast<Eigen::Index>(i) * M_, M_) +=
            r * A_.middleRows(static_cast<Eigen::Index>(j) * M_, M_);
      }
    }
    double scale = C_ * C_ * dt_ /
                   (static_cast<double>(M_) * M_ * N * N);
    for (int p = 0; p < P; ++p)
      for (int q = p; q < P; ++q) {
        double v = scale * A_.col(p).dot(B.col(q));
        qv_acc_(p, q) += v;
        if (q != p) qv_acc_(q, p) += v;
      }
  }
  times_.push_back(t + dt_);
  mart_.push_back(mart_acc_);
  if (do_qv_) qv_.push_back(qv_acc_);
}

MartingaleRecord FluctuationAccumulator::martingale() const {
  MartingaleRecord rec;
  const int P = static_cast<int>(members_.size());
  rec.times.push_back(0.0);
  for (double t : times_) rec.times.push_back(t);
  rec.values.resize(times_.size() + 1, P);
  rec.values.row(0).setZero();
  for (size_t s = 0; s < mart_.size(); ++s)
    rec.values.row(s + 1) = mart_[s].transpose();
  return rec;
}

Eigen::MatrixXd FluctuationAccumulator::qv_final() const {
  if (qv_.empty())
    return Eigen::MatrixXd::Zero(members_.size(), members_.size());
  return qv_.back();
}

CovarianceEstimate estimate_g(const CoefficientModel& model,
                              const SpatialGrid& grid,
                              const SimulationResult& ensemble, int K,
                              const std::vector<TestFunction>& members,
                              double epsilon) {
  if (std::abs(ensemble.epsilon - epsilon) > 1e-12)
    throw std::invalid_argument(
        "estimate_g: ensemble built with a different epsilon");
  if (grid.d != 1)
    throw std::invalid_argument("estimate_g: needs a 1-d grid");
  const int P = static_cast<int>(members.size());
  const int N = grid.N;
  const int S = static_cast<int>(ensemble.snapshot_times.size());
  if (S < 2)
    throw std::invalid_argument("estimate_g: need >= 2 snapshots");

  std::vector<std::pair<int, double>> band;
  for (int off = 0; off < N; ++off) {
    double dx = torus_delta(grid.centers(off, 0), grid.centers(0, 0));
    double r = correlation_R_1d(dx, epsilon);
    if (r != 0.0) band.emplace_back(off, r);
  }

  // Integrand G(t)(p,q) at each snapshot.
  std::vector<Eigen::MatrixXd> G(S);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(N) * K, P);
  for (int s = 0; s < S; ++s) {
    const Eigen::MatrixXd& u = ensemble.snapshots_u[s];
    Eigen::MatrixXd sig =
        sigma_field(model, grid, u, ensemble.snapshot_times[s]);
    const int d_v = static_cast<int>(u.cols());
    for (int p = 0; p < P; ++p) {
      for (int i = 0; i < N; ++i) {
        double x1 = grid.centers(i, 0);
        for (int k = 0; k < K; ++k) {
          Eigen::Index row = static_cast<Eigen::Index>(i) * K + k;
          if (d_v == 1) {
            A(row, p) = members[p].grad1(x1, u(row, 0)) * sig(row, 0);
          } else {
            Eigen::VectorXd grad = members[p].grad_u(
                grid.centers.row(i).transpose(), u.row(row).transpose());
            double a = 0.0;
            for (int beta = 0; beta < d_v; ++beta)
              a += grad[beta] * sig(row, beta);
            A(row, p) = a;
          }
        }
      }
    }
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(A.rows(), P);
    for (const auto& [off, r] : band)
      for (int i = 0; i < N; ++i) {
        int j = i + off;
        if (j >= N) j -= N;
        B.middleRows(static_cast<Eigen::Index>(i) * K, K) +=
            r * A.middleRows(static_cast<Eigen::Index>(j) * K, K);
      }
    double scale = 1.0 / (static_cast<double>(N) * N * K);
    G[s].resize(P, P);
    for (int p = 0; p < P; ++p)
      for (int q = p; q < P; ++q) {
        double v = scale * A.col(p).dot(B.col(q));
        G[s](p, q) = v;
        G[s](q, p) = v;
      }
  }

  CovarianceEstimate est;
  est.epsilon = epsilon;
  est.times = ensemble.snapshot_times;
  est.g.resize(S);
  est.g[0] = Eigen::MatrixXd::Zero(P, P);
  for (int s = 1; s < S; ++s) {
    double h = est.times[s] - est.times[s - 1];
    est.g[s] = est.g[s - 1] + 0.5 * h * (G[s] + G[s - 1]);
  }
  est.Q = Eigen::MatrixXd::Zero(P, P);
  est.Q_stderr = Eigen::MatrixXd::Zero(P, P);
  return est;
}

CovarianceEstimate initial_covariance_Q(
    const InitialDataSampler& init, const SpatialGrid& grid,
    const std::vector<TestFunction>& members, int n_mc, int n_threads) {
  if (n_mc < 1000)
    throw std::invalid_argument("initial_covariance_Q: n_mc >= 1000");
  const int P = static_cast<int>(members.size());
  const int N = grid.N;
  Eigen::MatrixXd Y(n_mc, P);
  parallel_for(n_mc, n_threads, [&](int64_t k) {
    for (int p = 0; p < P; ++p) Y(k, p) = 0.0;
    for (int i = 0; i < N; ++i) {
      Eigen::VectorXd x = grid.centers.row(i).transpose();
      Eigen::VectorXd u = init.sample(x, k);
      for (int p = 0; p < P; ++p) Y(k, p) += members[p].value(x, u);
    }
    Y.row(k) /= static_cast<double>(N);
  });
  Eigen::RowVectorXd mean = Y.colwise().mean();
  Eigen::MatrixXd centered = Y.rowwise() - mean;

  CovarianceEstimate est;
  est.mean = mean.transpose();
  est.Q.resize(P, P);
  est.Q_stderr.resize(P, P);
  for (int p = 0; p < P; ++p)
    for (int q = p; q < P; ++q) {
      Eigen::ArrayXd z =
          centered.col(p).array() * centered.col(q).array();
      double cov = z.sum() / (n_mc - 1);
      double var_z = (z - z.mean()).square().sum() / (n_mc - 1);
      double se = std::sqrt(var_z / n_mc);
      est.Q(p, q) = cov;
      est.Q(q, p) = cov;
      est.Q_stderr(p, q) = se;
      est.Q_stderr(q, p) = se;
    }
  // PSD clip, reporting the magnitude.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(est.Q);
  Eigen::VectorXd ev = es.eigenvalues();
  double clipped = 0.0;
  for (int i = 0; i < P; ++i)
    if (ev[i] < 0.0) {
      clipped += -ev[i];
      ev[i] = 0.0;
    }
  if (clipped > 0.0)
    est.Q = es.eigenvectors() * ev.asDiagonal() *
            es.eigenvectors().transpose();
  est.clip_magnitude = clipped;
  return est;
}

std::vector<double> semimartingale_residual(
    const CoefficientModel& model, const SpatialGrid& run_grid,
    const std::vector<Eigen::MatrixXd>& run_steps, const SpatialGrid& ref_grid,
    const std::vector<Eigen::MatrixXd>& ref_steps, const TestFunction& psi,
    double C_MN, double dt, const MartingaleRecord& mart, int member_index) {
  const size_t n = run_steps.size();
  if (ref_steps.size() != n || n == 0)
    throw std::invalid_argument("semimartingale_residual: step count");
  if (mart.values.rows() != static_cast<Eigen::Index>(n))
    throw std::invalid_argument(
        "semimartingale_residual: martingale record length");

  auto eta = [&](size_t s) {
    return C_MN * (cloud_pairing(snapshot_cloud(run_grid, run_steps[s]), psi) -
                   cloud_pairing(snapshot_cloud(ref_grid, ref_steps[s]), psi));
  };

  std::vector<double> residual(n);
  residual[0] = 0.0;
  double eta0 = eta(0);
  double drift_sum = 0.0;
  for (size_t s = 1; s < n; ++s) {
    // Drift term uses the start-of-step measures (Ito convention).
    size_t r = s - 1;
    WeightedPointCloud mu = snapshot_cloud(run_grid, run_steps[r]);
    WeightedPointCloud nu = snapshot_cloud(ref_grid, ref_steps[r]);
    LinearizedGenerator lin(model, mu, nu, r * dt, psi);
    double pair_mu = 0.0, pair_nu = 0.0;
    for (Eigen::Index a = 0; a < mu.size(); ++a)
      pair_mu += mu.w[a] * lin(mu.x.row(a).transpose(),
                               mu.u.row(a).transpose());
    for (Eigen::Index a = 0; a < nu.size(); ++a)
      pair_nu += nu.w[a] * lin(nu.x.row(a).transpose(),
                               nu.u.row(a).transpose());
    drift_sum += C_MN * (pair_mu - pair_nu) * dt;
    residual[s] = eta(s) - eta0 - drift_sum - mart.values(s, member_index);
  }
  return residual;
}

GaussianityReport gaussianity_test(const std::vector<double>& samples,
                                   double Q_psi) {
  if (samples.size() < 2 || Q_psi <= 0.0)
    throw std::invalid_argument("gaussianity_test: bad inputs");
  GaussianityReport rep;
  KsResult ks = ks_test_normal(samples, 0.0, std::sqrt(Q_psi));
  rep.ks_statistic = ks.statistic;
  rep.p_value = ks.p_value;
  double ss = 0.0;
  for (double x : samples) ss += x * x;
  rep.variance_ratio = ss / (samples.size() * Q_psi);
  rep.variance_ratio_p =
      chi_square_sf(ss / Q_psi, static_cast<double>(samples.size()));
  return rep;
}

}  // namespace meanfield
