#include "meanfield/langevin_spde.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

#include "meanfield/counter_rng.hpp"

namespace meanfield {

namespace {

// Interpolate a matrix-valued node sequence linearly in t, clamping
// outside the node range.
Eigen::MatrixXd interp_nodes(const std::vector<double>& times,
                             const std::vector<Eigen::MatrixXd>& nodes,
                             double t) {
  if (nodes.empty()) throw std::runtime_error("no nodes to interpolate");
  if (nodes.size() != times.size())
    throw std::runtime_error("node/time count mismatch");
  if (t <= times.front()) return nodes.front();
  if (t >= times.back()) return nodes.back();
  size_t j = 1;
  while (j + 1 < times.size() && times[j] < t) ++j;
  double t0 = times[j - 1], t1 = times[j];
  double w = (t - t0) / (t1 - t0);
  return (1.0 - w) * nodes[j - 1] + w * nodes[j];
}

// Symmetrize and clip negative eigenvalues to zero; returns the clipped
// eigenvalue mass (sum of |negative part|).
double psd_clip(Eigen::MatrixXd& m) {
  Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd ev = es.eigenvalues();
  double clipped = 0.0;
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < 0.0) {
      clipped += -ev[i];
      ev[i] = 0.0;
    }
  }
  m = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return clipped;
}

// PSD square-root factor (columns scaled eigenvectors).
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 *
                                                    (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  double emax = ev.size() ? std::max(0.0, ev.maxCoeff()) : 0.0;
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10 * std::max(emax, 1.0))
      throw std::runtime_error("covariance not positive semidefinite");
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal();
}

double spectral_radius(const Eigen::MatrixXd& a) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

Eigen::MatrixXd GalerkinSystem::A_at(double t) const {
  return interp_nodes(times, A, t);
}

Eigen::MatrixXd GalerkinSystem::C_at(double t) const {
  return interp_nodes(times, C, t);
}

GalerkinSystem assemble_galerkin(const CoefficientModel& model,
                                 const SpatialGrid& grid,
                                 const SimulationResult& ensemble, int K,
                                 const TestFunctionDictionary& dict) {
  const int P = dict.size();
  if (P == 0) throw std::invalid_argument("empty dictionary");
  if (ensemble.snapshots_u.empty())
    throw std::invalid_argument("ensemble has no snapshots");
  const int n_atoms = grid.N * K;
  if (ensemble.snapshots_u.front().rows() != n_atoms)
    throw std::invalid_argument("ensemble snapshot size does not match N*K");

  GalerkinSystem sys;
  sys.P = P;
  sys.times = ensemble.snapshot_times;
  sys.Q0 = Eigen::MatrixXd::Zero(P, P);
  sys.residuals =
      Eigen::MatrixXd::Zero(static_cast<int>(sys.times.size()), P);

  const double w = 1.0 / n_atoms;
  for (size_t s = 0; s < ensemble.snapshots_u.size(); ++s) {
    const double t = ensemble.snapshot_times[s];
    const Eigen::MatrixXd& u = ensemble.snapshots_u[s];
    WeightedPointCloud cloud = snapshot_cloud(grid, u);

    // Raw member values and linearized-generator values at the atoms.
    Eigen::MatrixXd V(n_atoms, P), L(n_atoms, P);
    for (int q = 0; q < P; ++q) {
      LinearizedGenerator lin(model, cloud, cloud, t, dict.members[q]);
      for (int a = 0; a < n_atoms; ++a) {
        const int i = a / K;
        Eigen::VectorXd x = grid.centers.row(i).transpose();
        Eigen::VectorXd v = u.row(a).transpose();
        V(a, q) = dict.members[q].value(x, v);
        L(a, q) = lin(x, v);
      }
    }
    // Orthonormalized columns.
    Eigen::MatrixXd Vt = V * dict.ortho;
    Eigen::MatrixXd Lt = L * dict.ortho;

    Eigen::MatrixXd gram = w * (Vt.transpose() * Vt);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    double emin = es.eigenvalues().minCoeff();
    double emax = es.eigenvalues().maxCoeff();
    if (!(emin > 0.0) || emax / emin > 1e10)
      throw std::runtime_error(
          "empirical Gram matrix ill-conditioned; enlarge the ensemble or "
          "shrink the dictionary");
    Eigen::MatrixXd rhs = w * (Vt.transpose() * Lt);
    Eigen::MatrixXd A = gram.ldlt().solve(rhs);

    for (int q = 0; q < P; ++q) {
      Eigen::VectorXd res = Lt.col(q) - Vt * A.col(q);
      sys.residuals(static_cast<int>(s), q) =
          std::sqrt(w * res.squaredNorm());
    }
    sys.A.push_back(std::move(A));
  }
  return sys;
}

void set_noise_covariance(GalerkinSystem& sys, const CovarianceEstimate& g_est,
                          const TestFunctionDictionary& dict) {
  const size_t n = g_est.times.size();
  if (n < 2) throw std::invalid_argument("need at least two g(t) nodes");
  if (g_est.g.size() != n)
    throw std::invalid_argument("g node/time count mismatch");
  if (sys.times.size() != n)
    throw std::invalid_argument("g(t) nodes do not match the system nodes");
  for (size_t j = 0; j < n; ++j) {
    if (std::abs(sys.times[j] - g_est.times[j]) > 1e-9)
      throw std::invalid_argument("g(t) nodes do not match the system nodes");
  }

  std::vector<Eigen::MatrixXd> gt(n);
  for (size_t j = 0; j < n; ++j)
    gt[j] = dict.ortho.transpose() * g_est.g[j] * dict.ortho;

  sys.C.clear();
  sys.clip_C = 0.0;
  for (size_t j = 0; j < n; ++j) {
    Eigen::MatrixXd c;
    if (j == 0) {
      c = (gt[1] - gt[0]) / (g_est.times[1] - g_est.times[0]);
    } else if (j + 1 == n) {
      c = (gt[n - 1] - gt[n - 2]) /
          (g_est.times[n - 1] - g_est.times[n - 2]);
    } else {
      c = (gt[j + 1] - gt[j - 1]) /
          (g_est.times[j + 1] - g_est.times[j - 1]);
    }
    sys.clip_C += psd_clip(c);
    sys.C.push_back(std::move(c));
  }
}

void set_initial_covariance(GalerkinSystem& sys, const Eigen::MatrixXd& Q_raw,
                            const TestFunctionDictionary& dict) {
  if (Q_raw.rows() != dict.size() || Q_raw.cols() != dict.size())
    throw std::invalid_argument("Q size does not match the dictionary");
  Eigen::MatrixXd q = dict.ortho.transpose() * Q_raw * dict.ortho;
  sys.clip_Q0 = psd_clip(q);
  sys.Q0 = std::move(q);
}

Eigen::MatrixXd simulate_spde(const GalerkinSystem& sys, double T, double dt,
                              int n_paths, uint64_t seed) {
  const int P = sys.P;
  if (P <= 0) throw std::invalid_argument("system not assembled");
  if (sys.A.empty() || sys.C.empty())
    throw std::invalid_argument("drift or noise nodes missing");
  const int n_steps = n_steps_for(T, dt);

  double rad = 0.0;
  for (const auto& a : sys.A) rad = std::max(rad, spectral_radius(a));
  if (dt * rad >= 0.1)
    throw std::invalid_argument(
        "time step too large for the drift spectral radius");

  Eigen::MatrixXd Lq0 = psd_factor(sys.Q0);
  std::vector<Eigen::MatrixXd> At(n_steps), Lc(n_steps);
  for (int s = 0; s < n_steps; ++s) {
    double t = s * dt;
    At[s] = sys.A_at(t).transpose();
    Lc[s] = psd_factor(sys.C_at(t));
  }

  CounterKey base = CounterKey(seed).with(0x73706465ULL);  // path tag
  Eigen::MatrixXd out(n_paths, P);
  Eigen::VectorXd y(P), xi(P);
  const double sdt = std::sqrt(dt);
  for (int path = 0; path < n_paths; ++path) {
    CounterKey key = base.with(static_cast<uint64_t>(path));
    for (int p = 0; p < P; ++p)
      xi[p] = counter_gauss(key, static_cast<uint64_t>(p));
    y = Lq0 * xi;
    for (int s = 0; s < n_steps; ++s) {
      uint64_t off = static_cast<uint64_t>(s + 1) * P;
      for (int p = 0; p < P; ++p)
        xi[p] = counter_gauss(key, off + static_cast<uint64_t>(p));
      y += dt * (At[s] * y) + sdt * (Lc[s] * xi);
    }
    out.row(path) = y.transpose();
  }
  return out;
}

std::vector<Eigen::MatrixXd> covariance_ode(const GalerkinSystem& sys,
                                            double T, double dt) {
  if (sys.P <= 0) throw std::invalid_argument("system not assembled");
  if (sys.A.empty() || sys.C.empty())
    throw std::invalid_argument("drift or noise nodes missing");
  const int n_steps = n_steps_for(T, dt);

  auto rate = [&](double t, const Eigen::MatrixXd& sig) -> Eigen::MatrixXd {
    Eigen::MatrixXd a = sys.A_at(t);
    return a.transpose() * sig + sig * a + sys.C_at(t);
  };

  std::vector<Eigen::MatrixXd> out;
  out.reserve(n_steps + 1);
  Eigen::MatrixXd sig = sys.Q0;
  out.push_back(sig);
  for (int s = 0; s < n_steps; ++s) {
    double t = s * dt;
    Eigen::MatrixXd k1 = rate(t, sig);
    Eigen::MatrixXd k2 = rate(t + 0.5 * dt, sig + 0.5 * dt * k1);
    Eigen::MatrixXd k3 = rate(t + 0.5 * dt, sig + 0.5 * dt * k2);
    Eigen::MatrixXd k4 = rate(t + dt, sig + dt * k3);
    sig += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    sig = 0.5 * (sig + sig.transpose()).eval();
    out.push_back(sig);
  }
  return out;
}

}  // namespace meanfield
