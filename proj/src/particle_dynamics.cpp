#include "meanfield/particle_dynamics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "meanfield/counter_rng.hpp"
#include "meanfield/thread_pool.hpp"
#include "meanfield/transport.hpp"

namespace meanfield {

SpatialGrid SpatialGrid::regular(int cells_per_dim, int d) {
  if (cells_per_dim < 1 || d < 1)
    throw std::invalid_argument("SpatialGrid: sizes must be positive");
  SpatialGrid g;
  g.d = d;
  g.N = 1;
  for (int k = 0; k < d; ++k) g.N *= cells_per_dim;
  g.centers.resize(g.N, d);
  for (int i = 0; i < g.N; ++i) {
    int rem = i;
    for (int k = 0; k < d; ++k) {
      g.centers(i, k) = (rem % cells_per_dim + 0.5) / cells_per_dim;
      rem /= cells_per_dim;
    }
  }
  return g;
}

SpatialGrid SpatialGrid::with_columns(int N, int d) {
  int m = static_cast<int>(std::round(std::pow(static_cast<double>(N),
                                               1.0 / d)));
  int check = 1;
  for (int k = 0; k < d; ++k) check *= m;
  if (check != N)
    throw std::invalid_argument(
        "SpatialGrid: N must be a perfect d-th power");
  return regular(m, d);
}

double rough_profile(double x, double alpha, int depth) {
  double sum = 0.0, norm = 0.0;
  double freq = 2.0 * std::numbers::pi;
  double amp = 1.0;
  double decay = std::pow(2.0, -alpha);
  for (int m = 0; m < depth; ++m) {
    sum += amp * std::cos(freq * x);
    norm += amp;
    amp *= decay;
    freq *= 2.0;
  }
  return sum / norm;
}

Eigen::VectorXd InitialDataSampler::sample(const Eigen::VectorXd& x,
                                           int64_t copy) const {
  CounterKey key = CounterKey(seed)
                       .with(0x696e6974ULL)  // "init"
                       .with(stream)
                       .with(static_cast<uint64_t>(copy));
  double profile = 1.0 + c * rough_profile(x[0], alpha, profile_depth);
  profile = std::max(profile, 0.0);
  Eigen::VectorXd u(d_v);
  for (int beta = 0; beta < d_v; ++beta) {
    double xi0 = counter_gauss(key, 2 * beta);
    double xi1 = counter_gauss(key, 2 * beta + 1);
    u[beta] = std::abs(xi0) * profile + std::abs(xi1);
  }
  return u;
}

void InitialDataSampler::fill(const SpatialGrid& grid, int M,
                              Eigen::MatrixXd& u) const {
  u.resize(static_cast<Eigen::Index>(grid.N) * M, d_v);
  for (int i = 0; i < grid.N; ++i) {
    Eigen::VectorXd x = grid.centers.row(i).transpose();
    for (int k = 0; k < M; ++k)
      u.row(static_cast<Eigen::Index>(i) * M + k) = sample(x, k).transpose();
  }
}

int n_steps_for(double T, double dt) {
  if (dt <= 0.0 || T <= 0.0)
    throw std::invalid_argument("simulation: T, dt must be positive");
  double steps = T / dt;
  int n = static_cast<int>(std::round(steps));
  if (std::abs(steps - n) > 1e-9 * std::max(1.0, steps))
    throw std::invalid_argument("simulation: T must be a multiple of dt");
  return n;
}

WeightedPointCloud snapshot_cloud(const SpatialGrid& grid,
                                  const Eigen::MatrixXd& u) {
  int M = static_cast<int>(u.rows() / grid.N);
  return empirical_measure(grid.centers, u, M);
}

WeightedPointCloud state_cloud(const SpatialGrid& grid,
                               const ParticleSystemState& state) {
  return snapshot_cloud(grid, state.u);
}

void reflected_euler_step(ParticleSystemState& state,
                          const CoefficientModel& model,
                          const SpatialGrid& grid,
                          const WeightedPointCloud& frozen_measure,
                          const Eigen::MatrixXd& noise_increments, double dt) {
  const int N = state.N, M = state.M, d_v = state.d_v;
  if (noise_increments.rows() != static_cast<Eigen::Index>(N) * M ||
      noise_increments.cols() != d_v)
    throw std::invalid_argument("reflected_euler_step: noise shape mismatch");
  for (int i = 0; i < N; ++i) {
    Eigen::VectorXd x = grid.centers.row(i).transpose();
    for (int k = 0; k < M; ++k) {
      Eigen::Index row = static_cast<Eigen::Index>(i) * M + k;
      Eigen::VectorXd u = state.u.row(row).transpose();
      Eigen::VectorXd b = drift_b(model, x, state.t, u, frozen_measure);
      Eigen::VectorXd sg =
          diffusion_sigma(model, x, state.t, u, frozen_measure);
      for (int beta = 0; beta < d_v; ++beta) {
        double bv = b[beta], sv = sg[beta];
        if (!std::isfinite(bv) || !std::isfinite(sv))
          throw std::runtime_error(
              "reflected_euler_step: non-finite coefficient at particle (" +
              std::to_string(i) + "," + std::to_string(k) + ")");
        double star =
            u[beta] + bv * dt + sv * noise_increments(row, beta);
        double next = std::max(star, 0.0);
        state.u(row, beta) = next;
        state.ell(row, beta) += next - star;  // >= 0 increment
      }
    }
  }
  state.t += dt;
}

namespace {

// Per-column kernel tables for separable interactions on a fixed grid.
struct ColumnKernels {
  bool has_b = false, has_s = false;
  Eigen::MatrixXd Lb, Rb, Ls, Rs;  // N x rank

  ColumnKernels(const CoefficientModel& model, const SpatialGrid& grid) {
    if (model.b1_sep) {
      has_b = true;
      int r = model.b1_sep->rank();
      Lb.resize(grid.N, r);
      Rb.resize(grid.N, r);
      for (int i = 0; i < grid.N; ++i) {
        Eigen::VectorXd x = grid.centers.row(i).transpose();
        for (int q = 0; q < r; ++q) {
          Lb(i, q) = model.b1_sep->lhs[q](x);
          Rb(i, q) = model.b1_sep->rhs[q](x);
        }
      }
    }
    if (model.sigma1_sep) {
      has_s = true;
      int r = model.sigma1_sep->rank();
      Ls.resize(grid.N, r);
      Rs.resize(grid.N, r);
      for (int i = 0; i < grid.N; ++i) {
        Eigen::VectorXd x = grid.centers.row(i).transpose();
        for (int q = 0; q < r; ++q) {
          Ls(i, q) = model.sigma1_sep->lhs[q](x);
          Rs(i, q) = model.sigma1_sep->rhs[q](x);
        }
      }
    }
  }
};

enum class MeasureSource { None, Self, Frozen };

// One system advanced by the separable fast path.
class FastSystem {
 public:
  FastSystem(const CoefficientModel& model, const SpatialGrid& grid, int M,
             const ColumnKernels& kernels, MeasureSource source,
             const MeasurePath* frozen)
      : model_(model),
        grid_(grid),
        kernels_(kernels),
        source_(source),
        frozen_(frozen),
        M_(M) {
    state_.N = grid.N;
    state_.M = M;
    state_.d_v = model.d_v;
    state_.ell =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid.N) * M,
                              model.d_v);
    if ((model_.has_b1() && !kernels.has_b) ||
        (model_.has_sigma1() && !kernels.has_s))
      throw std::invalid_argument(
          "simulate: interaction kernels must be separable for this path");
    b0_off_.resize(grid.N);
    if (model.b0_affine)
      for (int i = 0; i < grid.N; ++i)
        b0_off_[i] = model.b0_off(grid.centers.row(i).transpose());
  }

  ParticleSystemState& state() { return state_; }

  // Interaction feature sums of the current own cloud.
  void self_features(Eigen::VectorXd& fb, Eigen::VectorXd& fs) const {
    const int N = grid_.N, d_v = model_.d_v;
    Eigen::VectorXd tmp(d_v);
    Eigen::VectorXd sb = Eigen::VectorXd::Zero(N),
                    ss = Eigen::VectorXd::Zero(N);
    for (int i = 0; i < N; ++i) {
      double ab = 0.0, as = 0.0;
      for (int k = 0; k < M_; ++k) {
        tmp = state_.u.row(static_cast<Eigen::Index>(i) * M_ + k);
        if (kernels_.has_b) ab += model_.b1_sep->val(tmp);
        if (kernels_.has_s) as += model_.sigma1_sep->val(tmp);
      }
      sb[i] = ab;
      ss[i] = as;
    }
    double inv = 1.0 / (static_cast<double>(N) * M_);
    if (kernels_.has_b) fb = inv * (kernels_.Rb.transpose() * sb);
    if (kernels_.has_s) fs = inv * (kernels_.Rs.transpose() * ss);
  }

  // phi of the per-column inner integrals for this step.
  void prepare(int64_t step, Eigen::VectorXd& fb_scratch,
               Eigen::VectorXd& fs_scratch) {
    const int N = grid_.N;
    phi_b_.setZero(N);
    phi_s_.setZero(N);
    if (source_ == MeasureSource::None) return;
    if (source_ == MeasureSource::Self) {
      self_features(fb_scratch, fs_scratch);
    } else {
      if (kernels_.has_b)
        fb_scratch = frozen_->features_b.row(step).transpose();
      if (kernels_.has_s)
        fs_scratch = frozen_->features_s.row(step).transpose();
    }
    if (kernels_.has_b) {
      Eigen::VectorXd s = kernels_.Lb * fb_scratch;
      for (int i = 0; i < N; ++i) phi_b_[i] = model_.phi(s[i]);
      last_fb_ = fb_scratch;
    }
    if (kernels_.has_s) {
      Eigen::VectorXd s = kernels_.Ls * fs_scratch;
      for (int i = 0; i < N; ++i) phi_s_[i] = model_.phi(s[i]);
      last_fs_ = fs_scratch;
    }
  }

  // Advance copies [k0, k1) with the given per-copy noise (N x d_v rows).
  // sigma_out/dW_out, if non-null, receive per-particle values.
  void advance_copies(int k0, int k1, double dt,
                      const std::vector<Eigen::MatrixXd>& dw_per_copy,
                      Eigen::MatrixXd* sigma_out, Eigen::MatrixXd* dW_out) {
    const int N = grid_.N, d_v = model_.d_v;
    Eigen::VectorXd x(grid_.d), u(d_v), b(d_v), sg(d_v);
    for (int i = 0; i < N; ++i) {
      x = grid_.centers.row(i).transpose();
      for (int k = k0; k < k1; ++k) {
        Eigen::Index row = static_cast<Eigen::Index>(i) * M_ + k;
        const Eigen::MatrixXd& dw = dw_per_copy[k];
        u = state_.u.row(row).transpose();
        if (model_.b0_affine)
          b = (model_.b0_lin * u).array() + b0_off_[i];
        else
          b = model_.b0(x, state_.t, u);
        if (model_.has_b1()) b.array() += phi_b_[i];
        if (model_.sigma0_const)
          sg.setConstant(model_.sigma0_value);
        else
          sg = model_.sigma0(x, state_.t, u);
        if (model_.has_sigma1()) sg.array() += phi_s_[i];
        for (int beta = 0; beta < d_v; ++beta) {
          double star = u[beta] + b[beta] * dt + sg[beta] * dw(i, beta);
          double next = std::max(star, 0.0);
          state_.u(row, beta) = next;
          state_.ell(row, beta) += next - star;
          if (sigma_out) (*sigma_out)(row, beta) = sg[beta];
          if (dW_out) (*dW_out)(row, beta) = dw(i, beta);
        }
      }
    }
  }

  void check_blowup(double cap) const {
    double m = state_.u.cwiseAbs().maxCoeff();
    if (!std::isfinite(m) || m > cap)
      throw std::runtime_error(
          "simulate: blow-up guard tripped, max |u| = " + std::to_string(m));
  }

  const Eigen::VectorXd& last_fb() const { return last_fb_; }
  const Eigen::VectorXd& last_fs() const { return last_fs_; }

 private:
  const CoefficientModel& model_;
  const SpatialGrid& grid_;
  const ColumnKernels& kernels_;
  MeasureSource source_;
  const MeasurePath* frozen_;
  int M_;
  ParticleSystemState state_;
  Eigen::VectorXd b0_off_, phi_b_, phi_s_, last_fb_, last_fs_;
};

std::vector<int64_t> snapshot_steps(const std::vector<double>& times,
                                    double dt, int n_steps) {
  std::vector<int64_t> steps;
  for (double t : times) {
    int64_t s = static_cast<int64_t>(std::round(t / dt));
    if (s < 0 || s > n_steps || std::abs(s * dt - t) > 1e-9)
      throw std::invalid_argument(
          "simulate: snapshot time not on the step grid");
    steps.push_back(s);
  }
  return steps;
}

SimulationResult run_single_system(const CoefficientModel& model,
                                   const SpatialGrid& grid, int M,
                                   const SimOptions& opts,
                                   MeasureSource source,
                                   const MeasurePath* frozen) {
  const int n_steps = n_steps_for(opts.T, opts.dt);
  const int d_v = model.d_v;
  ColumnKernels kernels(model, grid);
  FastSystem sys(model, grid, M, kernels, source, frozen);

  InitialDataSampler init;
  init.c = opts.init_c;
  init.alpha = model.alpha;
  init.d_v = d_v;
  init.seed = opts.seed;
  init.stream = opts.init_stream;
  init.fill(grid, M, sys.state().u);

  NoiseFieldSampler sampler(opts.epsilon, grid.centers, opts.dt, opts.seed,
                            0, d_v, opts.noise_h);

  SimulationResult res;
  auto snaps = snapshot_steps(opts.snapshot_times, opts.dt, n_steps);
  auto maybe_snapshot = [&](int64_t step) {
    for (size_t s = 0; s < snaps.size(); ++s)
      if (snaps[s] == step) {
        res.snapshot_times.push_back(step * opts.dt);
        res.snapshots_u.push_back(sys.state().u);
      }
  };
  int rank_b = kernels.has_b ? kernels.Rb.cols() : 0;
  int rank_s = kernels.has_s ? kernels.Rs.cols() : 0;
  if (opts.record_features) {
    res.features.dt = opts.dt;
    res.features.n_steps = n_steps;
    res.features.has_b = kernels.has_b;
    res.features.has_s = kernels.has_s;
    res.features.features_b.resize(n_steps + 1, rank_b);
    res.features.features_s.resize(n_steps + 1, rank_s);
  }

  if (opts.record_features) {
    res.features.features_b.setZero();
    res.features.features_s.setZero();
  }

  std::vector<Eigen::MatrixXd> dw(M);
  const int nt = std::max(opts.n_threads, 1);
  std::vector<Eigen::MatrixXd> atom_buf(nt);
  Eigen::MatrixXd sigma_obs, dW_obs, u_before;
  if (opts.observer) {
    sigma_obs.resize(static_cast<Eigen::Index>(grid.N) * M, d_v);
    dW_obs.resize(static_cast<Eigen::Index>(grid.N) * M, d_v);
  }
  Eigen::VectorXd fb, fs;

  maybe_snapshot(0);
  for (int64_t step = 0; step < n_steps; ++step) {
    sys.prepare(step, fb, fs);
    if (opts.record_features && source == MeasureSource::Self) {
      if (kernels.has_b)
        res.features.features_b.row(step) = sys.last_fb().transpose();
      if (kernels.has_s)
        res.features.features_s.row(step) = sys.last_fs().transpose();
    }
    parallel_for(nt, nt, [&](int64_t slot) {
      int k0 = static_cast<int>(slot * M / nt);
      int k1 = static_cast<int>((slot + 1) * M / nt);
      for (int k = k0; k < k1; ++k)
        sampler.sample_increments_into(
            step, static_cast<uint64_t>(k) + opts.noise_stream_offset,
            atom_buf[slot], dw[k]);
    });
    if (opts.observer) u_before = sys.state().u;
    parallel_for(nt, nt, [&](int64_t slot) {
      int k0 = static_cast<int>(slot * M / nt);
      int k1 = static_cast<int>((slot + 1) * M / nt);
      sys.advance_copies(k0, k1, opts.dt, dw,
                         opts.observer ? &sigma_obs : nullptr,
                         opts.observer ? &dW_obs : nullptr);
    });
    if (opts.observer)
      opts.observer->on_step(step, step * opts.dt, u_before, sigma_obs,
                             dW_obs);
    sys.check_blowup(opts.blowup_cap);
    maybe_snapshot(step + 1);
  }
  if (opts.record_features && source == MeasureSource::Self) {
    sys.prepare(n_steps, fb, fs);
    if (kernels.has_b)
      res.features.features_b.row(n_steps) = sys.last_fb().transpose();
    if (kernels.has_s)
      res.features.features_s.row(n_steps) = sys.last_fs().transpose();
  }
  res.state = sys.state();
  res.state.t = n_steps * opts.dt;
  res.epsilon = opts.epsilon;
  return res;
}

}  // namespace

Eigen::MatrixXd sigma_field(const CoefficientModel& model,
                            const SpatialGrid& grid, const Eigen::MatrixXd& u,
                            double t) {
  const int M = static_cast<int>(u.rows() / grid.N);
  const int d_v = model.d_v;
  Eigen::MatrixXd out(u.rows(), d_v);
  Eigen::VectorXd phi_s = Eigen::VectorXd::Zero(grid.N);
  if (model.has_sigma1()) {
    if (model.sigma1_sep) {
      WeightedPointCloud cloud = empirical_measure(grid.centers, u, M);
      Eigen::VectorXd f = separable_features(*model.sigma1_sep, cloud);
      for (int i = 0; i < grid.N; ++i)
        phi_s[i] = model.phi(
            separable_sum(*model.sigma1_sep, grid.centers.row(i).transpose(),
                          f));
    } else {
      WeightedPointCloud cloud = empirical_measure(grid.centers, u, M);
      Eigen::VectorXd uvec(d_v);
      for (int i = 0; i < grid.N; ++i) {
        // u-independent kernels: one inner integral per column.
        uvec = u.row(static_cast<Eigen::Index>(i) * M).transpose();
        if (!model.interaction_u_independent)
          throw std::invalid_argument(
              "sigma_field: need separable or u-independent sigma1");
        Eigen::VectorXd x = grid.centers.row(i).transpose();
        phi_s[i] = model.phi(interaction_sums(model, x, t, uvec, cloud)
                                 .sigma1_sum);
      }
    }
  }
  Eigen::VectorXd uvec(d_v);
  for (int i = 0; i < grid.N; ++i) {
    Eigen::VectorXd x = grid.centers.row(i).transpose();
    for (int k = 0; k < M; ++k) {
      Eigen::Index row = static_cast<Eigen::Index>(i) * M + k;
      if (model.sigma0_const)
        out.row(row).setConstant(model.sigma0_value);
      else {
        uvec = u.row(row).transpose();
        out.row(row) = model.sigma0(x, t, uvec).transpose();
      }
      if (model.has_sigma1()) out.row(row).array() += phi_s[i];
    }
  }
  return out;
}

SimulationResult simulate_particle_system(const CoefficientModel& model,
                                          const SpatialGrid& grid, int M,
                                          const SimOptions& opts) {
  MeasureSource src = (model.has_b1() || model.has_sigma1())
                          ? MeasureSource::Self
                          : MeasureSource::None;
  return run_single_system(model, grid, M, opts, src, nullptr);
}

SimulationResult simulate_mckean_ensemble(const CoefficientModel& model,
                                          const SpatialGrid& location_grid,
                                          int K, const SimOptions& opts) {
  if (K < 2)
    throw std::invalid_argument("simulate_mckean_ensemble: K >= 2");
  // Under the frozen-measure explicit scheme the self-consistent ensemble
  // evolves exactly like a particle system whose law proxy is its own
  // location-weighted cloud.
  return simulate_particle_system(model, location_grid, K, opts);
}

CoupledResult coupled_run(const CoefficientModel& model,
                          const SpatialGrid& grid, int M,
                          const MeasurePath& reference,
                          const SimOptions& opts) {
  const int n_steps = n_steps_for(opts.T, opts.dt);
  const int d_v = model.d_v;
  const bool interacting = model.has_b1() || model.has_sigma1();
  if (interacting) {
    if (reference.n_steps < n_steps ||
        std::abs(reference.dt - opts.dt) > 1e-12)
      throw std::invalid_argument(
          "coupled_run: reference path does not cover (T, dt)");
  }
  ColumnKernels kernels(model, grid);
  if (interacting) {
    if ((kernels.has_b && reference.features_b.cols() != kernels.Rb.cols()) ||
        (kernels.has_s && reference.features_s.cols() != kernels.Rs.cols()))
      throw std::invalid_argument(
          "coupled_run: reference feature rank does not match the model");
  }
  FastSystem particles(model, grid, M, kernels,
                       interacting ? MeasureSource::Self
                                   : MeasureSource::None,
                       nullptr);
  FastSystem mckean(model, grid, M, kernels,
                    interacting ? MeasureSource::Frozen : MeasureSource::None,
                    &reference);

  InitialDataSampler init;
  init.c = opts.init_c;
  init.alpha = model.alpha;
  init.d_v = d_v;
  init.seed = opts.seed;
  init.stream = opts.init_stream;
  init.fill(grid, M, particles.state().u);
  mckean.state().u = particles.state().u;

  NoiseFieldSampler sampler(opts.epsilon, grid.centers, opts.dt, opts.seed,
                            0, d_v, opts.noise_h);

  const Eigen::Index n_rows = static_cast<Eigen::Index>(grid.N) * M;
  Eigen::VectorXd max_diff2 = Eigen::VectorXd::Zero(n_rows);
  std::vector<Eigen::MatrixXd> dw(M);
  const int nt = std::max(opts.n_threads, 1);
  std::vector<Eigen::MatrixXd> atom_buf(nt);
  Eigen::VectorXd fb, fs, fb2, fs2;

  for (int64_t step = 0; step < n_steps; ++step) {
    particles.prepare(step, fb, fs);
    mckean.prepare(step, fb2, fs2);
    parallel_for(nt, nt, [&](int64_t slot) {
      int k0 = static_cast<int>(slot * M / nt);
      int k1 = static_cast<int>((slot + 1) * M / nt);
      for (int k = k0; k < k1; ++k)
        sampler.sample_increments_into(
            step, static_cast<uint64_t>(k) + opts.noise_stream_offset,
            atom_buf[slot], dw[k]);
    });
    parallel_for(nt, nt, [&](int64_t slot) {
      int k0 = static_cast<int>(slot * M / nt);
      int k1 = static_cast<int>((slot + 1) * M / nt);
      particles.advance_copies(k0, k1, opts.dt, dw, nullptr, nullptr);
      mckean.advance_copies(k0, k1, opts.dt, dw, nullptr, nullptr);
      for (int i = 0; i < grid.N; ++i)
        for (int k = k0; k < k1; ++k) {
          Eigen::Index r = static_cast<Eigen::Index>(i) * M + k;
          double d2 =
              (particles.state().u.row(r) - mckean.state().u.row(r))
                  .squaredNorm();
          if (d2 > max_diff2[r]) max_diff2[r] = d2;
        }
    });
    particles.check_blowup(opts.blowup_cap);
    mckean.check_blowup(opts.blowup_cap);
  }

  CoupledResult res;
  res.error_l2 = std::sqrt(max_diff2.mean());
  res.error_l4 = std::pow(max_diff2.array().square().mean(), 0.25);
  res.error_sup = std::sqrt(max_diff2.maxCoeff());
  res.particle_final = particles.state();
  res.particle_final.t = n_steps * opts.dt;
  res.mckean_final = mckean.state();
  res.mckean_final.t = n_steps * opts.dt;
  return res;
}

}  // namespace meanfield
