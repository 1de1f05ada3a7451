#include "meanfield/model_coefficients.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "meanfield/counter_rng.hpp"
#include "meanfield/transport.hpp"

namespace meanfield {

namespace {
constexpr double kPi = std::numbers::pi;

double vbar(const Eigen::VectorXd& v) { return v.mean(); }
}  // namespace

InteractionSums interaction_sums(const CoefficientModel& model,
                                 const Eigen::VectorXd& x, double t,
                                 const Eigen::VectorXd& u,
                                 const WeightedPointCloud& mu) {
  InteractionSums s;
  if (!model.has_b1() && !model.has_sigma1()) return s;
  if (mu.size() == 0)
    throw std::domain_error(
        "interaction_sums: empty measure with interaction present");
  for (Eigen::Index j = 0; j < mu.size(); ++j) {
    Eigen::VectorXd y = mu.x.row(j).transpose();
    Eigen::VectorXd v = mu.u.row(j).transpose();
    if (model.has_b1()) s.b1_sum += mu.w[j] * model.b1(x, y, t, u, v);
    if (model.has_sigma1())
      s.sigma1_sum += mu.w[j] * model.sigma1(x, y, t, u, v);
  }
  return s;
}

Eigen::VectorXd separable_features(const CoefficientModel::Separable& sep,
                                   const WeightedPointCloud& mu) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(sep.rank());
  for (Eigen::Index j = 0; j < mu.size(); ++j) {
    Eigen::VectorXd y = mu.x.row(j).transpose();
    double wv = mu.w[j] * sep.val(mu.u.row(j).transpose());
    for (int r = 0; r < sep.rank(); ++r) f[r] += wv * sep.rhs[r](y);
  }
  return f;
}

double separable_sum(const CoefficientModel::Separable& sep,
                     const Eigen::VectorXd& x,
                     const Eigen::VectorXd& features) {
  double s = 0.0;
  for (int r = 0; r < sep.rank(); ++r) s += sep.lhs[r](x) * features[r];
  return s;
}

Eigen::VectorXd drift_b(const CoefficientModel& model, const Eigen::VectorXd& x,
                        double t, const Eigen::VectorXd& u,
                        const InteractionSums& sums) {
  Eigen::VectorXd b = model.b0(x, t, u);
  if (model.has_b1())
    b.array() += model.phi(sums.b1_sum);
  return b;
}

Eigen::VectorXd diffusion_sigma(const CoefficientModel& model,
                                const Eigen::VectorXd& x, double t,
                                const Eigen::VectorXd& u,
                                const InteractionSums& sums) {
  Eigen::VectorXd s = model.sigma0(x, t, u);
  if (model.has_sigma1())
    s.array() += model.phi(sums.sigma1_sum);
  return s;
}

Eigen::VectorXd drift_b(const CoefficientModel& model, const Eigen::VectorXd& x,
                        double t, const Eigen::VectorXd& u,
                        const WeightedPointCloud& mu) {
  if (model.has_b1() && mu.size() == 0)
    throw std::domain_error("drift_b: empty measure with interaction present");
  return drift_b(model, x, t, u, interaction_sums(model, x, t, u, mu));
}

Eigen::VectorXd diffusion_sigma(const CoefficientModel& model,
                                const Eigen::VectorXd& x, double t,
                                const Eigen::VectorXd& u,
                                const WeightedPointCloud& mu) {
  if (model.has_sigma1() && mu.size() == 0)
    throw std::domain_error(
        "diffusion_sigma: empty measure with interaction present");
  return diffusion_sigma(model, x, t, u, interaction_sums(model, x, t, u, mu));
}

double holder_profile(double x, double alpha) {
  return std::pow(std::abs(std::sin(kPi * x)), alpha);
}

CoefficientModel make_linrelax(const LinrelaxParams& p) {
  if (p.lacunary_depth < 1)
    throw std::invalid_argument("make_linrelax: lacunary_depth >= 1");
  CoefficientModel m;
  m.name = "linrelax";
  m.d = p.d;
  m.d_v = p.d_v;
  m.alpha = p.alpha;

  const double c_b = p.c_b, s0 = p.s0, kappa = p.kappa, amp = p.amp_b,
               a0 = p.a0, alpha = p.alpha;
  const int J = p.lacunary_depth;

  m.b0 = [c_b, alpha](const Eigen::VectorXd& x, double,
                      const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return (-u).array() + (1.0 + c_b * holder_profile(x[0], alpha));
  };
  m.sigma0 = [s0](const Eigen::VectorXd&, double,
                  const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return Eigen::VectorXd::Constant(u.size(), s0);
  };
  m.b0_affine = true;
  m.b0_lin = -1.0;
  m.b0_off = [c_b, alpha](const Eigen::VectorXd& x) {
    return 1.0 + c_b * holder_profile(x[0], alpha);
  };
  m.sigma0_const = true;
  m.sigma0_value = s0;

  auto kernel_sum = [amp, a0, alpha, J](double dx) {
    double s = a0;
    double weight = 1.0, freq = 2.0 * kPi;
    for (int mm = 0; mm < J; ++mm) {
      s += weight * std::cos(freq * dx);
      weight *= std::pow(2.0, -alpha);
      freq *= 2.0;
    }
    return amp * s;
  };
  m.b1 = [kernel_sum](const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                      double, const Eigen::VectorXd&,
                      const Eigen::VectorXd& v) {
    double z = vbar(v);
    return kernel_sum(x[0] - y[0]) * z / (1.0 + z * z);
  };
  m.sigma1 = [kappa](const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                     double, const Eigen::VectorXd&,
                     const Eigen::VectorXd& v) {
    double z = vbar(v);
    return kappa * std::cos(2.0 * kPi * (x[0] - y[0])) / (1.0 + z * z);
  };
  m.phi = [](double z) { return std::tanh(z); };
  m.dphi = [](double z) {
    double t = std::tanh(z);
    return 1.0 - t * t;
  };

  // Separable expansions: cos(w(x-y)) = cos(wx)cos(wy) + sin(wx)sin(wy).
  CoefficientModel::Separable bsep;
  bsep.lhs.push_back([amp](const Eigen::VectorXd&) { return amp; });
  bsep.rhs.push_back([a0](const Eigen::VectorXd&) { return a0; });
  {
    double weight = 1.0, freq = 2.0 * kPi;
    for (int mm = 0; mm < J; ++mm) {
      double w = freq, wt = weight;
      bsep.lhs.push_back([amp, w, wt](const Eigen::VectorXd& x) {
        return amp * wt * std::cos(w * x[0]);
      });
      bsep.rhs.push_back(
          [w](const Eigen::VectorXd& y) { return std::cos(w * y[0]); });
      bsep.lhs.push_back([amp, w, wt](const Eigen::VectorXd& x) {
        return amp * wt * std::sin(w * x[0]);
      });
      bsep.rhs.push_back(
          [w](const Eigen::VectorXd& y) { return std::sin(w * y[0]); });
      weight *= std::pow(2.0, -alpha);
      freq *= 2.0;
    }
  }
  bsep.val = [](const Eigen::VectorXd& v) {
    double z = vbar(v);
    return z / (1.0 + z * z);
  };
  m.b1_sep = std::move(bsep);

  CoefficientModel::Separable ssep;
  ssep.lhs.push_back([kappa](const Eigen::VectorXd& x) {
    return kappa * std::cos(2.0 * kPi * x[0]);
  });
  ssep.rhs.push_back(
      [](const Eigen::VectorXd& y) { return std::cos(2.0 * kPi * y[0]); });
  ssep.lhs.push_back([kappa](const Eigen::VectorXd& x) {
    return kappa * std::sin(2.0 * kPi * x[0]);
  });
  ssep.rhs.push_back(
      [](const Eigen::VectorXd& y) { return std::sin(2.0 * kPi * y[0]); });
  ssep.val = [](const Eigen::VectorXd& v) {
    double z = vbar(v);
    return 1.0 / (1.0 + z * z);
  };
  m.sigma1_sep = std::move(ssep);

  m.interaction_u_independent = true;

  // Generous declared constants (coarse numerical bounds with margin).
  double ksum = std::abs(a0);
  for (int mm = 0; mm < J; ++mm) ksum += std::pow(2.0, -alpha * mm);
  m.declared.phi_sup = 1.0;
  m.declared.dphi_sup = 1.0;
  m.declared.lipschitz =
      4.0 * (1.0 + c_b * kPi + std::abs(amp) * ksum * (2.0 * kPi + 1.0) +
             std::abs(kappa) * (2.0 * kPi + 2.0));
  m.declared.growth = 2.0 + c_b + std::abs(amp) * ksum + std::abs(kappa) + s0;
  return m;
}

CoefficientModel make_decoupled(double s0, int d, int d_v) {
  CoefficientModel m;
  m.name = "decoupled";
  m.d = d;
  m.d_v = d_v;
  m.alpha = 1.0;
  m.b0 = [](const Eigen::VectorXd&, double,
            const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return (-u).array() + 1.0;
  };
  m.sigma0 = [s0](const Eigen::VectorXd&, double,
                  const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return Eigen::VectorXd::Constant(u.size(), s0);
  };
  m.b0_affine = true;
  m.b0_lin = -1.0;
  m.b0_off = [](const Eigen::VectorXd&) { return 1.0; };
  m.sigma0_const = true;
  m.sigma0_value = s0;
  m.phi = [](double z) { return std::tanh(z); };
  m.dphi = [](double z) {
    double t = std::tanh(z);
    return 1.0 - t * t;
  };
  m.declared.phi_sup = 1.0;
  m.declared.dphi_sup = 1.0;
  m.declared.lipschitz = 4.0;
  m.declared.growth = 2.0 + s0;
  return m;
}

namespace {

WeightedPointCloud random_cloud(const CounterKey& key, int n, int d, int d_v) {
  WeightedPointCloud c;
  c.x.resize(n, d);
  c.u.resize(n, d_v);
  c.w = Eigen::VectorXd::Constant(n, 1.0 / n);
  uint64_t ctr = 0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) c.x(i, k) = counter_uniform(key, ctr++);
    for (int k = 0; k < d_v; ++k)
      c.u(i, k) = 3.0 * counter_uniform(key, ctr++);
  }
  return c;
}

}  // namespace

AuditReport audit_regularity(const CoefficientModel& model, int n_samples,
                             uint64_t rng_seed) {
  if (n_samples < 100)
    throw std::invalid_argument("audit_regularity: n_samples >= 100");
  AuditReport rep;
  rep.n_samples = n_samples;
  CounterKey base = CounterKey(rng_seed).with(0x6175646974ULL);  // "audit"
  const int n_atoms = 8;
  for (int s = 0; s < n_samples; ++s) {
    CounterKey key = base.with(static_cast<uint64_t>(s));
    uint64_t ctr = 0;
    Eigen::VectorXd x(model.d), xp(model.d), u(model.d_v), up(model.d_v);
    for (int k = 0; k < model.d; ++k) {
      x[k] = counter_uniform(key, ctr++);
      xp[k] = counter_uniform(key, ctr++);
    }
    for (int k = 0; k < model.d_v; ++k) {
      u[k] = 3.0 * counter_uniform(key, ctr++);
      up[k] = 3.0 * counter_uniform(key, ctr++);
    }
    WeightedPointCloud mu = random_cloud(key.with(1), n_atoms, model.d,
                                         model.d_v);
    WeightedPointCloud nu = random_cloud(key.with(2), n_atoms, model.d,
                                         model.d_v);
    double w1 = wasserstein(mu, nu, 1, WassersteinMethod::NetworkSimplex);

    double t = 0.0;
    Eigen::VectorXd b = drift_b(model, x, t, u, mu);
    Eigen::VectorXd bp = drift_b(model, xp, t, up, nu);
    Eigen::VectorXd sg = diffusion_sigma(model, x, t, u, mu);
    Eigen::VectorXd sgp = diffusion_sigma(model, xp, t, up, nu);

    double denom = std::pow((x - xp).norm(), model.alpha) + (u - up).norm() +
                   std::pow(w1, model.alpha) + w1;
    if (denom > 1e-8) {
      rep.max_lipschitz_ratio_b =
          std::max(rep.max_lipschitz_ratio_b, (b - bp).norm() / denom);
      rep.max_lipschitz_ratio_sigma =
          std::max(rep.max_lipschitz_ratio_sigma, (sg - sgp).norm() / denom);
    }
    double vint = 0.0;
    for (Eigen::Index j = 0; j < mu.size(); ++j)
      vint += mu.w[j] * mu.u.row(j).norm();
    double growth_denom = 1.0 + u.norm() + vint;
    rep.max_growth_ratio_b =
        std::max(rep.max_growth_ratio_b, b.norm() / growth_denom);
    rep.max_growth_ratio_sigma =
        std::max(rep.max_growth_ratio_sigma, sg.norm() / growth_denom);
  }
  rep.lipschitz_violation =
      rep.max_lipschitz_ratio_b > model.declared.lipschitz ||
      rep.max_lipschitz_ratio_sigma > model.declared.lipschitz;
  rep.growth_violation = rep.max_growth_ratio_b > model.declared.growth ||
                         rep.max_growth_ratio_sigma > model.declared.growth;
  return rep;
}

}  // namespace meanfield
