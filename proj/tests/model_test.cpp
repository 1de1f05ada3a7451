#include <doctest.h>

#include <cmath>
#include <numbers>

#include "meanfield/counter_rng.hpp"
#include "meanfield/model_coefficients.hpp"

using namespace meanfield;

namespace {

WeightedPointCloud tiny_cloud(int n, uint64_t seed) {
  CounterKey k{seed};
  WeightedPointCloud c;
  c.x.resize(n, 1);
  c.u.resize(n, 1);
  c.w = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (int i = 0; i < n; ++i) {
    c.x(i, 0) = counter_uniform(k, 2 * i);
    c.u(i, 0) = 2.0 * counter_uniform(k, 2 * i + 1);
  }
  return c;
}

}  // namespace

TEST_CASE("holder profile values") {
  CHECK(holder_profile(0.0, 0.5) == doctest::Approx(0.0));
  CHECK(holder_profile(0.5, 0.5) == doctest::Approx(1.0));
  CHECK(holder_profile(0.25, 1.0) ==
        doctest::Approx(std::sin(std::numbers::pi * 0.25)));
}

TEST_CASE("decoupled model has no interaction and constant diffusion") {
  CoefficientModel m = make_decoupled(0.5);
  CHECK_FALSE(m.has_b1());
  CHECK_FALSE(m.has_sigma1());
  WeightedPointCloud mu = tiny_cloud(5, 1);
  Eigen::VectorXd x(1), u(1);
  x << 0.3;
  u << 1.7;
  CHECK(diffusion_sigma(m, x, 0.0, u, mu)[0] == doctest::Approx(0.5));
  // b0 = -u + 1, independent of position.
  CHECK(drift_b(m, x, 0.0, u, mu)[0] == doctest::Approx(-1.7 + 1.0));
}

TEST_CASE("linrelax drift matches the closed form on a hand case") {
  LinrelaxParams p;
  CoefficientModel m = make_linrelax(p);
  WeightedPointCloud mu = tiny_cloud(7, 2);
  Eigen::VectorXd x(1), u(1);
  x << 0.2;
  u << 0.8;
  // Direct evaluation of the kernel sum.
  double sum_b = 0.0, sum_s = 0.0;
  for (int a = 0; a < 7; ++a) {
    double vbar = mu.u(a, 0);
    double r = vbar / (1.0 + vbar * vbar);
    sum_b += mu.w[a] *
             std::cos(2.0 * std::numbers::pi * (x[0] - mu.x(a, 0))) * r;
    sum_s += mu.w[a] * 0.5 *
             std::cos(2.0 * std::numbers::pi * (x[0] - mu.x(a, 0))) /
             (1.0 + vbar * vbar);
  }
  double expect_b = -u[0] + 1.0 + holder_profile(x[0], 0.5) + std::tanh(sum_b);
  double expect_s = 0.5 + std::tanh(sum_s);
  CHECK(drift_b(m, x, 0.0, u, mu)[0] ==
        doctest::Approx(expect_b).epsilon(1e-12));
  CHECK(diffusion_sigma(m, x, 0.0, u, mu)[0] ==
        doctest::Approx(expect_s).epsilon(1e-12));
}

TEST_CASE("separable features reproduce the direct kernel sums") {
  LinrelaxParams p;
  p.lacunary_depth = 3;
  p.a0 = 0.4;
  CoefficientModel m = make_linrelax(p);
  REQUIRE(m.b1_sep.has_value());
  WeightedPointCloud mu = tiny_cloud(9, 3);
  Eigen::VectorXd fb = separable_features(*m.b1_sep, mu);
  Eigen::VectorXd x(1), u(1);
  u << 1.0;
  for (double xv : {0.0, 0.13, 0.77}) {
    x << xv;
    double direct = 0.0;
    for (int a = 0; a < 9; ++a)
      direct += mu.w[a] * m.b1(x, mu.x.row(a).transpose(), 0.0, u,
                               mu.u.row(a).transpose());
    CHECK(separable_sum(*m.b1_sep, x, fb) ==
          doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("regularity audit stays within the declared constants") {
  AuditReport rep = audit_regularity(make_linrelax(), 200, 314);
  CHECK(rep.n_samples == 200);
  CHECK_FALSE(rep.lipschitz_violation);
  CHECK_FALSE(rep.growth_violation);
}
