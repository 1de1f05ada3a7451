#include <doctest.h>

#include <cmath>

#include "meanfield/counter_rng.hpp"
#include "meanfield/test_space.hpp"

using namespace meanfield;

namespace {

WeightedPointCloud rand_cloud(int n, uint64_t seed) {
  CounterKey k{seed};
  WeightedPointCloud c;
  c.x.resize(n, 1);
  c.u.resize(n, 1);
  c.w = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (int i = 0; i < n; ++i) {
    c.x(i, 0) = counter_uniform(k, 2 * i);
    c.u(i, 0) = 2.5 * counter_uniform(k, 2 * i + 1);
  }
  return c;
}

double pair_L(const CoefficientModel& m, const WeightedPointCloud& mu,
              double t, const TestFunction& psi) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    s += mu.w[i] * apply_L(m, mu, t, psi, mu.x.row(i).transpose(),
                           mu.u.row(i).transpose());
  return s;
}

}  // namespace

TEST_CASE("value factor derivatives match finite differences") {
  ValueFactor h{2, 1.3};
  Eigen::VectorXd u(2);
  u << 0.7, 1.4;
  double eps = 1e-6;
  Eigen::VectorXd g = h.grad(u);
  Eigen::MatrixXd H = h.hess(u);
  for (int b = 0; b < 2; ++b) {
    Eigen::VectorXd up = u, um = u;
    up[b] += eps;
    um[b] -= eps;
    CHECK(g[b] == doctest::Approx((h.value(up) - h.value(um)) / (2 * eps))
                      .epsilon(1e-5));
    CHECK(H(b, b) ==
          doctest::Approx((h.value(up) - 2 * h.value(u) + h.value(um)) /
                          (eps * eps))
              .epsilon(1e-3));
  }
}

TEST_CASE("no-flux: normal derivative vanishes on the boundary") {
  ValueFactor h{1, 0.9};
  Eigen::VectorXd u(2);
  u << 0.0, 1.2;  // on the face u_0 = 0
  CHECK(h.grad(u)[0] == doctest::Approx(0.0).epsilon(1e-14));
  u << 0.0, 0.0;  // corner
  CHECK(h.grad(u).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("spatial factors are L2 orthonormal") {
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 1);
  for (int a = 0; a < dict.size(); ++a)
    for (int b = 0; b < dict.size(); ++b) {
      double ov = dict.members[a].g.overlap(dict.members[b].g);
      CHECK(ov == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("orthonormalizer inverts the Gram matrix") {
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3, {1.0, 0.7});
  Eigen::MatrixXd I =
      dict.ortho.transpose() * dict.gram * dict.ortho;
  CHECK((I - Eigen::MatrixXd::Identity(dict.size(), dict.size()))
            .cwiseAbs()
            .maxCoeff() < 1e-10);
}

TEST_CASE("chord average collapses to dphi at equal arguments") {
  CoefficientModel m = make_linrelax();
  for (double v : {-0.4, 0.0, 1.3})
    CHECK(chord_dphi(m, v, v) == doctest::Approx(m.dphi(v)).epsilon(1e-12));
  // Chord identity: int dphi over [q,p] = (phi(p)-phi(q))/(p-q).
  CHECK(chord_dphi(m, 0.9, -0.3) ==
        doctest::Approx((m.phi(0.9) - m.phi(-0.3)) / 1.2).epsilon(1e-12));
}

TEST_CASE("linearization identity holds to 1e-8 on random pairs") {
  LinrelaxParams p;
  p.lacunary_depth = 2;
  p.a0 = 0.3;
  CoefficientModel m = make_linrelax(p);
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3);
  for (int inst = 0; inst < 100; ++inst) {
    WeightedPointCloud mu = rand_cloud(6, 2 * inst + 1);
    WeightedPointCloud nu = rand_cloud(4, 2 * inst + 2);
    const TestFunction& psi = dict.members[inst % dict.size()];
    double lhs = pair_L(m, mu, 0.2, psi) - pair_L(m, nu, 0.2, psi);
    double rhs = 0.0;
    LinearizedGenerator lin(m, mu, nu, 0.2, psi);
    for (Eigen::Index i = 0; i < mu.size(); ++i)
      rhs += mu.w[i] * lin(mu.x.row(i).transpose(), mu.u.row(i).transpose());
    for (Eigen::Index i = 0; i < nu.size(); ++i)
      rhs -= nu.w[i] * lin(nu.x.row(i).transpose(), nu.u.row(i).transpose());
    CHECK(std::abs(lhs - rhs) < 1e-8);
  }
}

TEST_CASE("linearization reduces to the plain generator at mu = nu") {
  CoefficientModel m = make_linrelax();
  WeightedPointCloud mu = rand_cloud(5, 77);
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3);
  const TestFunction& psi = dict.members[4];
  Eigen::VectorXd y(1), v(1);
  y << 0.6;
  v << 1.1;
  // At mu = nu the correction term integrates mu - nu = 0; pointwise the
  // operator is L(mu) plus a correction, so only the pairing collapses.
  double lhs = pair_L(m, mu, 0.0, psi) - pair_L(m, mu, 0.0, psi);
  LinearizedGenerator lin(m, mu, mu, 0.0, psi);
  double rhs = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    rhs += mu.w[i] * lin(mu.x.row(i).transpose(), mu.u.row(i).transpose()) -
           mu.w[i] * lin(mu.x.row(i).transpose(), mu.u.row(i).transpose());
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-14));
  // And apply_linearized_L agrees with the class evaluation.
  CHECK(apply_linearized_L(m, mu, mu, 0.0, psi, y, v) ==
        doctest::Approx(lin(y, v)).epsilon(1e-12));
}

TEST_CASE("identity also holds without a diffusion kernel") {
  LinrelaxParams p;
  p.kappa = 0.0;
  CoefficientModel m = make_linrelax(p);
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3);
  WeightedPointCloud mu = rand_cloud(6, 5);
  WeightedPointCloud nu = rand_cloud(6, 6);
  const TestFunction& psi = dict.members[7];
  double lhs = pair_L(m, mu, 0.0, psi) - pair_L(m, nu, 0.0, psi);
  LinearizedGenerator lin(m, mu, nu, 0.0, psi);
  double rhs = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    rhs += mu.w[i] * lin(mu.x.row(i).transpose(), mu.u.row(i).transpose());
  for (Eigen::Index i = 0; i < nu.size(); ++i)
    rhs -= nu.w[i] * lin(nu.x.row(i).transpose(), nu.u.row(i).transpose());
  CHECK(std::abs(lhs - rhs) < 1e-10);
}
