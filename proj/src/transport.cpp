#include "meanfield/transport.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>
#include <vector>

#include "meanfield/counter_rng.hpp"
#include "meanfield/torus.hpp"

namespace meanfield {

WeightedPointCloud empirical_measure(const Eigen::MatrixXd& x,
                                     const Eigen::MatrixXd& u, int M) {
  const Eigen::Index N = x.rows();
  if (M < 1 || u.rows() != N * M)
    throw std::invalid_argument("empirical_measure: u must have N*M rows");
  WeightedPointCloud c;
  c.x.resize(N * M, x.cols());
  c.u = u;
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index k = 0; k < M; ++k) c.x.row(i * M + k) = x.row(i);
  c.w = Eigen::VectorXd::Constant(N * M, 1.0 / static_cast<double>(N * M));
  return c;
}

JointPointCloud joint_empirical(const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& u, int M,
                                Eigen::Index max_atoms, uint64_t seed) {
  const Eigen::Index N = x.rows();
  if (M < 1 || u.rows() != N * M)
    throw std::invalid_argument("joint_empirical: u must have N*M rows");
  const Eigen::Index total = N * N * M;
  JointPointCloud jc;
  const Eigen::Index n_atoms = std::min(total, max_atoms);
  jc.x.resize(n_atoms, x.cols());
  jc.y.resize(n_atoms, x.cols());
  jc.u.resize(n_atoms, u.cols());
  jc.v.resize(n_atoms, u.cols());
  jc.w = Eigen::VectorXd::Constant(n_atoms, 1.0 / static_cast<double>(n_atoms));
  jc.pairs_represented = n_atoms;
  CounterKey key = CounterKey(seed).with(0x6a6f696e74ULL);  // "joint"
  for (Eigen::Index a = 0; a < n_atoms; ++a) {
    Eigen::Index idx;
    if (total <= max_atoms) {
      idx = a;
    } else {
      idx = static_cast<Eigen::Index>(
          counter_uniform(key, static_cast<uint64_t>(a)) *
          static_cast<double>(total));
      idx = std::min(idx, total - 1);
    }
    // idx = (i * N + j) * M + k
    Eigen::Index k = idx % M;
    Eigen::Index ij = idx / M;
    Eigen::Index j = ij % N;
    Eigen::Index i = ij / N;
    jc.x.row(a) = x.row(i);
    jc.y.row(a) = x.row(j);
    jc.u.row(a) = u.row(i * M + k);
    jc.v.row(a) = u.row(j * M + k);
  }
  return jc;
}

double ground_dist2(const WeightedPointCloud& a, Eigen::Index i,
                    const WeightedPointCloud& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < a.x.cols(); ++c) {
    double d = torus_delta(a.x(i, c), b.x(j, c));
    s += d * d;
  }
  for (Eigen::Index c = 0; c < a.u.cols(); ++c) {
    double d = a.u(i, c) - b.u(j, c);
    s += d * d;
  }
  return s;
}

namespace {

// Transportation simplex on an m x n cost matrix with supplies wa and
// demands wb (both strictly positive, equal sums). Returns the optimal
// total cost sum pi_ij c_ij.
double transportation_simplex(const Eigen::MatrixXd& cost,
                              const Eigen::VectorXd& wa,
                              const Eigen::VectorXd& wb) {
  const int m = static_cast<int>(wa.size());
  const int n = static_cast<int>(wb.size());

  struct Cell {
    int i, j;
    double flow;
  };
  std::vector<Cell> basis;
  basis.reserve(m + n - 1);

  // Northwest-corner initial basic feasible solution.
  {
    Eigen::VectorXd supply = wa, demand = wb;
    int i = 0, j = 0;
    while (i < m && j < n) {
      double f = std::min(supply[i], demand[j]);
      basis.push_back({i, j, f});
      supply[i] -= f;
      demand[j] -= f;
      if (i == m - 1 && j == n - 1) break;
      // Advance; on a tie advance only one index to keep m+n-1 cells.
      if (supply[i] <= demand[j] && i < m - 1)
        ++i;
      else if (j < n - 1)
        ++j;
      else
        ++i;
    }
  }

  std::vector<double> du(m), dv(n);
  std::vector<char> row_done(m), col_done(n);
  std::vector<std::vector<int>> row_cells(m), col_cells(n);
  std::vector<int> parent_edge(m + n), bfs_queue;

  const int max_iter = 50 * (m + n) * std::max(m, n);
  for (int iter = 0; iter < max_iter; ++iter) {
    // Adjacency of the basis tree (row nodes 0..m-1, column nodes m..m+n-1).
    for (auto& v : row_cells) v.clear();
    for (auto& v : col_cells) v.clear();
    for (int e = 0; e < static_cast<int>(basis.size()); ++e) {
      row_cells[basis[e].i].push_back(e);
      col_cells[basis[e].j].push_back(e);
    }

    // Duals from c_ij = u_i + v_j on basic cells (tree traversal).
    std::fill(row_done.begin(), row_done.end(), 0);
    std::fill(col_done.begin(), col_done.end(), 0);
    std::deque<int> nodes;
    du[0] = 0.0;
    row_done[0] = 1;
    nodes.push_back(0);
    while (!nodes.empty()) {
      int node = nodes.front();
      nodes.pop_front();
      if (node < m) {
        for (int e : row_cells[node]) {
          int j = basis[e].j;
          if (!col_done[j]) {
            dv[j] = cost(node, j) - du[node];
            col_done[j] = 1;
            nodes.push_back(m + j);
          }
        }
      } else {
        int j = node - m;
        for (int e : col_cells[j]) {
          int i = basis[e].i;
          if (!row_done[i]) {
            du[i] = cost(i, j) - dv[j];
            row_done[i] = 1;
            nodes.push_back(i);
          }
        }
      }
    }

    // Entering cell: most negative reduced cost (first hit on ties, so the
    // pivot sequence is deterministic).
    int ei = -1, ej = -1;
    double best = -1e-12;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double rc = cost(i, j) - du[i] - dv[j];
        if (rc < best) {
          best = rc;
          ei = i;
          ej = j;
        }
      }
    if (ei < 0) break;  // optimal

    // Unique path in the basis tree from row ei to column ej.
    std::fill(parent_edge.begin(), parent_edge.end(), -1);
    std::fill(row_done.begin(), row_done.end(), 0);
    std::fill(col_done.begin(), col_done.end(), 0);
    std::deque<int> q;
    q.push_back(ei);
    row_done[ei] = 1;
    while (!q.empty() && !col_done[ej]) {
      int node = q.front();
      q.pop_front();
      if (node < m) {
        for (int e : row_cells[node]) {
          int j = basis[e].j;
          if (!col_done[j]) {
            col_done[j] = 1;
            parent_edge[m + j] = e;
            q.push_back(m + j);
          }
        }
      } else {
        for (int e : col_cells[node - m]) {
          int i = basis[e].i;
          if (!row_done[i]) {
            row_done[i] = 1;
            parent_edge[i] = e;
            q.push_back(i);
          }
        }
      }
    }
    if (!col_done[ej])
      throw std::runtime_error("transport: basis tree disconnected");

    // Cycle = entering cell (+) then path edges with alternating signs,
    // walking from column ej back to row ei.
    std::vector<int> minus_edges, plus_edges;
    int node = m + ej;
    bool minus = true;
    while (node != ei) {
      int e = parent_edge[node];
      (minus ? minus_edges : plus_edges).push_back(e);
      node = (node >= m) ? basis[e].i : m + basis[e].j;
      minus = !minus;
    }

    double theta = std::numeric_limits<double>::infinity();
    int leave = -1;
    for (int e : minus_edges)
      if (basis[e].flow < theta ||
          (basis[e].flow == theta && (leave < 0 || e < leave))) {
        theta = basis[e].flow;
        leave = e;
      }
    for (int e : plus_edges) basis[e].flow += theta;
    for (int e : minus_edges) basis[e].flow -= theta;
    basis[leave] = {ei, ej, theta};
  }

  double total = 0.0;
  for (const auto& c : basis) total += c.flow * cost(c.i, c.j);
  return total;
}

Eigen::MatrixXd cost_matrix(const WeightedPointCloud& a,
                            const WeightedPointCloud& b, int p) {
  Eigen::MatrixXd c(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      double d2 = ground_dist2(a, i, b, j);
      c(i, j) = (p == 2) ? d2 : std::sqrt(d2);
    }
  return c;
}

// Drop zero-weight atoms (the simplex needs strictly positive marginals).
WeightedPointCloud strip_zero_weights(const WeightedPointCloud& a) {
  if (a.size() > 0 && a.w.minCoeff() > 0.0) return a;
  WeightedPointCloud out;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a.w[i] > 0.0) keep.push_back(i);
  out.x.resize(keep.size(), a.x.cols());
  out.u.resize(keep.size(), a.u.cols());
  out.w.resize(keep.size());
  for (size_t r = 0; r < keep.size(); ++r) {
    out.x.row(r) = a.x.row(keep[r]);
    out.u.row(r) = a.u.row(keep[r]);
    out.w[r] = a.w[keep[r]];
  }
  return out;
}

double simplex_wp(const WeightedPointCloud& a0, const WeightedPointCloud& b0,
                  int p) {
  WeightedPointCloud a = strip_zero_weights(a0);
  WeightedPointCloud b = strip_zero_weights(b0);
  if (a.size() == 0 || b.size() == 0)
    throw std::invalid_argument("wasserstein: empty cloud");
  if (a.size() > 2048 || b.size() > 2048)
    throw std::invalid_argument(
        "wasserstein: network-simplex limited to 2048 atoms; use the "
        "subsampled method");
  double c = transportation_simplex(cost_matrix(a, b, p), a.w, b.w);
  c = std::max(c, 0.0);
  return (p == 2) ? std::sqrt(c) : c;
}

bool exact1d_eligible(const WeightedPointCloud& a,
                      const WeightedPointCloud& b) {
  // Sorted coupling is exact on the real line only: one u-coordinate and
  // no torus coordinate, uniform weights, equal atom counts.
  if (a.x.cols() != 0 || a.u.cols() != 1) return false;
  if (a.size() != b.size() || a.size() == 0) return false;
  double wa = 1.0 / static_cast<double>(a.size());
  return (a.w.array() - wa).abs().maxCoeff() < 1e-12 &&
         (b.w.array() - wa).abs().maxCoeff() < 1e-12;
}

double exact1d_wp(const WeightedPointCloud& a, const WeightedPointCloud& b,
                  int p) {
  std::vector<double> va(a.size()), vb(b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) va[i] = a.u(i, 0);
  for (Eigen::Index i = 0; i < b.size(); ++i) vb[i] = b.u(i, 0);
  std::sort(va.begin(), va.end());
  std::sort(vb.begin(), vb.end());
  double s = 0.0;
  for (size_t i = 0; i < va.size(); ++i) {
    double d = std::abs(va[i] - vb[i]);
    s += (p == 2) ? d * d : d;
  }
  s /= static_cast<double>(va.size());
  return (p == 2) ? std::sqrt(s) : s;
}

WeightedPointCloud resample(const WeightedPointCloud& a, int n,
                            const CounterKey& key) {
  // Weight-proportional draw by CDF inversion.
  Eigen::VectorXd cdf(a.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    acc += a.w[i];
    cdf[i] = acc;
  }
  WeightedPointCloud out;
  out.x.resize(n, a.x.cols());
  out.u.resize(n, a.u.cols());
  out.w = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (int r = 0; r < n; ++r) {
    double t = counter_uniform(key, static_cast<uint64_t>(r)) * acc;
    Eigen::Index lo =
        std::lower_bound(cdf.data(), cdf.data() + cdf.size(), t) - cdf.data();
    lo = std::min(lo, a.size() - 1);
    out.x.row(r) = a.x.row(lo);
    out.u.row(r) = a.u.row(lo);
  }
  return out;
}

}  // namespace

double transport_cost(const Eigen::MatrixXd& cost, const Eigen::VectorXd& wa,
                      const Eigen::VectorXd& wb) {
  if (cost.rows() != wa.size() || cost.cols() != wb.size())
    throw std::invalid_argument("transport_cost: shape mismatch");
  if (wa.minCoeff() <= 0.0 || wb.minCoeff() <= 0.0)
    throw std::invalid_argument("transport_cost: marginals must be positive");
  if (std::abs(wa.sum() - wb.sum()) > 1e-9)
    throw std::invalid_argument("transport_cost: unbalanced marginals");
  return transportation_simplex(cost, wa, wb);
}

WassersteinResult wasserstein_full(const WeightedPointCloud& a,
                                   const WeightedPointCloud& b, int p,
                                   WassersteinMethod method, uint64_t seed,
                                   int subsample_n, int resamples) {
  if (p != 1 && p != 2)
    throw std::invalid_argument("wasserstein: order must be 1 or 2");
  if (a.x.cols() != b.x.cols() || a.u.cols() != b.u.cols())
    throw std::invalid_argument("wasserstein: dimension mismatch");
  WassersteinResult res;
  if (method == WassersteinMethod::Exact1d ||
      method == WassersteinMethod::Auto) {
    if (exact1d_eligible(a, b)) {
      res.value = exact1d_wp(a, b, p);
      res.method_used = WassersteinMethod::Exact1d;
      return res;
    }
    if (method == WassersteinMethod::Exact1d)
      method = WassersteinMethod::NetworkSimplex;  // documented fall-through
  }
  if (method == WassersteinMethod::Auto)
    method = (a.size() <= 2048 && b.size() <= 2048)
                 ? WassersteinMethod::NetworkSimplex
                 : WassersteinMethod::Subsampled;
  if (method == WassersteinMethod::NetworkSimplex) {
    res.value = simplex_wp(a, b, p);
    res.method_used = WassersteinMethod::NetworkSimplex;
    return res;
  }
  // Subsampled
  CounterKey base = CounterKey(seed).with(0x77617373ULL);  // "wass"
  std::vector<double> vals(resamples);
  for (int r = 0; r < resamples; ++r) {
    WeightedPointCloud sa =
        resample(a, subsample_n, base.with(2 * r));
    WeightedPointCloud sb =
        resample(b, subsample_n, base.with(2 * r + 1));
    vals[r] = simplex_wp(sa, sb, p);
  }
  double m = 0.0;
  for (double v : vals) m += v;
  m /= resamples;
  double var = 0.0;
  for (double v : vals) var += (v - m) * (v - m);
  res.value = m;
  res.std_error =
      (resamples > 1) ? std::sqrt(var / (resamples * (resamples - 1.0))) : 0.0;
  res.method_used = WassersteinMethod::Subsampled;
  return res;
}

double wasserstein(const WeightedPointCloud& a, const WeightedPointCloud& b,
                   int p, WassersteinMethod method, uint64_t seed) {
  return wasserstein_full(a, b, p, method, seed).value;
}

double wasserstein_bruteforce(const WeightedPointCloud& a,
                              const WeightedPointCloud& b, int p) {
  const Eigen::Index n = a.size();
  if (b.size() != n || n < 1 || n > 8)
    throw std::invalid_argument(
        "wasserstein_bruteforce: equal atom counts in [1, 8] required");
  const double w = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::abs(a.w[i] - w) > 1e-12 || std::abs(b.w[i] - w) > 1e-12)
      throw std::invalid_argument(
          "wasserstein_bruteforce: uniform weights required");
  if (p != 1 && p != 2)
    throw std::invalid_argument("wasserstein_bruteforce: p must be 1 or 2");

  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double d2 = ground_dist2(a, i, b, j);
      cost(i, j) = (p == 2) ? d2 : std::sqrt(d2);
    }
  std::vector<int> perm(n);
  for (Eigen::Index i = 0; i < n; ++i) perm[i] = static_cast<int>(i);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) c += cost(i, perm[i]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  best *= w;
  return (p == 2) ? std::sqrt(best) : best;
}

}  // namespace meanfield
