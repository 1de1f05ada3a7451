#include "meanfield/noise_field.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "meanfield/torus.hpp"

namespace meanfield {

namespace {

// Composite Simpson weights on [-1,1] with n intervals (n even).
struct SimpsonRule {
  std::vector<double> nodes, weights;
  explicit SimpsonRule(int n) {
    double h = 2.0 / n;
    nodes.resize(n + 1);
    weights.resize(n + 1);
    for (int i = 0; i <= n; ++i) {
      nodes[i] = -1.0 + i * h;
      double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      weights[i] = w * h / 3.0;
    }
  }
};

int simpson_intervals_for(int d) { return d == 1 ? 2048 : (d == 2 ? 256 : 64); }

double quad_rho_product(const Eigen::VectorXd& shift, int d) {
  SimpsonRule rule(simpson_intervals_for(d));
  const int n = static_cast<int>(rule.nodes.size());
  // Tensor iteration over [-1,1]^d.
  std::vector<int> idx(d, 0);
  Eigen::VectorXd z(d), zs(d);
  double total = 0.0;
  while (true) {
    double w = 1.0;
    for (int k = 0; k < d; ++k) {
      z[k] = rule.nodes[idx[k]];
      w *= rule.weights[idx[k]];
    }
    zs = z + shift;
    double a = Mollifier::radial(z.norm());
    if (a != 0.0) {
      double b = Mollifier::radial(zs.norm());
      if (b != 0.0) total += w * a * b;
    }
    int k = 0;
    for (; k < d; ++k) {
      if (++idx[k] < n) break;
      idx[k] = 0;
    }
    if (k == d) break;
  }
  return total;
}

}  // namespace

Mollifier::Mollifier(int dim) : d(dim) {
  if (dim < 1) throw std::invalid_argument("Mollifier: dimension must be >= 1");
  c_rho = 1.0 / quad_rho_product(Eigen::VectorXd::Zero(dim), dim);
}

double Mollifier::radial(double r) {
  if (r >= 1.0) return 0.0;
  double t = 1.0 - r * r;
  return t * t;
}

double Mollifier::operator()(const Eigen::VectorXd& z) const {
  return radial(z.norm());
}

double correlation_R(const Eigen::VectorXd& x, double epsilon,
                     const Mollifier& m) {
  if (epsilon <= 0.0)
    throw std::domain_error("correlation_R: epsilon must be positive");
  if (x.norm() > 2.0 * epsilon) return 0.0;
  return m.c_rho * quad_rho_product(x / epsilon, m.d);
}

double correlation_R_1d(double x, double epsilon) {
  static const Mollifier m1(1);
  Eigen::VectorXd v(1);
  v[0] = x;
  return correlation_R(v, epsilon, m1);
}

NoiseFieldSampler::NoiseFieldSampler(double epsilon, Eigen::MatrixXd locations,
                                     double dt, uint64_t seed, uint64_t stream,
                                     int d_v, double h_request)
    : epsilon_(epsilon),
      dt_(dt),
      d_(static_cast<int>(locations.cols())),
      d_v_(d_v),
      locations_(std::move(locations)),
      pre_stream_(CounterKey(seed).with(0x6e6f697365ULL)),
      stream_(stream) {
  if (epsilon_ <= 0.0 || epsilon_ > 1.0)
    throw std::invalid_argument("NoiseFieldSampler: epsilon must be in (0,1]");
  if (dt_ <= 0.0) throw std::invalid_argument("NoiseFieldSampler: dt <= 0");
  if (h_request <= 0.0) h_request = epsilon_ / 8.0;
  cells_per_dim_ = static_cast<int>(std::ceil(1.0 / h_request - 1e-12));
  h_ = 1.0 / cells_per_dim_;
  if (h_ > epsilon_ / 4.0)
    throw std::invalid_argument(
        "NoiseFieldSampler: auxiliary grid spacing h > eps/4, correlation "
        "under-resolved");

  const Mollifier m(d_);
  const Eigen::Index n_loc = locations_.rows();
  weights_.resize(n_loc);

  // Cells whose centers are within eps of a location (torus metric).
  const int reach = static_cast<int>(std::floor(epsilon_ / h_)) + 1;
  std::unordered_map<int64_t, int> cell_slot;

  const double hd = std::pow(h_, d_);
  const double kernel_scale =
      std::sqrt(m.c_rho) * std::pow(epsilon_, 0.5 * d_) *
      std::pow(epsilon_, -static_cast<double>(d_)) * std::sqrt(hd);

  std::vector<int> offset(d_, -reach);
  Eigen::VectorXd dz(d_);
  for (Eigen::Index i = 0; i < n_loc; ++i) {
    std::vector<std::pair<int64_t, double>> raw;
    std::fill(offset.begin(), offset.end(), -reach);
    while (true) {
      // Cell center nearest the location plus the offset.
      int64_t flat = 0;
      double dist2 = 0.0;
      for (int k = 0; k < d_; ++k) {
        int base_cell = static_cast<int>(std::floor(locations_(i, k) / h_));
        int cell = base_cell + offset[k];
        int wrapped = ((cell % cells_per_dim_) + cells_per_dim_) %
                      cells_per_dim_;
        double center = (wrapped + 0.5) * h_;
        double delta = torus_delta(center, locations_(i, k));
        dist2 += delta * delta;
        flat = flat * cells_per_dim_ + wrapped;
      }
      if (dist2 < epsilon_ * epsilon_) {
        double rho = Mollifier::radial(std::sqrt(dist2) / epsilon_);
        if (rho > 0.0) raw.emplace_back(flat, kernel_scale * rho);
      }
      int k = 0;
      for (; k < d_; ++k) {
        if (++offset[k] <= reach) break;
        offset[k] = -reach;
      }
      if (k == d_) break;
    }
    // Renormalize so the per-step variance is exactly dt.
    double var = 0.0;
    for (auto& [c, w] : raw) var += w * w;
    if (var <= 0.0)
      throw std::runtime_error("NoiseFieldSampler: empty kernel support");
    double scale = std::sqrt(dt_ / var);
    weights_[i].reserve(raw.size());
    for (auto& [c, w] : raw) {
      auto [it, inserted] = cell_slot.try_emplace(
          c, static_cast<int>(active_cells_.size()));
      if (inserted) active_cells_.push_back(c);
      weights_[i].emplace_back(it->second, w * scale);
    }
  }
}

Eigen::MatrixXd NoiseFieldSampler::sample_increments(int64_t step_index) const {
  return sample_increments(step_index, stream_);
}

Eigen::MatrixXd NoiseFieldSampler::sample_increments(int64_t step_index,
                                                     uint64_t stream) const {
  Eigen::MatrixXd atoms, out;
  sample_increments_into(step_index, stream, atoms, out);
  return out;
}

void NoiseFieldSampler::sample_increments_into(int64_t step_index,
                                               uint64_t stream,
                                               Eigen::MatrixXd& atoms,
                                               Eigen::MatrixXd& out) const {
  if (step_index < 0)
    throw std::invalid_argument("sample_increments: step_index < 0");
  const Eigen::Index n_loc = locations_.rows();
  const Eigen::Index n_cells =
      static_cast<Eigen::Index>(active_cells_.size());
  atoms.resize(n_cells, d_v_);
  CounterKey step_key =
      pre_stream_.with(stream).with(static_cast<uint64_t>(step_index));
  for (Eigen::Index c = 0; c < n_cells; ++c) {
    CounterKey cell_key =
        step_key.with(static_cast<uint64_t>(active_cells_[c]));
    for (int beta = 0; beta < d_v_; ++beta)
      atoms(c, beta) = counter_gauss(cell_key, beta);
  }
  out.resize(n_loc, d_v_);
  out.setZero();
  for (Eigen::Index i = 0; i < n_loc; ++i)
    for (const auto& [slot, w] : weights_[i])
      out.row(i) += w * atoms.row(slot);
}

double NoiseFieldSampler::covariance(int loc_a, int loc_b) const {
  // Weights over the shared atom set; atoms are i.i.d. standard normals.
  const auto& wa = weights_[loc_a];
  const auto& wb = weights_[loc_b];
  std::unordered_map<int, double> map;
  map.reserve(wa.size());
  for (const auto& [slot, w] : wa) map[slot] = w;
  double cov = 0.0;
  for (const auto& [slot, w] : wb) {
    auto it = map.find(slot);
    if (it != map.end()) cov += it->second * w;
  }
  return cov;
}

}  // namespace meanfield
