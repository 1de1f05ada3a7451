#include "meanfield/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "meanfield/counter_rng.hpp"
#include "meanfield/fluctuation.hpp"
#include "meanfield/fokker_planck.hpp"
#include "meanfield/langevin_spde.hpp"
#include "meanfield/noise_field.hpp"
#include "meanfield/particle_dynamics.hpp"
#include "meanfield/test_space.hpp"
#include "meanfield/thread_pool.hpp"
#include "meanfield/transport.hpp"

namespace meanfield {

using nlohmann::json;

// ---------------------------------------------------------------- utilities

uint64_t fnv1a_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << contents;
  if (!out) throw std::runtime_error("write failed: " + path);
}

static std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return std::string(buf);
}

void write_table(const std::string& path, uint64_t config_hash,
                 const std::string& body) {
  std::string out = "# config_hash=" + hex64(config_hash) + "\n" +
                    "# content_hash=" + hex64(fnv1a_hash(body)) + "\n" + body;
  write_text_file(path, out);
}

static uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0,
                            uint64_t c = 0, uint64_t e = 0) {
  return CounterKey(base).with(0x65787074ULL).with(a).with(b).with(c).with(e)
      .state;
}

// ------------------------------------------------------------------ SVG

std::string svg_line_plot(const std::string& title,
                          const std::vector<PlotSeries>& series, bool log_x,
                          bool log_y) {
  const double W = 640, H = 480, ml = 70, mr = 20, mt = 40, mb = 50;
  auto tx = [&](double v) { return log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if ((log_x && s.x[i] <= 0.0) || (log_y && s.y[i] <= 0.0)) continue;
      xmin = std::min(xmin, tx(s.x[i]));
      xmax = std::max(xmax, tx(s.x[i]));
      ymin = std::min(ymin, ty(s.y[i]));
      ymax = std::max(ymax, ty(s.y[i]));
    }
  if (xmin > xmax) { xmin = 0; xmax = 1; }
  if (ymin > ymax) { ymin = 0; ymax = 1; }
  if (xmax - xmin < 1e-12) { xmin -= 0.5; xmax += 0.5; }
  if (ymax - ymin < 1e-12) { ymin -= 0.5; ymax += 0.5; }
  auto px = [&](double v) {
    return ml + (tx(v) - xmin) / (xmax - xmin) * (W - ml - mr);
  };
  auto py = [&](double v) {
    return H - mb - (ty(v) - ymin) / (ymax - ymin) * (H - mt - mb);
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                 "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
    << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"" << W << "\" height=\"" << H
    << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"15\">"
    << title << "</text>\n";
  // axes
  o << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr
    << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
    << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  auto label = [&](double v, bool is_log) {
    return format_double(is_log ? std::pow(10.0, v) : v);
  };
  o << "<text x=\"" << ml << "\" y=\"" << H - mb + 18
    << "\" font-family=\"sans-serif\" font-size=\"11\">" << label(xmin, log_x)
    << "</text>\n";
  o << "<text x=\"" << W - mr << "\" y=\"" << H - mb + 18
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
    << label(xmax, log_x) << "</text>\n";
  o << "<text x=\"" << ml - 6 << "\" y=\"" << H - mb
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
    << label(ymin, log_y) << "</text>\n";
  o << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 4
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
    << label(ymax, log_y) << "</text>\n";
  int ci = 0;
  double ly = mt + 10;
  for (const auto& s : series) {
    const char* col = colors[ci % 6];
    std::ostringstream pts;
    for (size_t i = 0; i < s.x.size(); ++i) {
      if ((log_x && s.x[i] <= 0.0) || (log_y && s.y[i] <= 0.0)) continue;
      pts << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    o << "<polyline fill=\"none\" stroke=\"" << col
      << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
    o << "<text x=\"" << W - mr - 4 << "\" y=\"" << ly
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
         "font-size=\"11\" fill=\""
      << col << "\">" << s.name << "</text>\n";
    ly += 14;
    ++ci;
  }
  o << "</svg>\n";
  return o.str();
}

// ------------------------------------------------------- config validation

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key: " + ctx + "." + it.key());
}

double gd(const json& j, const char* key, double def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number())
    throw ConfigError(std::string("config key ") + key + " must be a number");
  return j.at(key).get<double>();
}

int gi(const json& j, const char* key, int def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number_integer())
    throw ConfigError(std::string("config key ") + key +
                      " must be an integer");
  return j.at(key).get<int>();
}

std::string gs(const json& j, const char* key, const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_string())
    throw ConfigError(std::string("config key ") + key + " must be a string");
  return j.at(key).get<std::string>();
}

std::vector<int> gvi(const json& j, const char* key,
                     const std::vector<int>& def) {
  if (!j.contains(key)) return def;
  std::vector<int> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_number_integer())
      throw ConfigError(std::string("config key ") + key +
                        " must be an integer list");
    out.push_back(v.get<int>());
  }
  return out;
}

const std::set<std::string> kModelKeys = {
    "name", "alpha", "c_b", "s0", "kappa", "amp_b",
    "a0",   "lacunary_depth", "d", "d_v"};
const std::set<std::string> kDictKeys = {"P_x", "P_u", "scales", "norm_k",
                                         "norm_theta"};

void validate_model(const json& j, const std::string& ctx) {
  check_keys(j, kModelKeys, ctx);
  std::string name = gs(j, "name", "linrelax");
  if (name != "linrelax" && name != "decoupled")
    throw ConfigError("unknown model name: " + name);
}

TestFunctionDictionary dict_from_json(const json& cfg, int d, int d_v,
                                      double alpha) {
  json j = cfg.value("dictionary", json::object());
  check_keys(j, kDictKeys, "dictionary");
  int P_x = gi(j, "P_x", 3);
  int P_u = gi(j, "P_u", 3);
  std::vector<double> scales = {1.0};
  if (j.contains("scales")) {
    scales.clear();
    for (const auto& v : j.at("scales")) scales.push_back(v.get<double>());
  }
  return build_dictionary(d, d_v, P_x, P_u, scales, alpha,
                          gi(j, "norm_k", 0), gd(j, "norm_theta", 0.0));
}

std::vector<TestFunction> pick_members(const TestFunctionDictionary& dict,
                                       const std::vector<int>& idx) {
  std::vector<TestFunction> out;
  for (int i : idx) {
    if (i < 0 || i >= dict.size())
      throw ConfigError("member index out of range: " + std::to_string(i));
    out.push_back(dict.members[i]);
  }
  return out;
}

struct CsvBuilder {
  std::ostringstream o;
  explicit CsvBuilder(const std::string& header) { o << header << "\n"; }
  template <class... T>
  void row(const T&... vals) {
    bool first = true;
    ((o << (first ? "" : ","), first = false, put(vals)), ...);
    o << "\n";
  }
  void put(double v) { o << format_double(v); }
  void put(int v) { o << v; }
  void put(int64_t v) { o << v; }
  void put(const std::string& s) { o << s; }
  void put(const char* s) { o << s; }
  std::string str() const { return o.str(); }
};

double snap_pairing(const SpatialGrid& grid, const Eigen::MatrixXd& u,
                    const TestFunction& psi) {
  return cloud_pairing(snapshot_cloud(grid, u), psi);
}

std::vector<double> linspace_times(double T, int n_nodes) {
  std::vector<double> t(n_nodes);
  for (int i = 0; i < n_nodes; ++i) t[i] = T * i / (n_nodes - 1);
  return t;
}

}  // namespace

CoefficientModel model_from_json(const json& j) {
  validate_model(j, "model");
  std::string name = gs(j, "name", "linrelax");
  if (name == "decoupled")
    return make_decoupled(gd(j, "s0", 0.5), gi(j, "d", 1), gi(j, "d_v", 1));
  LinrelaxParams p;
  p.alpha = gd(j, "alpha", 0.5);
  p.c_b = gd(j, "c_b", 1.0);
  p.s0 = gd(j, "s0", 0.5);
  p.kappa = gd(j, "kappa", 0.5);
  p.amp_b = gd(j, "amp_b", 1.0);
  p.a0 = gd(j, "a0", 0.0);
  p.lacunary_depth = gi(j, "lacunary_depth", 1);
  p.d = gi(j, "d", 1);
  p.d_v = gi(j, "d_v", 1);
  return make_linrelax(p);
}

RateFit fit_rate(const std::vector<double>& sizes,
                 const std::vector<double>& errors) {
  if (sizes.size() != errors.size() || sizes.size() < 3)
    throw std::invalid_argument("fit_rate: need >= 3 matching points");
  RateFit fit;
  fit.log_sizes.resize(static_cast<Eigen::Index>(sizes.size()));
  fit.log_errors.resize(static_cast<Eigen::Index>(sizes.size()));
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0.0) || !(errors[i] > 0.0))
      throw std::invalid_argument("fit_rate: sizes and errors must be > 0");
    fit.log_sizes[static_cast<Eigen::Index>(i)] = std::log(sizes[i]);
    fit.log_errors[static_cast<Eigen::Index>(i)] = std::log(errors[i]);
  }
  LineFit lf = fit_line(fit.log_sizes, fit.log_errors);
  fit.slope = lf.slope;
  fit.intercept = lf.intercept;
  fit.slope_stderr = lf.slope_stderr;
  fit.r2 = lf.r2;
  return fit;
}

int schedule_M(const std::string& schedule, int N, double alpha, int d) {
  double r = std::pow(static_cast<double>(N), alpha / d);
  double m;
  if (schedule == "clt") {
    double c = std::ceil(r);
    m = c * c / 4.0;
  } else if (schedule == "critical") {
    m = r * r;
  } else if (schedule == "broken") {
    m = 9.0 * r * r;
  } else {
    throw ConfigError("unknown schedule: " + schedule);
  }
  return std::max(1, static_cast<int>(std::llround(m)));
}

// ------------------------------------------------------------- config

static const std::map<std::string, std::set<std::string>> kExperimentKeys = {
    {"mean-field-rate",
     {"experiment", "seed", "epsilon", "dt", "T", "K_ref", "N_ref", "n_runs",
      "init_c", "model", "m_sweep", "n_sweep"}},
    {"wasserstein-decay",
     {"experiment", "seed", "epsilon", "dt", "T", "K_ref", "N_ref", "n_runs",
      "init_c", "model", "sizes"}},
    {"qv-convergence",
     {"experiment", "seed", "epsilon", "dt", "T", "K_ref", "n_runs", "init_c",
      "model", "sizes", "dictionary", "members", "g_nodes", "qv_tol"}},
    {"clt-initial",
     {"experiment", "seed", "schedule", "M", "N", "alpha", "init_c",
      "profile_depth", "n_runs", "dictionary", "members", "grid_q", "n_mc_q",
      "ks_level", "ratio_threshold", "expect"}},
    {"clt-trajectory",
     {"experiment", "seed", "epsilon", "dt", "dt_ode", "T", "K_ref", "n_runs",
      "init_c", "model", "M", "N", "dictionary", "members", "grid_q",
      "n_mc_q", "tol", "g_nodes"}},
    {"spde-only",
     {"experiment", "seed", "epsilon", "dt", "dt_ode", "T", "K_ref", "init_c",
      "model", "N", "dictionary", "grid_q", "n_mc_q", "n_paths"}},
    {"oracle-suite", {"experiment", "seed", "n_instances", "n_pairs"}},
};

uint64_t ExperimentConfig::config_hash() const {
  return fnv1a_hash(tree.dump());
}

ExperimentConfig ExperimentConfig::parse(const json& j) {
  if (!j.is_object() || !j.contains("experiment") ||
      !j.at("experiment").is_string())
    throw ConfigError("config must set the \"experiment\" key");
  ExperimentConfig cfg;
  cfg.experiment = j.at("experiment").get<std::string>();
  auto it = kExperimentKeys.find(cfg.experiment);
  if (it == kExperimentKeys.end())
    throw ConfigError("unknown experiment: " + cfg.experiment);
  check_keys(j, it->second, "config");
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
      throw ConfigError("config key seed must be an integer");
    cfg.seed = j.at("seed").get<uint64_t>();
  }
  if (j.contains("model")) validate_model(j.at("model"), "model");
  for (const char* sweep : {"m_sweep", "n_sweep"})
    if (j.contains(sweep) && j.at(sweep).contains("model"))
      validate_model(j.at(sweep).at("model"), sweep + std::string(".model"));
  double eps = gd(j, "epsilon", 0.1);
  if (j.contains("epsilon") && !(eps > 0.0 && eps <= 0.5))
    throw ConfigError("epsilon must lie in (0, 0.5]");
  cfg.tree = j;
  cfg.tree["seed"] = cfg.seed;
  return cfg;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse(j);
}

// ------------------------------------------------------- mean-field-rate

namespace {

struct SweepResult {
  std::string label;
  std::vector<int> sizes;
  std::vector<double> mean_error, std_error;
  bool skipped = false;
  std::string skip_reason;
  RateFit fit;
  double target = -0.5, tol = 0.15;
  bool pass = false;
};

SweepResult run_rate_sweep(const ExperimentConfig& cfg, const json& sweep_j,
                           const std::string& label, bool sweep_M,
                           int sweep_index, int workers, CsvBuilder& runs_csv) {
  const json& j = cfg.tree;
  check_keys(sweep_j, {"M", "N", "model", "slope_target", "slope_tol"},
             label);
  SweepResult res;
  res.label = label;
  res.target = gd(sweep_j, "slope_target", -0.5);
  res.tol = gd(sweep_j, "slope_tol", sweep_M ? 0.15 : 0.2);

  json model_j = sweep_j.contains("model") ? sweep_j.at("model")
                                           : j.value("model", json::object());
  CoefficientModel model = model_from_json(model_j);
  const double T = gd(j, "T", 1.0), dt = gd(j, "dt", 1e-3);
  const double eps = gd(j, "epsilon", 0.1);
  const double init_c = gd(j, "init_c", 0.5);
  const int K_ref = gi(j, "K_ref", 512);
  const int N_ref = gi(j, "N_ref", 3000);
  const int n_runs = gi(j, "n_runs", 4);

  std::vector<int> sizes, Ms, Ns;
  if (sweep_M) {
    sizes = gvi(sweep_j, "M", {16, 64, 256, 1024});
    int N = gi(sweep_j, "N", 256);
    for (int M : sizes) { Ms.push_back(M); Ns.push_back(N); }
  } else {
    sizes = gvi(sweep_j, "N", {8, 32, 128, 512});
    int M = gi(sweep_j, "M", 1024);
    for (int N : sizes) { Ms.push_back(M); Ns.push_back(N); }
  }
  res.sizes = sizes;
  const int n_sizes = static_cast<int>(sizes.size());

  // One frozen mean-field feature path from a fine-grid self-consistent
  // ensemble (continuum proxy; empty when the model has no interaction).
  // The feature sums are global scalars, so one reference serves every run
  // grid, and the run grid's own quadrature bias stays visible in the gap.
  MeasurePath reference;
  const bool interacting = model.has_b1() || model.has_sigma1();
  if (interacting) {
    SimOptions opts;
    opts.T = T;
    opts.dt = dt;
    opts.epsilon = eps;
    opts.init_c = init_c;
    opts.seed = derive_seed(cfg.seed, 1, sweep_index);
    opts.record_features = true;
    opts.n_threads = workers;
    SimulationResult ref = simulate_mckean_ensemble(
        model, SpatialGrid::with_columns(N_ref, model.d), K_ref, opts);
    reference = std::move(ref.features);
  }

  Eigen::MatrixXd errors(n_sizes, n_runs);
  parallel_for(static_cast<int64_t>(n_sizes) * n_runs, workers,
               [&](int64_t job) {
                 int si = static_cast<int>(job / n_runs);
                 int run = static_cast<int>(job % n_runs);
                 SimOptions opts;
                 opts.T = T;
                 opts.dt = dt;
                 opts.epsilon = eps;
                 opts.init_c = init_c;
                 opts.seed = derive_seed(cfg.seed, 2, sweep_index, si, run);
                 opts.n_threads = 1;
                 CoupledResult cr = coupled_run(
                     model, SpatialGrid::with_columns(Ns[si], model.d),
                     Ms[si], reference, opts);
                 errors(si, run) = cr.error_l2;
               });

  for (int si = 0; si < n_sizes; ++si) {
    double m = errors.row(si).mean();
    double var = 0.0;
    for (int r = 0; r < n_runs; ++r)
      var += (errors(si, r) - m) * (errors(si, r) - m);
    double se = (n_runs > 1)
                    ? std::sqrt(var / (n_runs * (n_runs - 1.0)))
                    : 0.0;
    res.mean_error.push_back(m);
    res.std_error.push_back(se);
    for (int r = 0; r < n_runs; ++r)
      runs_csv.row(label, Ms[si], Ns[si], r, errors(si, r));
  }

  double emax = *std::max_element(res.mean_error.begin(),
                                  res.mean_error.end());
  if (emax < 1e-13) {
    res.skipped = true;
    res.skip_reason =
        "errors are exactly zero (no interaction); slope fit skipped";
    res.pass = true;
    return res;
  }
  std::vector<double> s(sizes.begin(), sizes.end());
  res.fit = fit_rate(s, res.mean_error);
  res.pass = std::abs(res.fit.slope - res.target) <= res.tol;
  return res;
}

int run_mean_field_rate(const ExperimentConfig& cfg,
                        const std::string& out_dir, int workers) {
  const json& j = cfg.tree;
  if (!j.contains("m_sweep") && !j.contains("n_sweep"))
    throw ConfigError("mean-field-rate needs m_sweep and/or n_sweep");
  CsvBuilder runs_csv("sweep,M,N,run,error_l2");
  std::vector<SweepResult> sweeps;
  if (j.contains("m_sweep"))
    sweeps.push_back(run_rate_sweep(cfg, j.at("m_sweep"), "m_sweep", true, 0,
                                    workers, runs_csv));
  if (j.contains("n_sweep"))
    sweeps.push_back(run_rate_sweep(cfg, j.at("n_sweep"), "n_sweep", false, 1,
                                    workers, runs_csv));
  write_table(out_dir + "/rate_runs.csv", cfg.config_hash(), runs_csv.str());

  CsvBuilder sum_csv("sweep,size,mean_error,std_error");
  std::vector<PlotSeries> plot;
  json summary;
  summary["experiment"] = cfg.experiment;
  bool all_pass = true;
  for (const auto& sw : sweeps) {
    PlotSeries ps;
    ps.name = sw.label;
    for (size_t i = 0; i < sw.sizes.size(); ++i) {
      sum_csv.row(sw.label, sw.sizes[i], sw.mean_error[i], sw.std_error[i]);
      ps.x.push_back(sw.sizes[i]);
      ps.y.push_back(sw.mean_error[i]);
    }
    plot.push_back(ps);
    json js;
    js["sizes"] = sw.sizes;
    js["mean_error"] = sw.mean_error;
    js["pass"] = sw.pass;
    if (sw.skipped) {
      js["skipped_reason"] = sw.skip_reason;
    } else {
      js["slope"] = sw.fit.slope;
      js["slope_stderr"] = sw.fit.slope_stderr;
      js["intercept"] = sw.fit.intercept;
      js["r2"] = sw.fit.r2;
      js["slope_target"] = sw.target;
      js["slope_tol"] = sw.tol;
    }
    summary["sweeps"][sw.label] = js;
    all_pass = all_pass && sw.pass;
  }
  write_table(out_dir + "/rate_summary.csv", cfg.config_hash(),
              sum_csv.str());
  write_text_file(out_dir + "/rate_loglog.svg",
                  svg_line_plot("coupled error vs size (log-log)", plot, true,
                                true));
  summary["pass"] = all_pass;
  write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
  return all_pass ? 0 : 3;
}

// ---------------------------------------------------- wasserstein-decay

int run_wasserstein_decay(const ExperimentConfig& cfg,
                          const std::string& out_dir, int workers) {
  const json& j = cfg.tree;
  CoefficientModel model = model_from_json(j.value("model", json::object()));
  const double T = gd(j, "T", 1.0), dt = gd(j, "dt", 1e-3);
  const double eps = gd(j, "epsilon", 0.1);
  const double init_c = gd(j, "init_c", 0.5);
  const int K_ref = gi(j, "K_ref", 512);
  const int N_ref = gi(j, "N_ref", 512);
  const int n_runs = gi(j, "n_runs", 3);
  std::vector<std::pair<int, int>> sizes = {{64, 16}, {256, 64}, {1024, 256}};
  if (j.contains("sizes")) {
    sizes.clear();
    for (const auto& p : j.at("sizes"))
      sizes.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  }

  SimOptions ref_opts;
  ref_opts.T = T;
  ref_opts.dt = dt;
  ref_opts.epsilon = eps;
  ref_opts.init_c = init_c;
  ref_opts.seed = derive_seed(cfg.seed, 10);
  ref_opts.snapshot_times = {T};
  ref_opts.n_threads = workers;
  SpatialGrid ref_grid = SpatialGrid::with_columns(N_ref, model.d);
  SimulationResult ref =
      simulate_mckean_ensemble(model, ref_grid, K_ref, ref_opts);
  WeightedPointCloud ref_cloud =
      snapshot_cloud(ref_grid, ref.snapshots_u.back());

  const int n_sizes = static_cast<int>(sizes.size());
  Eigen::MatrixXd w2(n_sizes, n_runs);
  parallel_for(static_cast<int64_t>(n_sizes) * n_runs, workers,
               [&](int64_t job) {
                 int si = static_cast<int>(job / n_runs);
                 int run = static_cast<int>(job % n_runs);
                 SimOptions opts;
                 opts.T = T;
                 opts.dt = dt;
                 opts.epsilon = eps;
                 opts.init_c = init_c;
                 opts.seed = derive_seed(cfg.seed, 11, si, run);
                 opts.snapshot_times = {T};
                 opts.n_threads = 1;
                 SpatialGrid grid =
                     SpatialGrid::with_columns(sizes[si].second, model.d);
                 SimulationResult run_res = simulate_particle_system(
                     model, grid, sizes[si].first, opts);
                 WeightedPointCloud c =
                     snapshot_cloud(grid, run_res.snapshots_u.back());
                 w2(si, run) = wasserstein(
                     c, ref_cloud, 2, WassersteinMethod::Auto,
                     derive_seed(cfg.seed, 12, si, run));
               });

  CsvBuilder csv("M,N,run,w2");
  CsvBuilder sum_csv("M,N,mean_w2_sq");
  std::vector<double> means;
  PlotSeries ps;
  ps.name = "E[W2^2]";
  for (int si = 0; si < n_sizes; ++si) {
    double m = 0.0;
    for (int r = 0; r < n_runs; ++r) {
      csv.row(sizes[si].first, sizes[si].second, r, w2(si, r));
      m += w2(si, r) * w2(si, r);
    }
    m /= n_runs;
    means.push_back(m);
    sum_csv.row(sizes[si].first, sizes[si].second, m);
    ps.x.push_back(static_cast<double>(sizes[si].first) * sizes[si].second);
    ps.y.push_back(m);
  }
  bool pass = true;
  for (size_t i = 1; i < means.size(); ++i)
    pass = pass && (means[i] < means[i - 1]);
  write_table(out_dir + "/wasserstein_runs.csv", cfg.config_hash(),
              csv.str());
  write_table(out_dir + "/wasserstein_summary.csv", cfg.config_hash(),
              sum_csv.str());
  write_text_file(out_dir + "/wasserstein_decay.svg",
                  svg_line_plot("E[W2^2] vs MN", {ps}, true, true));
  json summary;
  summary["experiment"] = cfg.experiment;
  summary["mean_w2_sq"] = means;
  summary["pass"] = pass;
  write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
  return pass ? 0 : 3;
}

// ------------------------------------------------------ qv-convergence

int run_qv_convergence(const ExperimentConfig& cfg, const std::string& out_dir,
                       int workers) {
  const json& j = cfg.tree;
  CoefficientModel model = model_from_json(j.value("model", json::object()));
  const double T = gd(j, "T", 1.0), dt = gd(j, "dt", 1e-3);
  const double eps = gd(j, "epsilon", 0.1);
  const double init_c = gd(j, "init_c", 0.5);
  const int K_ref = gi(j, "K_ref", 512);
  const int n_runs = gi(j, "n_runs", 2);
  const int g_nodes = gi(j, "g_nodes", 21);
  const double qv_tol = gd(j, "qv_tol", 0.10);
  std::vector<std::pair<int, int>> sizes = {{64, 16}, {256, 64}, {1024, 256}};
  if (j.contains("sizes")) {
    sizes.clear();
    for (const auto& p : j.at("sizes"))
      sizes.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  }
  TestFunctionDictionary dict =
      dict_from_json(j, model.d, model.d_v, model.alpha);
  std::vector<int> midx = gvi(j, "members", {0, 3, 6});
  std::vector<TestFunction> members = pick_members(dict, midx);
  const int P = static_cast<int>(members.size());
  const int n_sizes = static_cast<int>(sizes.size());

  CsvBuilder qv_csv("t,p,q,value,M,N,run");
  CsvBuilder gap_csv("M,N,p,qv,g,gap");
  std::vector<std::vector<double>> gaps(n_sizes,
                                        std::vector<double>(P, 0.0));
  json per_size = json::array();
  for (int si = 0; si < n_sizes; ++si) {
    int M = sizes[si].first, N = sizes[si].second;
    SpatialGrid grid = SpatialGrid::with_columns(N, model.d);

    SimOptions ens_opts;
    ens_opts.T = T;
    ens_opts.dt = dt;
    ens_opts.epsilon = eps;
    ens_opts.init_c = init_c;
    ens_opts.seed = derive_seed(cfg.seed, 20, si);
    ens_opts.snapshot_times = linspace_times(T, g_nodes);
    ens_opts.n_threads = workers;
    SimulationResult ens = simulate_mckean_ensemble(model, grid, K_ref,
                                                    ens_opts);
    CovarianceEstimate g_est =
        estimate_g(model, grid, ens, K_ref, members, eps);
    const Eigen::MatrixXd& gT = g_est.g.back();

    std::vector<Eigen::MatrixXd> qv_finals(n_runs);
    std::vector<std::vector<Eigen::MatrixXd>> qv_paths(n_runs);
    std::vector<std::vector<double>> qv_times(n_runs);
    parallel_for(n_runs, workers, [&](int64_t run) {
      FluctuationAccumulator acc(grid, M, members, std::sqrt(
                                     static_cast<double>(M)),
                                 dt, eps, true);
      SimOptions opts;
      opts.T = T;
      opts.dt = dt;
      opts.epsilon = eps;
      opts.init_c = init_c;
      opts.seed = derive_seed(cfg.seed, 21, si, static_cast<uint64_t>(run));
      opts.observer = &acc;
      opts.n_threads = 1;
      simulate_particle_system(model, grid, M, opts);
      qv_finals[run] = acc.qv_final();
      qv_paths[run] = acc.qv_series();
      qv_times[run] = acc.step_times();
    });
    Eigen::MatrixXd qv_mean = Eigen::MatrixXd::Zero(P, P);
    for (int r = 0; r < n_runs; ++r) qv_mean += qv_finals[r];
    qv_mean /= n_runs;
    for (int r = 0; r < n_runs; ++r) {
      size_t stride = std::max<size_t>(1, qv_paths[r].size() / 50);
      for (size_t s = 0; s < qv_paths[r].size(); s += stride)
        for (int p = 0; p < P; ++p)
          for (int q = 0; q < P; ++q)
            qv_csv.row(qv_times[r][s], midx[p], midx[q],
                       qv_paths[r][s](p, q), M, N, r);
    }
    json js;
    js["M"] = M;
    js["N"] = N;
    for (int p = 0; p < P; ++p) {
      double g = gT(p, p);
      if (!(g > 0.0))
        throw std::runtime_error("qv-convergence: g_T diagonal not positive");
      double gap = std::abs(qv_mean(p, p) - g) / g;
      gaps[si][p] = gap;
      gap_csv.row(M, N, midx[p], qv_mean(p, p), g, gap);
      js["gap"].push_back(gap);
    }
    per_size.push_back(js);
  }

  bool pass = true;
  for (int p = 0; p < P; ++p) {
    for (int si = 1; si < n_sizes; ++si)
      pass = pass && (gaps[si][p] < gaps[si - 1][p]);
    pass = pass && (gaps[n_sizes - 1][p] < qv_tol);
  }
  write_table(out_dir + "/qv.csv", cfg.config_hash(), qv_csv.str());
  write_table(out_dir + "/qv_gap.csv", cfg.config_hash(), gap_csv.str());
  std::vector<PlotSeries> plot;
  for (int p = 0; p < P; ++p) {
    PlotSeries ps;
    ps.name = "member " + std::to_string(midx[p]);
    for (int si = 0; si < n_sizes; ++si) {
      ps.x.push_back(static_cast<double>(sizes[si].first) * sizes[si].second);
      ps.y.push_back(gaps[si][p]);
    }
    plot.push_back(ps);
  }
  write_text_file(out_dir + "/qv_gap.svg",
                  svg_line_plot("relative QV gap vs MN", plot, true, true));
  json summary;
  summary["experiment"] = cfg.experiment;
  summary["per_size"] = per_size;
  summary["qv_tol"] = qv_tol;
  summary["pass"] = pass;
  write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
  return pass ? 0 : 3;
}

// -------------------------------------------------------- clt-initial

int run_clt_initial(const ExperimentConfig& cfg, const std::string& out_dir,
                    int workers) {
  const json& j = cfg.tree;
  const std::string schedule = gs(j, "schedule", "clt");
  const double alpha = gd(j, "alpha", 0.5);
  const double init_c = gd(j, "init_c", 0.5);
  const int depth = gi(j, "profile_depth", 12);
  const int n_runs = gi(j, "n_runs", 300);
  const int N = gi(j, "N", schedule == "broken" ? 16 : 6400);
  const int M = j.contains("M") ? gi(j, "M", 0)
                                : schedule_M(schedule, N, alpha, 1);
  const int grid_q = gi(j, "grid_q", 2500);
  const int n_mc_q = gi(j, "n_mc_q", 20000);
  const double ks_level = gd(j, "ks_level", 0.01);
  const double ratio_threshold = gd(j, "ratio_threshold", 1.5);
  std::string expect =
      gs(j, "expect", schedule == "broken" ? "excess-variance" : "gaussian");
  if (expect != "gaussian" && expect != "excess-variance")
    throw ConfigError("expect must be gaussian or excess-variance");
  if (M < 1 || N < 1) throw ConfigError("M, N must be positive");

  TestFunctionDictionary dict = dict_from_json(j, 1, 1, alpha);
  // Default members share the constant spatial factor: the broken-schedule
  // grid bias lives in the spatial average, which oscillating factors
  // project out.
  std::vector<int> midx = gvi(j, "members", {0, 1, 2});
  std::vector<TestFunction> members = pick_members(dict, midx);
  const int P = static_cast<int>(members.size());
  const double ratio = std::sqrt(static_cast<double>(M)) /
                       std::pow(static_cast<double>(N), alpha);

  // Continuum covariance and mean of the initial pairings (fine grid).
  InitialDataSampler qinit;
  qinit.c = init_c;
  qinit.alpha = alpha;
  qinit.profile_depth = depth;
  qinit.d_v = 1;
  qinit.seed = derive_seed(cfg.seed, 30);
  SpatialGrid fine = SpatialGrid::with_columns(grid_q, 1);
  CovarianceEstimate Q =
      initial_covariance_Q(qinit, fine, members, n_mc_q, workers);

  SpatialGrid grid = SpatialGrid::with_columns(N, 1);
  Eigen::MatrixXd eta(n_runs, P);
  const double C = std::sqrt(static_cast<double>(M));
  parallel_for(n_runs, workers, [&](int64_t run) {
    InitialDataSampler init = qinit;
    init.seed = derive_seed(cfg.seed, 31, static_cast<uint64_t>(run));
    Eigen::MatrixXd u;
    init.fill(grid, M, u);
    WeightedPointCloud cloud = snapshot_cloud(grid, u);
    for (int p = 0; p < P; ++p)
      eta(run, p) = C * (cloud_pairing(cloud, members[p]) - Q.mean[p]);
  });

  CsvBuilder samp_csv("run,p,value");
  for (int r = 0; r < n_runs; ++r)
    for (int p = 0; p < P; ++p) samp_csv.row(r, midx[p], eta(r, p));
  write_table(out_dir + "/initial_pairings.csv", cfg.config_hash(),
              samp_csv.str());

  CsvBuilder test_csv(
      "psi_index,statistic,p_value,variance_ratio,variance_ratio_p");
  bool pass = true;
  bool any_flag = false;
  json tests = json::array();
  std::vector<PlotSeries> plot;
  for (int p = 0; p < P; ++p) {
    std::vector<double> samples(n_runs);
    for (int r = 0; r < n_runs; ++r) samples[r] = eta(r, p);
    GaussianityReport rep = gaussianity_test(samples, Q.Q(p, p));
    test_csv.row(midx[p], rep.ks_statistic, rep.p_value, rep.variance_ratio,
                 rep.variance_ratio_p);
    json t;
    t["psi_index"] = midx[p];
    t["ks_statistic"] = rep.ks_statistic;
    t["ks_p"] = rep.p_value;
    t["variance_ratio"] = rep.variance_ratio;
    tests.push_back(t);
    if (expect == "gaussian")
      pass = pass && (rep.p_value > ks_level);
    else
      any_flag = any_flag || (rep.variance_ratio > ratio_threshold);

    std::sort(samples.begin(), samples.end());
    PlotSeries emp, ref;
    emp.name = "empirical " + std::to_string(midx[p]);
    ref.name = "normal " + std::to_string(midx[p]);
    double sd = std::sqrt(std::max(Q.Q(p, p), 1e-300));
    for (int r = 0; r < n_runs; ++r) {
      emp.x.push_back(samples[r]);
      emp.y.push_back((r + 0.5) / n_runs);
      ref.x.push_back(samples[r]);
      ref.y.push_back(normal_cdf(samples[r] / sd));
    }
    plot.push_back(emp);
    plot.push_back(ref);
  }
  if (expect == "excess-variance") pass = any_flag;
  write_table(out_dir + "/tests.csv", cfg.config_hash(), test_csv.str());
  write_text_file(out_dir + "/initial_cdf.svg",
                  svg_line_plot("initial pairing CDF vs N(0,Q)", plot));
  json summary;
  summary["experiment"] = cfg.experiment;
  summary["schedule"] = schedule;
  summary["M"] = M;
  summary["N"] = N;
  summary["scaling_ratio"] = ratio;
  summary["expect"] = expect;
  summary["Q_diag"] = std::vector<double>{};
  for (int p = 0; p < P; ++p) summary["Q_diag"].push_back(Q.Q(p, p));
  summary["Q_clip"] = Q.clip_magnitude;
  summary["tests"] = tests;
  summary["pass"] = pass;
  write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
  return pass ? 0 : 3;
}

// ------------------------------------------------------ clt-trajectory

int run_clt_trajectory(const ExperimentConfig& cfg, const std::string& out_dir,
                       int workers) {
  const json& j = cfg.tree;
  CoefficientModel model = model_from_json(j.value("model", json::object()));
  const double T = gd(j, "T", 0.5), dt = gd(j, "dt", 1e-3);
  const double dt_ode = gd(j, "dt_ode", 1e-3);
  const double eps = gd(j, "epsilon", 0.1);
  const double init_c = gd(j, "init_c", 0.5);
  const int K_ref = gi(j, "K_ref", 256);
  const int n_runs = gi(j, "n_runs", 200);
  const int M = gi(j, "M", 1024), N = gi(j, "N", 256);
  const int grid_q = gi(j, "grid_q", 2048);
  const int n_mc_q = gi(j, "n_mc_q", 10000);
  const int g_nodes = gi(j, "g_nodes", 11);
  const double tol = gd(j, "tol", 0.20);

  TestFunctionDictionary dict =
      dict_from_json(j, model.d, model.d_v, model.alpha);
  std::vector<int> midx = gvi(j, "members", {0, 3, 6});
  const int P = dict.size();

  SpatialGrid grid = SpatialGrid::with_columns(N, model.d);
  SimOptions ens_opts;
  ens_opts.T = T;
  ens_opts.dt = dt;
  ens_opts.epsilon = eps;
  ens_opts.init_c = init_c;
  ens_opts.seed = derive_seed(cfg.seed, 40);
  ens_opts.snapshot_times = linspace_times(T, g_nodes);
  ens_opts.n_threads = workers;
  SimulationResult ens = simulate_mckean_ensemble(model, grid, K_ref,
                                                  ens_opts);

  GalerkinSystem sys = assemble_galerkin(model, grid, ens, K_ref, dict);
  CovarianceEstimate g_est =
      estimate_g(model, grid, ens, K_ref, dict.members, eps);
  set_noise_covariance(sys, g_est, dict);

  InitialDataSampler qinit;
  qinit.c = init_c;
  qinit.alpha = model.alpha;
  qinit.d_v = model.d_v;
  qinit.seed = derive_seed(cfg.seed, 41);
  SpatialGrid fine = SpatialGrid::with_columns(grid_q, 1);
  CovarianceEstimate Q =
      initial_covariance_Q(qinit, fine, dict.members, n_mc_q, workers);
  set_initial_covariance(sys, Q.Q, dict);

  std::vector<Eigen::MatrixXd> sigma_y = covariance_ode(sys, T, dt_ode);
  // Back to raw-member coordinates: Sigma_raw = O^-1 Sigma_y O^-1 with the
  // symmetric orthonormalizer O.
  Eigen::LLT<Eigen::MatrixXd> ollt(dict.ortho);
  if (ollt.info() != Eigen::Success)
    throw std::runtime_error("orthonormalizer not positive definite");
  auto to_raw = [&](const Eigen::MatrixXd& s) -> Eigen::MatrixXd {
    Eigen::MatrixXd t = ollt.solve(s);
    return ollt.solve(t.transpose()).transpose();
  };
  Eigen::MatrixXd sigma_raw_T = to_raw(sigma_y.back());

  // Reference pairings at T (shared across runs, so reference error shifts
  // all samples identically and drops out of the covariance).
  Eigen::VectorXd ref_p(P), ref_se(P);
  for (int p = 0; p < P; ++p) {
    PairingEstimate pe = reference_pairing(grid, ens.snapshots_u.back(),
                                           K_ref, dict.members[p]);
    ref_p[p] = pe.value;
    ref_se[p] = pe.std_error;
  }

  const double C = std::sqrt(static_cast<double>(M));
  Eigen::MatrixXd eta(n_runs, P);
  parallel_for(n_runs, workers, [&](int64_t run) {
    SimOptions opts;
    opts.T = T;
    opts.dt = dt;
    opts.epsilon = eps;
    opts.init_c = init_c;
    opts.seed = derive_seed(cfg.seed, 42, static_cast<uint64_t>(run));
    opts.snapshot_times = {T};
    opts.n_threads = 1;
    SimulationResult res = simulate_particle_system(model, grid, M, opts);
    WeightedPointCloud cloud = snapshot_cloud(grid, res.snapshots_u.back());
    for (int p = 0; p < P; ++p)
      eta(run, p) = C * (cloud_pairing(cloud, dict.members[p]) - ref_p[p]);
  });

  Eigen::RowVectorXd mean = eta.colwise().mean();
  Eigen::MatrixXd centered = eta.rowwise() - mean;
  Eigen::MatrixXd emp_cov =
      (centered.transpose() * centered) / (n_runs - 1.0);

  CsvBuilder cov_csv("p,q,value,stderr,model_value");
  bool pass = true;
  json checks = json::array();
  for (int a = 0; a < static_cast<int>(midx.size()); ++a)
    for (int b = a; b < static_cast<int>(midx.size()); ++b) {
      int p = midx[a], q = midx[b];
      double se = std::abs(emp_cov(p, q)) * std::sqrt(2.0 / (n_runs - 1.0));
      cov_csv.row(p, q, emp_cov(p, q), se, sigma_raw_T(p, q));
      if (p == q) {
        double rel = std::abs(emp_cov(p, p) - sigma_raw_T(p, p)) /
                     sigma_raw_T(p, p);
        json c;
        c["psi_index"] = p;
        c["empirical"] = emp_cov(p, p);
        c["model"] = sigma_raw_T(p, p);
        c["rel_error"] = rel;
        checks.push_back(c);
        pass = pass && (rel <= tol);
      }
    }
  write_table(out_dir + "/covariance.csv", cfg.config_hash(), cov_csv.str());

  CsvBuilder sig_csv("t,p,q,value");
  int n_sig = static_cast<int>(sigma_y.size());
  int stride = std::max(1, n_sig / 50);
  std::vector<PlotSeries> plot;
  for (size_t a = 0; a < midx.size(); ++a) {
    PlotSeries ps;
    ps.name = "Sigma_" + std::to_string(midx[a]);
    plot.push_back(ps);
  }
  for (int s = 0; s < n_sig; s += stride) {
    Eigen::MatrixXd raw = to_raw(sigma_y[s]);
    double t = s * dt_ode;
    for (size_t a = 0; a < midx.size(); ++a) {
      for (size_t b = 0; b < midx.size(); ++b)
        sig_csv.row(t, midx[a], midx[b], raw(midx[a], midx[b]));
      plot[a].x.push_back(t);
      plot[a].y.push_back(raw(midx[a], midx[a]));
    }
  }
  write_table(out_dir + "/sigma.csv", cfg.config_hash(), sig_csv.str());
  write_text_file(out_dir + "/sigma.svg",
                  svg_line_plot("model covariance diagonal vs t", plot));

  json summary;
  summary["experiment"] = cfg.experiment;
  summary["M"] = M;
  summary["N"] = N;
  summary["T"] = T;
  summary["n_runs"] = n_runs;
  summary["tol"] = tol;
  summary["checks"] = checks;
  summary["galerkin_residual_max"] = sys.residuals.maxCoeff();
  summary["noise_clip"] = sys.clip_C;
  summary["Q0_clip"] = sys.clip_Q0;
  double max_ref_impact = 0.0;
  for (int p = 0; p < P; ++p)
    max_ref_impact = std::max(max_ref_impact, C * ref_se[p]);
  summary["reference_stderr_times_C"] = max_ref_impact;
  summary["pass"] = pass;
  write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
  return pass ? 0 : 3;
}

// ----------------------------------------------------------- spde-only

int run_spde_only(const ExperimentConfig& cfg, const std::string& out_dir,
                  int workers) {
  const json& j = cfg.tree;
  CoefficientModel model = model_from_json(j.value("model", json::object()));
  const double T = gd(j, "T", 0.5), dt = gd(j, "dt", 1e-3);
  const double dt_ode = gd(j, "dt_ode", 1e-3);
  const double eps = gd(j, "epsilon", 0.1);
  const double init_c = gd(j, "init_c", 0.5);
  const int K_ref = gi(j, "K_ref", 64);
  const int N = gi(j, "N", 32);
  const int grid_q = gi(j, "grid_q", 512);
  const int n_mc_q = gi(j, "n_mc_q", 4000);
  const int n_paths = gi(j, "n_paths", 2000);

  TestFunctionDictionary dict =
      dict_from_json(j, model.d, model.d_v, model.alpha);
  const int P = dict.size();
  SpatialGrid grid = SpatialGrid::with_columns(N, model.d);

  SimOptions ens_opts;
  ens_opts.T = T;
  ens_opts.dt = dt;
  ens_opts.epsilon = eps;
  ens_opts.init_c = init_c;
  ens_opts.seed = derive_seed(cfg.seed, 50);
  ens_opts.snapshot_times = linspace_times(T, 11);
  ens_opts.n_threads = workers;
  SimulationResult ens = simulate_mckean_ensemble(model, grid, K_ref,
                                                  ens_opts);
  GalerkinSystem sys = assemble_galerkin(model, grid, ens, K_ref, dict);
  CovarianceEstimate g_est =
      estimate_g(model, grid, ens, K_ref, dict.members, eps);
  set_noise_covariance(sys, g_est, dict);

  InitialDataSampler qinit;
  qinit.c = init_c;
  qinit.alpha = model.alpha;
  qinit.d_v = model.d_v;
  qinit.seed = derive_seed(cfg.seed, 51);
  CovarianceEstimate Q = initial_covariance_Q(
      qinit, SpatialGrid::with_columns(grid_q, 1), dict.members, n_mc_q,
      workers);
  set_initial_covariance(sys, Q.Q, dict);

  Eigen::MatrixXd paths =
      simulate_spde(sys, T, dt, n_paths, derive_seed(cfg.seed, 52));
  std::vector<Eigen::MatrixXd> sigma = covariance_ode(sys, T, dt_ode);
  const Eigen::MatrixXd& sigT = sigma.back();

  Eigen::RowVectorXd mean = paths.colwise().mean();
  Eigen::MatrixXd centered = paths.rowwise() - mean;
  Eigen::MatrixXd mc_cov =
      (centered.transpose() * centered) / (n_paths - 1.0);

  bool pass = true;
  json checks = json::array();
  for (int p = 0; p < P; ++p) {
    double se = mc_cov(p, p) * std::sqrt(2.0 / (n_paths - 1.0));
    double diff = std::abs(mc_cov(p, p) - sigT(p, p));
    json c;
    c["p"] = p;
    c["mc"] = mc_cov(p, p);
    c["ode"] = sigT(p, p);
    c["stderr"] = se;
    checks.push_back(c);
    pass = pass && (diff <= 3.0 * se + 1e-12);
  }

  CsvBuilder sig_csv("t,p,q,value");
  int stride = std::max<int>(1, static_cast<int>(sigma.size()) / 50);
  for (size_t s = 0; s < sigma.size(); s += stride)
    for (int p = 0; p < P; ++p)
      for (int q = 0; q < P; ++q)
        sig_csv.row(static_cast<double>(s) * dt_ode, p, q, sigma[s](p, q));
  write_table(out_dir + "/sigma.csv", cfg.config_hash(), sig_csv.str());
  CsvBuilder path_csv("path_id,p,value");
  for (int r = 0; r < std::min(n_paths, 50); ++r)
    for (int p = 0; p < P; ++p) path_csv.row(r, p, paths(r, p));
  write_table(out_dir + "/paths.csv", cfg.config_hash(), path_csv.str());

  json summary;
  summary["experiment"] = cfg.experiment;
  summary["checks"] = checks;
  summary["galerkin_residual_max"] = sys.residuals.maxCoeff();
  summary["noise_clip"] = sys.clip_C;
  summary["Q0_clip"] = sys.clip_Q0;
  summary["pass"] = pass;
  write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
  return pass ? 0 : 3;
}

// --------------------------------------------------------- oracle-suite

namespace {

WeightedPointCloud random_cloud(const CounterKey& key, int n, int d, int d_v,
                                uint64_t salt) {
  CounterKey k = key.with(salt);
  WeightedPointCloud c;
  c.x.resize(n, d);
  c.u.resize(n, d_v);
  c.w = Eigen::VectorXd::Constant(n, 1.0 / n);
  uint64_t ctr = 0;
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < d; ++a) c.x(i, a) = counter_uniform(k, ctr++);
    for (int a = 0; a < d_v; ++a)
      c.u(i, a) = 3.0 * counter_uniform(k, ctr++);
  }
  return c;
}

}  // namespace

int run_oracle_suite(const ExperimentConfig& cfg, const std::string& out_dir,
                     int workers) {
  (void)workers;
  const json& j = cfg.tree;
  const int n_instances = gi(j, "n_instances", 50);
  const int n_pairs = gi(j, "n_pairs", 20);
  CsvBuilder csv("name,value,expected,tolerance,pass");
  bool all = true;
  auto check = [&](const std::string& name, double value, double expected,
                   double tol) {
    bool ok = std::abs(value - expected) <= tol;
    csv.row(name, value, expected, tol, ok ? "true" : "false");
    all = all && ok;
  };

  Mollifier rho(1);
  check("mollifier_at_0", rho(Eigen::VectorXd::Zero(1)), 1.0, 1e-12);
  check("mollifier_at_half", Mollifier::radial(0.5), 0.5625, 1e-12);
  check("mollifier_outside", Mollifier::radial(1.2), 0.0, 0.0);
  check("correlation_R_at_0", correlation_R_1d(0.0, 0.1), 1.0, 1e-8);
  check("correlation_R_beyond_support", correlation_R_1d(0.25, 0.1), 0.0,
        0.0);
  check("correlation_R_at_eps", correlation_R_1d(0.1, 0.1), 103.0 / 512.0,
        1e-6);

  CounterKey key(derive_seed(cfg.seed, 60));
  double max_ot_err = 0.0;
  for (int inst = 0; inst < n_instances; ++inst) {
    int n = 2 + static_cast<int>(counter_uniform(key.with(1), inst) * 5);
    int p = 1 + (inst % 2);
    WeightedPointCloud a = random_cloud(key, n, 1, 1, 2 * inst);
    WeightedPointCloud b = random_cloud(key, n, 1, 1, 2 * inst + 1);
    double ws = wasserstein(a, b, p, WassersteinMethod::NetworkSimplex);
    double bf = wasserstein_bruteforce(a, b, p);
    max_ot_err = std::max(max_ot_err, std::abs(ws - bf));
  }
  check("transport_vs_bruteforce_max_err", max_ot_err, 0.0, 1e-9);

  // Exactness of the chord linearization on random cloud pairs.
  LinrelaxParams lp;
  lp.lacunary_depth = 2;
  CoefficientModel model = make_linrelax(lp);
  TestFunctionDictionary dict = build_dictionary(1, 1, 3, 3);
  double max_lin_err = 0.0;
  for (int inst = 0; inst < n_pairs; ++inst) {
    WeightedPointCloud mu = random_cloud(key, 6, 1, 1, 1000 + 2 * inst);
    WeightedPointCloud nu = random_cloud(key, 6, 1, 1, 1001 + 2 * inst);
    double t = 0.3;
    const TestFunction& psi = dict.members[inst % dict.size()];
    double lhs = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
      lhs += mu.w[i] * apply_L(model, mu, t, psi, mu.x.row(i).transpose(),
                               mu.u.row(i).transpose());
    for (Eigen::Index i = 0; i < nu.size(); ++i)
      lhs -= nu.w[i] * apply_L(model, nu, t, psi, nu.x.row(i).transpose(),
                               nu.u.row(i).transpose());
    LinearizedGenerator lin(model, mu, nu, t, psi);
    double rhs = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
      rhs += mu.w[i] * lin(mu.x.row(i).transpose(), mu.u.row(i).transpose());
    for (Eigen::Index i = 0; i < nu.size(); ++i)
      rhs -= nu.w[i] * lin(nu.x.row(i).transpose(), nu.u.row(i).transpose());
    max_lin_err = std::max(max_lin_err, std::abs(lhs - rhs));
  }
  check("linearization_identity_max_err", max_lin_err, 0.0, 1e-8);

  // Synthetic power-law fits.
  std::vector<double> sizes = {16, 64, 256, 1024};
  std::vector<double> errs;
  for (double s : sizes) errs.push_back(std::pow(s, -0.5));
  check("fit_rate_exact_half", fit_rate(sizes, errs).slope, -0.5, 1e-12);
  errs.assign(sizes.size(), 0.7);
  check("fit_rate_constant", fit_rate(sizes, errs).slope, 0.0, 1e-12);

  // Coupled zero-test on the interaction-free model.
  {
    CoefficientModel dec = make_decoupled();
    SimOptions opts;
    opts.T = 0.1;
    opts.dt = 1e-2;
    opts.seed = derive_seed(cfg.seed, 61);
    CoupledResult cr =
        coupled_run(dec, SpatialGrid::with_columns(4, 1), 4, {}, opts);
    check("decoupled_coupled_error", cr.error_sup, 0.0, 0.0);
  }

  write_table(out_dir + "/oracles.csv", cfg.config_hash(), csv.str());
  json summary;
  summary["experiment"] = cfg.experiment;
  summary["pass"] = all;
  write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
  return all ? 0 : 3;
}

}  // namespace (experiment runners are file-local up to dispatch)

int run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                   int workers) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  std::filesystem::create_directories(out_dir);
  if (cfg.experiment == "mean-field-rate")
    return run_mean_field_rate(cfg, out_dir, workers);
  if (cfg.experiment == "wasserstein-decay")
    return run_wasserstein_decay(cfg, out_dir, workers);
  if (cfg.experiment == "qv-convergence")
    return run_qv_convergence(cfg, out_dir, workers);
  if (cfg.experiment == "clt-initial")
    return run_clt_initial(cfg, out_dir, workers);
  if (cfg.experiment == "clt-trajectory")
    return run_clt_trajectory(cfg, out_dir, workers);
  if (cfg.experiment == "spde-only")
    return run_spde_only(cfg, out_dir, workers);
  if (cfg.experiment == "oracle-suite")
    return run_oracle_suite(cfg, out_dir, workers);
  throw ConfigError("unknown experiment: " + cfg.experiment);
}

}  // namespace meanfield
