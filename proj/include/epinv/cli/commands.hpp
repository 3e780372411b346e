#pragma once

// Batch commands behind the `epinv` executable. Each command reads a flat
// key-value config, writes its outputs into one directory and always leaves
// a summary.json there, including on failure.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad input (missing,
// malformed or inconsistent files, unknown keys).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "epinv/eit/problem.hpp"
#include "epinv/ep/engine.hpp"
#include "epinv/io/config.hpp"
#include "epinv/io/csv.hpp"
#include "epinv/mcmc/chain.hpp"
#include "epinv/nonlinear/driver.hpp"
#include "epinv/tilted/factors.hpp"

namespace epinv::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

/// Input problem that maps to a fixed exit code and error string.
class InputError : public std::runtime_error {
 public:
  InputError(std::string code, const std::string& what) : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct RunContext {
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      // problem
      "problem", "prior", "alpha", "lambda", "floor", "background", "seed", "case",
      // linear problem
      "rows", "cols", "decoupled", "matrix", "data", "truth_amplitude", "noise_std",
      // eit problem
      "mesh", "electrodes", "impedances", "patterns", "current", "radius", "electrode_width",
      "data_mesh", "data_mesh_nodes", "inclusions",
      // mesh generation
      "nodes", "boundary_per_period", "first_electrode_angle", "refine", "file",
      // ep
      "max_sweeps", "site_tol", "sweep_mode", "on_downdate_failure", "max_outer", "outer_tol", "step_rule",
      "warm_start", "full_cov_limit",
      // mcmc
      "chains", "steps", "burn_in", "thin", "proposal_std", "adapt", "pilot_steps", "init_spread", "same_seed",
      "dump_samples",
      // compare
      "ep_dir", "mcmc_dir"};
  return keys;
}

// ---------------------------------------------------------------------------
// Problem assembly
// ---------------------------------------------------------------------------

struct Problem {
  std::string kind;  // "linear" or "eit"
  std::string prior;  // "laplace" or "gaussian"
  std::unique_ptr<nonlinear::ForwardModel> model;
  VectorXd data;
  double alpha = 1.0;
  double lambda = 1.0;
  double floor = 0.0;
  VectorXd background;
  /// Output id of each parameter (mesh node ids for EIT).
  std::vector<int> ids;

  Index dim() const { return background.size(); }

  std::vector<ep::Site> sites() const {
    if (prior == "laplace") {
      if (kind == "eit") return eit::laplace_prior_sites(dim(), lambda, background(0), floor);
      std::vector<ep::Site> out;
      for (Index k = 0; k < dim(); ++k) {
        out.push_back(ep::coordinate_site(dim(), k, std::make_shared<tilted::LaplacePositivity>(
                                                         tilted::LaplacePositivityFactor{lambda, background(k), floor})));
      }
      return out;
    }
    // Gaussian prior with the Laplace variance 2 / lambda^2.
    std::vector<ep::Site> out;
    for (Index k = 0; k < dim(); ++k) {
      const MomentGaussian g(VectorXd::Constant(1, background(k)), MatrixXd::Constant(1, 1, 2.0 / (lambda * lambda)));
      out.push_back(ep::coordinate_site(dim(), k, std::make_shared<tilted::GaussianFactor>(g)));
    }
    return out;
  }

  mcmc::LogDensity log_density() const {
    const nonlinear::ForwardModel* m = model.get();
    if (prior == "laplace") {
      return mcmc::make_log_posterior(*m, data, {alpha, lambda, background, floor});
    }
    const double prec = lambda * lambda / 2.0;
    return [m, d = data, a = alpha, bg = background, prec](const VectorXd& x) {
      return -0.5 * a * (m->evaluate(x) - d).squaredNorm() - 0.5 * prec * (x - bg).squaredNorm();
    };
  }
};

inline std::string require_file(const io::Config& cfg, const std::string& key, const std::string& missing_code) {
  const std::string path = cfg.require_string(key);
  if (!fs::exists(path)) throw InputError(missing_code, key + " file not found: " + path);
  return path;
}

inline eit::CEMConfig cem_config(const io::Config& cfg) {
  const int L = int(cfg.get_long("electrodes", eit::TankDefaults::electrodes));
  if (L < 2) throw ParseError("config: electrodes must be at least 2");
  eit::CEMConfig c = eit::default_config(L);
  if (cfg.has("impedances")) {
    c.z = cfg.get_doubles("impedances");
    if (int(c.z.size()) != L) throw ParseError("config: impedances must list one value per electrode");
  }
  const double current = cfg.get_double("current", eit::TankDefaults::current);
  const std::string pats = cfg.get_string("patterns", "adjacent");
  if (pats == "adjacent") {
    c.patterns = eit::adjacent_patterns(L, current);
  } else {
    c.patterns.clear();
    std::stringstream ss(pats);
    std::string tok;
    while (ss >> tok) {
      if (!tok.empty() && tok.back() == ',') tok.pop_back();
      if (tok.empty()) continue;
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw ParseError("config: pattern '" + tok + "' is not source:sink");
      try {
        c.patterns.push_back({std::stoi(tok.substr(0, colon)), std::stoi(tok.substr(colon + 1)), current});
      } catch (const std::exception&) {
        throw ParseError("config: pattern '" + tok + "' is not source:sink");
      }
    }
  }
  c.validate();
  return c;
}

inline eit::DiskMeshOptions mesh_options(const io::Config& cfg, int default_nodes) {
  eit::DiskMeshOptions o;
  o.radius = cfg.get_double("radius", eit::TankDefaults::radius);
  o.electrodes = int(cfg.get_long("electrodes", eit::TankDefaults::electrodes));
  const double width = cfg.get_double("electrode_width", eit::TankDefaults::electrode_width);
  o.coverage = o.electrodes * width / (2.0 * std::numbers::pi * o.radius);
  o.target_nodes = int(cfg.get_long("nodes", default_nodes));
  o.boundary_per_period = int(cfg.get_long("boundary_per_period", 0));
  o.first_electrode_angle = cfg.get_double("first_electrode_angle", 0.0);
  return o;
}

/// Truth inclusions "x y radius sigma; ...". Without the key: one insulating
/// cylinder of radius 0.03 at (0.05, 0). "none" gives a homogeneous truth.
inline std::vector<eit::Inclusion> inclusions(const io::Config& cfg) {
  std::vector<eit::Inclusion> out;
  if (!cfg.has("inclusions")) {
    out.push_back({0.05, 0.0, 0.03, cfg.get_double("floor", eit::TankDefaults::floor)});
    return out;
  }
  if (cfg.get_string("inclusions", "") == "none") return out;
  for (const auto& g : cfg.get_groups("inclusions")) {
    if (g.size() != 4) throw ParseError("config: each inclusion needs x y radius sigma");
    out.push_back({g[0], g[1], g[2], g[3]});
  }
  return out;
}

inline Problem linear_problem(const io::Config& cfg, std::uint64_t seed) {
  Problem p;
  p.kind = "linear";
  p.alpha = cfg.get_double("alpha", 1.0);
  p.lambda = cfg.get_double("lambda", 1.0);
  p.floor = cfg.get_double("floor", 0.0);
  const double bg = cfg.get_double("background", 0.0);
  MatrixXd A;
  if (cfg.has("matrix")) {
    A = io::read_matrix_csv(require_file(cfg, "matrix", "matrix_not_found"));
  } else if (cfg.get_bool("decoupled", false)) {
    A = MatrixXd::Identity(cfg.get_long("cols", 6), cfg.get_long("cols", 6));
  } else {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    A.resize(cfg.get_long("rows", 20), cfg.get_long("cols", 12));
    for (Index j = 0; j < A.cols(); ++j)
      for (Index i = 0; i < A.rows(); ++i) A(i, j) = nd(rng);
  }
  p.background = VectorXd::Constant(A.cols(), bg);
  if (cfg.has("data")) {
    p.data = io::read_indexed_csv(require_file(cfg, "data", "data_not_found")).second;
    if (p.data.size() != A.rows()) throw ShapeMismatch("data length differs from matrix rows");
  } else {
    // Truth: background plus a bump on every fourth component.
    VectorXd truth = p.background;
    const double amp = cfg.get_double("truth_amplitude", 1.0);
    for (Index k = 0; k < truth.size(); k += 4) truth(k) += amp;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> nd(0.0, cfg.get_double("noise_std", 1.0 / std::sqrt(p.alpha)));
    p.data = A * truth;
    for (Index i = 0; i < p.data.size(); ++i) p.data(i) += nd(rng);
  }
  p.model = std::make_unique<nonlinear::LinearModel>(A);
  for (Index k = 0; k < A.cols(); ++k) p.ids.push_back(int(k));
  return p;
}


inline eit::Mesh load_mesh(const io::Config& cfg, const std::string& key) {
  return eit::read_mesh(require_file(cfg, key, key == "mesh" ? "mesh_not_found" : "data_mesh_not_found"));
}

/// Data mesh from `data_mesh`, or generated with `data_mesh_nodes` and ten
/// boundary nodes per electrode period so it never coincides with the
/// inversion mesh layout.
inline eit::Mesh data_mesh(const io::Config& cfg) {
  if (cfg.has("data_mesh")) return load_mesh(cfg, "data_mesh");
  eit::DiskMeshOptions o = mesh_options(cfg, 1200);
  o.target_nodes = int(cfg.get_long("data_mesh_nodes", 1200));
  o.boundary_per_period = 10;
  return eit::gen_disk_mesh(o);
}

inline double eit_noise_std(const io::Config& cfg) {
  return cfg.get_double("noise_std", 1.0 / std::sqrt(cfg.get_double("alpha", eit::TankDefaults::alpha)));
}

inline Problem eit_problem(const io::Config& cfg, std::uint64_t seed) {
  Problem p;
  p.kind = "eit";
  p.alpha = cfg.get_double("alpha", eit::TankDefaults::alpha);
  p.lambda = cfg.get_double("lambda", eit::TankDefaults::lambda);
  p.floor = cfg.get_double("floor", eit::TankDefaults::floor);
  const double bg = cfg.get_double("background", eit::TankDefaults::sigma_bg);
  eit::Mesh mesh = load_mesh(cfg, "mesh");
  const eit::CEMConfig cem = cem_config(cfg);
  if (cem.electrodes() != int(mesh.electrode_count())) {
    throw ShapeMismatch("config electrodes differ from the mesh electrode count");
  }
  const auto idx = eit::measurement_index(cem);
  if (cfg.has("data")) {
    p.data = eit::read_data_csv(require_file(cfg, "data", "data_not_found"), idx);
  } else {
    const eit::Mesh fine = data_mesh(cfg);
    const VectorXd truth = eit::piecewise_conductivity(fine, bg, inclusions(cfg));
    p.data = eit::synth_data(fine, cem, truth, eit_noise_std(cfg), seed).data;
  }
  p.ids = mesh.interior;
  p.background = VectorXd::Constant(Index(mesh.interior.size()), bg);
  p.model = std::make_unique<eit::EITModel>(std::move(mesh), cem, bg, p.floor);
  return p;
}

inline Problem build_problem(const io::Config& cfg, std::uint64_t seed) {
  const std::string kind = cfg.get_string("problem", "linear");
  Problem p;
  if (kind == "linear") {
    p = linear_problem(cfg, seed);
  } else if (kind == "eit") {
    p = eit_problem(cfg, seed);
  } else {
    throw ParseError("config: problem must be linear or eit");
  }
  p.prior = cfg.get_string("prior", "laplace");
  if (p.prior != "laplace" && p.prior != "gaussian") throw ParseError("config: prior must be laplace or gaussian");
  if (!(p.alpha > 0.0) || !(p.lambda > 0.0)) throw ParseError("config: alpha and lambda must be positive");
  return p;
}

inline ep::EPOptions ep_options(const io::Config& cfg, unsigned threads) {
  ep::EPOptions o;
  o.max_sweeps = int(cfg.get_long("max_sweeps", o.max_sweeps));
  o.site_tol = cfg.get_double("site_tol", o.site_tol);
  o.full_cov_limit = cfg.get_long("full_cov_limit", o.full_cov_limit);
  o.threads = threads;
  const std::string mode = cfg.get_string("sweep_mode", "serial");
  if (mode == "serial") {
    o.sweep_mode = ep::SweepMode::Serial;
  } else if (mode == "parallel") {
    o.sweep_mode = ep::SweepMode::Parallel;
  } else {
    throw ParseError("config: sweep_mode must be serial or parallel");
  }
  const std::string pol = cfg.get_string("on_downdate_failure", "skip");
  if (pol == "skip") {
    o.on_downdate_failure = ep::DowndatePolicy::SkipSite;
  } else if (pol == "abort") {
    o.on_downdate_failure = ep::DowndatePolicy::Abort;
  } else {
    throw ParseError("config: on_downdate_failure must be skip or abort");
  }
  return o;
}

inline nonlinear::NonlinearOptions nonlinear_options(const io::Config& cfg, const Problem& p, unsigned threads) {
  nonlinear::NonlinearOptions o;
  o.inner = ep_options(cfg, threads);
  o.alpha = p.alpha;
  o.max_outer = int(cfg.get_long("max_outer", o.max_outer));
  o.outer_tol = cfg.get_double("outer_tol", o.outer_tol);
  o.warm_start = cfg.get_bool("warm_start", o.warm_start);
  const std::string rule = cfg.get_string("step_rule", "secant");
  if (rule == "secant") {
    o.step_rule = nonlinear::StepRule::Secant;
  } else if (rule == "bb") {
    o.step_rule = nonlinear::StepRule::BarzilaiBorwein;
  } else if (rule == "unit") {
    o.step_rule = nonlinear::StepRule::Unit;
  } else {
    throw ParseError("config: step_rule must be secant, bb or unit");
  }
  return o;
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open " + path.string() + " for writing");
  os << j.dump(2) << "\n";
}

inline json base_summary(const std::string& command, const RunContext& ctx, std::uint64_t seed) {
  return json{{"schema_version", kSchemaVersion}, {"command", command}, {"status", "ok"},
              {"seed", seed}, {"threads", ctx.threads}};
}

inline void write_trace(const fs::path& path, const std::vector<nonlinear::TraceRow>& rows) {
  auto os = io::open_out(path.string());
  os << "outer,inner,e_p_mu,e_f_mu,e_p_C,e_f_C\n";
  for (const auto& r : rows) {
    os << r.outer << ',' << r.inner << ',' << io::fmt(r.metrics.e_p_mu) << ',' << io::fmt(r.metrics.e_f_mu) << ','
       << io::fmt(r.metrics.e_p_C) << ',' << io::fmt(r.metrics.e_f_C) << "\n";
  }
}

inline json skipped_json(const std::vector<ep::SkippedSite>& skipped) {
  json arr = json::array();
  for (const auto& s : skipped) {
    arr.push_back({{"sweep", s.sweep}, {"site", s.site}, {"code", s.code}, {"reason", s.reason}});
  }
  return arr;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline json cmd_ep(const io::Config& cfg, const RunContext& ctx, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const Problem p = build_problem(cfg, seed);
  std::vector<ep::Site> sites = p.sites();
  json summary = base_summary("ep", ctx, seed);
  summary["problem"] = p.kind;
  summary["prior"] = p.prior;
  summary["dimension"] = p.dim();

  VectorXd mean;
  MatrixXd cov;
  std::vector<nonlinear::TraceRow> trace;
  if (p.kind == "linear") {
    // Linear model: one EP solve of the exact Gaussian likelihood.
    const NaturalParams base = nonlinear::linearize(p.model->evaluate(VectorXd::Zero(p.dim())),
                                                    p.model->jacobian(VectorXd::Zero(p.dim())),
                                                    VectorXd::Zero(p.dim()), p.data, p.alpha);
    const ep::EPResult r = ep::run_ep(base, sites, ep_options(cfg, ctx.threads));
    const auto metrics = ep::convergence_metrics(r.snapshots);
    for (std::size_t j = 0; j < metrics.size(); ++j) trace.push_back({1, int(j) + 1, metrics[j]});
    mean = r.mean;
    cov = r.cov;
    summary["outer_iterations"] = 1;
    summary["total_inner_sweeps"] = r.sweeps_used;
    summary["converged"] = r.converged;
    summary["skipped_sites"] = skipped_json(r.skipped_sites);
  } else {
    const auto opts = nonlinear_options(cfg, p, ctx.threads);
    const auto r = nonlinear::run_nonlinear(*p.model, p.data, p.background, sites, opts);
    trace = r.trace;
    mean = r.mean;
    cov = r.cov;
    summary["outer_iterations"] = r.outer_iterations;
    summary["total_inner_sweeps"] = r.total_inner_sweeps;
    summary["converged"] = r.converged;
    summary["skipped_sites"] = skipped_json(r.skipped_sites);
    json outer = json::array();
    for (const auto& o : r.outer) {
      outer.push_back({{"outer", o.outer}, {"tau", o.tau}, {"mean_change", o.mean_change},
                       {"residual_norm", o.residual_norm}, {"inner_sweeps", o.inner_sweeps},
                       {"inner_converged", o.inner_converged}});
    }
    summary["outer"] = outer;
  }
  const fs::path out(ctx.out_dir);
  io::write_indexed_csv((out / "mean.csv").string(), "node", "mean", mean, p.ids);
  io::write_indexed_csv((out / "std.csv").string(), "node", "std", VectorXd(cov.diagonal().cwiseSqrt()), p.ids);
  const Index limit = cfg.get_long("full_cov_limit", 1000);
  summary["cov_written"] = p.dim() <= limit;
  if (p.dim() <= limit) io::write_matrix_csv((out / "cov.csv").string(), cov);
  write_trace(out / "trace.csv", trace);
  summary["wall_time_s"] = seconds_since(t0);
  return summary;
}

inline json cmd_mcmc(const io::Config& cfg, const RunContext& ctx, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const Problem p = build_problem(cfg, seed);
  const mcmc::LogDensity logp = p.log_density();
  const int n_chains = int(cfg.get_long("chains", 8));
  if (n_chains < 2) throw ParseError("config: chains must be at least 2");
  const bool same_seed = cfg.get_bool("same_seed", false);

  mcmc::ChainConfig base;
  base.steps = cfg.get_long("steps", 1'000'000);
  base.burn_in = cfg.get_long("burn_in", base.steps / 10);
  base.thin = cfg.get_long("thin", 10);
  base.proposal_std = VectorXd::Constant(1, cfg.get_double("proposal_std", 0.5 / p.lambda));
  base.store_samples = cfg.get_bool("dump_samples", false);
  base.seed = seed;

  // Overdispersed starts around the background, clamped into the support.
  const double spread = cfg.get_double("init_spread", 3.0 / p.lambda);
  std::vector<VectorXd> inits;
  std::vector<mcmc::ChainConfig> cfgs;
  std::mt19937_64 init_rng(seed ^ 0xd1b54a32d192ed03ULL);
  std::normal_distribution<double> nd;
  for (int k = 0; k < n_chains; ++k) {
    VectorXd x = p.background;
    if (!same_seed || k == 0) {
      for (Index i = 0; i < x.size(); ++i) x(i) += spread * nd(init_rng);
      if (p.prior == "laplace") x = x.cwiseMax(p.floor);
    } else {
      x = inits.front();
    }
    inits.push_back(x);
    mcmc::ChainConfig c = base;
    c.seed = same_seed ? seed : seed + 1000 * std::uint64_t(k);
    cfgs.push_back(c);
  }
  json summary = base_summary("mcmc", ctx, seed);
  summary["problem"] = p.kind;
  summary["dimension"] = p.dim();
  if (cfg.get_bool("adapt", true)) {
    mcmc::AdaptOptions ao;
    ao.pilot_steps = cfg.get_long("pilot_steps", ao.pilot_steps);
    const auto a = mcmc::adapt_proposal(base, inits.front(), logp, ao);
    for (auto& c : cfgs) c.proposal_std = a.proposal_std;
    summary["adapt_pilots"] = a.pilots;
    summary["adapt_acceptance"] = a.acceptance;
  }
  summary["proposal_std"] = cfgs.front().proposal_std(0);

  const auto chains = mcmc::run_chains(cfgs, inits, logp, ctx.threads);
  const auto rep = mcmc::multi_chain_report(chains);
  const fs::path out(ctx.out_dir);
  json acc = json::array();
  for (int k = 0; k < n_chains; ++k) {
    const auto& c = chains[std::size_t(k)];
    auto os = io::open_out((out / ("chain_" + std::to_string(k) + ".csv")).string());
    os << "node,mean,std\n";
    for (Index i = 0; i < p.dim(); ++i) {
      os << p.ids[std::size_t(i)] << ',' << io::fmt(c.mean(i)) << ',' << io::fmt(c.std(i)) << "\n";
    }
    if (base.store_samples) io::write_matrix_csv((out / ("chain_" + std::to_string(k) + "_samples.csv")).string(), c.samples);
    acc.push_back(c.acceptance_rate);
  }
  io::write_indexed_csv((out / "mean.csv").string(), "node", "mean", rep.mean, p.ids);
  io::write_indexed_csv((out / "std.csv").string(), "node", "std", rep.pooled_std, p.ids);
  {
    auto os = io::open_out((out / "table3.csv").string());
    os << "case,mean_err,std_err,rhat\n";
    os << cfg.get_string("case", "1") << ',' << io::fmt(rep.mean_err) << ',' << io::fmt(rep.std_err) << ','
       << io::fmt(rep.max_rhat) << "\n";
  }
  summary["chains"] = n_chains;
  summary["steps"] = base.steps;
  summary["burn_in"] = base.burn_in;
  summary["thin"] = base.thin;
  summary["samples_kept"] = chains.front().samples_kept;
  summary["acceptance_rates"] = acc;
  summary["mean_err"] = rep.mean_err;
  summary["std_err"] = rep.std_err;
  summary["max_rhat"] = rep.max_rhat;
  summary["wall_time_s"] = seconds_since(t0);
  return summary;
}

inline json cmd_compare(const io::Config& cfg, const RunContext& ctx, std::uint64_t seed) {
  const fs::path a_dir = cfg.require_string("ep_dir");
  const fs::path b_dir = cfg.require_string("mcmc_dir");
  auto load = [](const fs::path& dir, const std::string& name) {
    const fs::path f = dir / name;
    if (!fs::exists(f)) throw InputError("input_not_found", "missing " + f.string());
    return io::read_indexed_csv(f.string());
  };
  const auto [ids_a, mean_a] = load(a_dir, "mean.csv");
  const auto [ids_b, mean_b] = load(b_dir, "mean.csv");
  const auto [sids_a, std_a] = load(a_dir, "std.csv");
  const auto [sids_b, std_b] = load(b_dir, "std.csv");
  if (ids_a != ids_b || sids_a != ids_a || sids_b != ids_b) {
    throw ShapeMismatch("compare: node sets of the two runs differ");
  }
  auto rel = [](double a, double b) { return b != 0.0 ? std::abs(a - b) / std::abs(b) : std::abs(a - b); };
  const fs::path out(ctx.out_dir);
  auto os = io::open_out((out / "compare.csv").string());
  os << "node,ep_mean,mcmc_mean,mean_rel_diff,ep_std,mcmc_std,std_rel_diff\n";
  for (std::size_t i = 0; i < ids_a.size(); ++i) {
    const Index k = Index(i);
    os << ids_a[i] << ',' << io::fmt(mean_a(k)) << ',' << io::fmt(mean_b(k)) << ','
       << io::fmt(rel(mean_a(k), mean_b(k))) << ',' << io::fmt(std_a(k)) << ',' << io::fmt(std_b(k)) << ','
       << io::fmt(rel(std_a(k), std_b(k))) << "\n";
  }
  auto rel2 = [](const VectorXd& a, const VectorXd& b) {
    return b.norm() > 0.0 ? (a - b).norm() / b.norm() : (a - b).norm();
  };
  json summary = base_summary("compare", ctx, seed);
  summary["dimension"] = ids_a.size();
  summary["mean_rel_2norm"] = rel2(mean_a, mean_b);
  summary["std_rel_2norm"] = rel2(std_a, std_b);
  const VectorXd ratio = std_a.cwiseQuotient(std_b);
  summary["std_ratio_min"] = ratio.size() ? ratio.minCoeff() : 1.0;
  summary["std_ratio_max"] = ratio.size() ? ratio.maxCoeff() : 1.0;
  return summary;
}

inline json cmd_synth(const io::Config& cfg, const RunContext& ctx, std::uint64_t seed) {
  const eit::Mesh fine = data_mesh(cfg);
  if (cfg.has("mesh")) {
    const eit::Mesh coarse = load_mesh(cfg, "mesh");
    if (coarse.nodes == fine.nodes) {
      throw InputError("inverse_crime", "data mesh and inversion mesh are identical");
    }
  }
  const eit::CEMConfig cem = cem_config(cfg);
  const double bg = cfg.get_double("background", eit::TankDefaults::sigma_bg);
  const VectorXd truth = eit::piecewise_conductivity(fine, bg, inclusions(cfg));
  const double noise = eit_noise_std(cfg);
  const auto r = eit::synth_data(fine, cem, truth, noise, seed);
  const fs::path out(ctx.out_dir);
  eit::write_data_csv((out / "data.csv").string(), eit::measurement_index(cem), r.data);
  io::write_indexed_csv((out / "truth.csv").string(), "node", "sigma", truth);
  if (!cfg.has("data_mesh")) eit::write_mesh((out / "data_mesh.txt").string(), fine);
  json summary = base_summary("synth", ctx, seed);
  summary["data_mesh_nodes"] = fine.nodes.size();
  summary["measurements"] = r.data.size();
  summary["noise_std"] = noise;
  return summary;
}

inline json cmd_mesh(const io::Config& cfg, const RunContext& ctx, std::uint64_t seed) {
  eit::Mesh m = eit::gen_disk_mesh(mesh_options(cfg, 424));
  const long levels = cfg.get_long("refine", 0);
  const double radius = cfg.get_double("radius", eit::TankDefaults::radius);
  for (long k = 0; k < levels; ++k) m = eit::refine_uniform(m, radius);
  const std::string name = cfg.get_string("file", "mesh.txt");
  eit::write_mesh((fs::path(ctx.out_dir) / name).string(), m);
  json summary = base_summary("mesh", ctx, seed);
  summary["file"] = name;
  summary["nodes"] = m.nodes.size();
  summary["triangles"] = m.triangles.size();
  summary["interior_nodes"] = m.interior.size();
  summary["boundary_nodes"] = eit::boundary_nodes(m).size();
  summary["min_angle_deg"] = eit::min_angle_degrees(m);
  return summary;
}

inline const std::set<std::string>& command_names() {
  static const std::set<std::string> names = {"ep", "mcmc", "compare", "synth", "mesh"};
  return names;
}

/// Runs one command end to end and returns the process exit code. A
/// summary.json with status "ok" or "error" is written to ctx.out_dir.
inline int run_command(const std::string& command, const std::string& config_path, const RunContext& ctx) {
  const fs::path out(ctx.out_dir);
  std::uint64_t seed = ctx.seed.value_or(1);
  auto fail = [&](int exit_code, const std::string& code, const std::string& message) {
    json s = base_summary(command, ctx, seed);
    s["status"] = "error";
    s["error"] = {{"code", code}, {"message", message}};
    try {
      write_json(out / "summary.json", s);
    } catch (const std::exception&) {
    }
    return exit_code;
  };
  try {
    fs::create_directories(out);
  } catch (const std::exception& e) {
    return 2;
  }
  try {
    if (!command_names().count(command)) throw InputError("unknown_command", "unknown command " + command);
    if (!fs::exists(config_path)) throw InputError("config_not_found", "config file not found: " + config_path);
    const io::Config cfg = io::read_config(config_path);
    cfg.check_keys(known_keys());
    if (!ctx.seed) seed = cfg.get_u64("seed", 1);
    json summary;
    if (command == "ep") summary = cmd_ep(cfg, ctx, seed);
    else if (command == "mcmc") summary = cmd_mcmc(cfg, ctx, seed);
    else if (command == "compare") summary = cmd_compare(cfg, ctx, seed);
    else if (command == "synth") summary = cmd_synth(cfg, ctx, seed);
    else summary = cmd_mesh(cfg, ctx, seed);
    write_json(out / "summary.json", summary);
    return 0;
  } catch (const InputError& e) {
    return fail(2, e.code(), e.what());
  } catch (const ParseError& e) {
    return fail(2, e.code(), e.what());
  } catch (const ShapeMismatch& e) {
    return fail(2, e.code(), e.what());
  } catch (const Error& e) {
    return fail(1, e.code(), e.what());
  } catch (const std::invalid_argument& e) {
    return fail(2, "invalid_argument", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal_error", e.what());
  }
}

}  // namespace epinv::cli
