#pragma once

// Random-walk Metropolis-Hastings with streaming statistics, pilot-run
// proposal adaptation and multi-chain diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "epinv/errors.hpp"
#include "epinv/nonlinear/driver.hpp"
#include "epinv/parallel.hpp"

namespace epinv::mcmc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using LogDensity = std::function<double(const VectorXd&)>;

/// Parameters of the Laplace-positivity posterior
///   -alpha/2 ||F(x) - b||^2 - lambda ||x - background||_1,  x >= floor.
struct PosteriorParams {
  double alpha = 1.0;
  double lambda = 1.0;
  VectorXd background;
  double floor = 0.0;
};

/// Unnormalized log posterior; -inf outside the admissible set.
inline double log_posterior(const VectorXd& x, const nonlinear::ForwardModel& model, const VectorXd& data,
                            const PosteriorParams& p) {
  if (x.size() != model.param_dim() || p.background.size() != x.size()) {
    throw ShapeMismatch("log_posterior: parameter length mismatch");
  }
  if ((x.array() < p.floor).any()) return -std::numeric_limits<double>::infinity();
  const double misfit = (model.evaluate(x) - data).squaredNorm();
  return -0.5 * p.alpha * misfit - p.lambda * (x - p.background).lpNorm<1>();
}

inline LogDensity make_log_posterior(const nonlinear::ForwardModel& model, VectorXd data, PosteriorParams p) {
  return [&model, data = std::move(data), p = std::move(p)](const VectorXd& x) {
    return log_posterior(x, model, data, p);
  };
}

/// Welford accumulator for componentwise mean and unbiased variance.
class RunningStats {
 public:
  RunningStats() = default;
  explicit RunningStats(Index n) : mean_(VectorXd::Zero(n)), m2_(VectorXd::Zero(n)) {}

  void add(const VectorXd& x) {
    if (mean_.size() == 0) {
      mean_ = VectorXd::Zero(x.size());
      m2_ = VectorXd::Zero(x.size());
    }
    ++count_;
    const VectorXd delta = x - mean_;
    mean_ += delta / double(count_);
    m2_ += delta.cwiseProduct(x - mean_);
  }

  long count() const { return count_; }
  const VectorXd& mean() const { return mean_; }
  VectorXd variance() const {
    if (count_ < 2) return VectorXd::Zero(mean_.size());
    return m2_ / double(count_ - 1);
  }

 private:
  long count_ = 0;
  VectorXd mean_;
  VectorXd m2_;
};

struct ChainConfig {
  long steps = 1'000'000;
  long burn_in = 100'000;
  long thin = 10;
  /// Length 1 for an isotropic proposal, else one std per component.
  VectorXd proposal_std = VectorXd::Constant(1, 0.1);
  std::uint64_t seed = 1;
  double target_acceptance = 0.234;
  /// Keep the thinned samples (one row each) in the summary.
  bool store_samples = false;

  void validate(Index dim) const {
    if (steps <= 0 || burn_in < 0 || burn_in >= steps || thin < 1) {
      throw std::invalid_argument("ChainConfig: need 0 <= burn_in < steps and thin >= 1");
    }
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) {
      throw std::invalid_argument("ChainConfig: target_acceptance must lie in (0, 1)");
    }
    if (proposal_std.size() != 1 && proposal_std.size() != dim) {
      throw ShapeMismatch("ChainConfig: proposal_std must have length 1 or the state dimension");
    }
    if ((proposal_std.array() < 0.0).any()) throw std::invalid_argument("ChainConfig: negative proposal std");
  }
};

struct ChainSummary {
  VectorXd mean;
  VectorXd std;
  VectorXd var;  // unbiased within-chain variance
  double acceptance_rate = 0.0;
  long samples_kept = 0;
  MatrixXd samples;  // filled when store_samples is set
};

/// Metropolis rule for a symmetric proposal: accept iff log u < log ratio.
inline bool metropolis_accept(double log_ratio, double u) { return std::log(u) < log_ratio; }

inline ChainSummary mh_chain(const ChainConfig& cfg, const VectorXd& init, const LogDensity& log_density) {
  cfg.validate(init.size());
  const Index n = init.size();
  VectorXd x = init;
  double lp = log_density(x);
  if (!(lp > -std::numeric_limits<double>::infinity())) {
    throw std::invalid_argument("mh_chain: initial state has zero posterior density");
  }
  const VectorXd scale = cfg.proposal_std.size() == 1 ? VectorXd::Constant(n, cfg.proposal_std(0))
                                                      : cfg.proposal_std;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  RunningStats stats(n);
  const long kept_max = (cfg.steps - cfg.burn_in + cfg.thin - 1) / cfg.thin;
  ChainSummary out;
  if (cfg.store_samples) out.samples.resize(kept_max, n);
  long accepted = 0;
  VectorXd prop(n);
  for (long step = 0; step < cfg.steps; ++step) {
    for (Index i = 0; i < n; ++i) prop(i) = x(i) + scale(i) * normal(rng);
    const double lp_prop = log_density(prop);
    const double u = unif(rng);
    if (lp_prop > -std::numeric_limits<double>::infinity() && metropolis_accept(lp_prop - lp, u)) {
      x.swap(prop);
      lp = lp_prop;
      ++accepted;
    }
    if (step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0) {
      if (cfg.store_samples) out.samples.row(stats.count()) = x.transpose();
      stats.add(x);
    }
  }
  out.mean = stats.mean();
  out.var = stats.variance();
  out.std = out.var.cwiseSqrt();
  out.acceptance_rate = double(accepted) / double(cfg.steps);
  out.samples_kept = stats.count();
  return out;
}

struct AdaptOptions {
  long pilot_steps = 20'000;
  int max_pilots = 30;
  double band_lo = 0.18;
  double band_hi = 0.30;
};

struct AdaptResult {
  VectorXd proposal_std;
  double acceptance = 0.0;
  int pilots = 0;
};

/// Scales cfg.proposal_std by doubling/halving until the acceptance rate is
/// bracketed, then bisects on the log scale until it lies in the band.
/// Pilot k uses seed cfg.seed + k; the measured run is not touched.
inline AdaptResult adapt_proposal(const ChainConfig& cfg, const VectorXd& init, const LogDensity& log_density,
                                  const AdaptOptions& opts = {}) {
  if (opts.max_pilots < 2) throw std::invalid_argument("adapt_proposal: need at least two pilots");
  double s = 1.0;
  double s_small = 0.0, s_large = 0.0;  // 0 marks an open bracket end
  for (int k = 0; k < opts.max_pilots; ++k) {
    ChainConfig pilot = cfg;
    pilot.steps = opts.pilot_steps;
    pilot.burn_in = 0;
    pilot.thin = 1;
    pilot.store_samples = false;
    pilot.proposal_std = cfg.proposal_std * s;
    pilot.seed = cfg.seed + std::uint64_t(k);
    const double acc = mh_chain(pilot, init, log_density).acceptance_rate;
    if (acc >= opts.band_lo && acc <= opts.band_hi) return {pilot.proposal_std, acc, k + 1};
    if (acc > opts.band_hi) {
      s_small = s;
      s = s_large > 0.0 ? std::sqrt(s_small * s_large) : 2.0 * s;
    } else {
      s_large = s;
      s = s_small > 0.0 ? std::sqrt(s_small * s_large) : 0.5 * s;
    }
  }
  throw AdaptFailed("adapt_proposal: acceptance rate not in band after " + std::to_string(opts.max_pilots) +
                    " pilots");
}

/// Potential scale reduction per component,
///   R = sqrt((W + (1 + 1/m) B/n) / W),
/// with W the mean within-chain variance and B/n the variance of the chain
/// means. Identical chains give B = 0 and R = 1 exactly.
inline VectorXd brooks_gelman(const std::vector<ChainSummary>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("brooks_gelman: need at least two chains");
  const Index n = chains.front().mean.size();
  for (const auto& c : chains) {
    if (c.mean.size() != n || c.var.size() != n) throw ShapeMismatch("brooks_gelman: chain dimensions differ");
    if (c.samples_kept != chains.front().samples_kept) {
      throw ShapeMismatch("brooks_gelman: chains have different kept lengths");
    }
  }
  const double m = double(chains.size());
  VectorXd mean_of_means = VectorXd::Zero(n), W = VectorXd::Zero(n);
  for (const auto& c : chains) {
    mean_of_means += c.mean / m;
    W += c.var / m;
  }
  VectorXd Bn = VectorXd::Zero(n);
  for (const auto& c : chains) Bn += (c.mean - mean_of_means).cwiseAbs2() / (m - 1.0);
  VectorXd R(n);
  for (Index i = 0; i < n; ++i) {
    if (W(i) > 0.0) {
      R(i) = std::sqrt((W(i) + (1.0 + 1.0 / m) * Bn(i)) / W(i));
    } else {
      R(i) = Bn(i) == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
  }
  return R;
}

struct MultiChainReport {
  VectorXd mean;         // average of chain means
  VectorXd std;          // average of chain stds
  VectorXd pooled_std;   // sqrt(mean within variance + variance of means)
  double mean_err = 0.0; // max_j ||mean_j - mean|| / ||mean||
  double std_err = 0.0;  // max_j ||std_j - std|| / ||std||
  VectorXd rhat;
  double max_rhat = 1.0;
};

inline MultiChainReport multi_chain_report(const std::vector<ChainSummary>& chains) {
  MultiChainReport r;
  r.rhat = brooks_gelman(chains);
  r.max_rhat = r.rhat.maxCoeff();
  const Index n = chains.front().mean.size();
  const double m = double(chains.size());
  // Averages as offsets from chain 0, so identical chains reproduce it exactly.
  const ChainSummary& c0 = chains.front();
  r.mean = c0.mean;
  r.std = c0.std;
  VectorXd W = c0.var;
  for (const auto& c : chains) {
    r.mean += (c.mean - c0.mean) / m;
    r.std += (c.std - c0.std) / m;
    W += (c.var - c0.var) / m;
  }
  VectorXd spread = VectorXd::Zero(n);
  for (const auto& c : chains) spread += (c.mean - r.mean).cwiseAbs2() / m;
  r.pooled_std = (W + spread).cwiseSqrt();
  auto rel = [](const VectorXd& a, const VectorXd& b) {
    const double d = b.norm();
    return d > 0.0 ? (a - b).norm() / d : (a - b).norm();
  };
  for (const auto& c : chains) {
    r.mean_err = std::max(r.mean_err, rel(c.mean, r.mean));
    r.std_err = std::max(r.std_err, rel(c.std, r.std));
  }
  return r;
}

/// Runs independent chains, chain k from inits[k] with configs[k], on up to
/// `threads` threads. Results do not depend on the thread count.
inline std::vector<ChainSummary> run_chains(const std::vector<ChainConfig>& configs,
                                            const std::vector<VectorXd>& inits, const LogDensity& log_density,
                                            unsigned threads = 1) {
  if (configs.size() != inits.size()) throw ShapeMismatch("run_chains: one init per chain required");
  std::vector<ChainSummary> out(configs.size());
  parallel_for(configs.size(), threads,
               [&](std::size_t k) { out[k] = mh_chain(configs[k], inits[k], log_density); });
  return out;
}

}  // namespace epinv::mcmc
