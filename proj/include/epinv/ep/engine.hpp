#pragma once

// Expectation propagation for posteriors of projection type
//   p(x) ∝ t0(x) * prod_i t_i(U_i x),
// with a Gaussian base t0 given in natural parameters and one low-rank
// Gaussian site (h_i, K_i) per nongaussian factor. The global precision
// K = K0 + sum_i U_i^t K_i U_i is carried as a Cholesky factor that is
// modified by rank-one up/downdates after each serial site update.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "epinv/errors.hpp"
#include "epinv/gaussian.hpp"
#include "epinv/linalg/cholesky.hpp"
#include "epinv/parallel.hpp"
#include "epinv/tilted/factors.hpp"

namespace epinv::ep {

using tilted::FactorPtr;

struct Site {
  MatrixXd U;  // l x n, full row rank
  MatrixXd K;  // l x l
  VectorXd h;  // l
  FactorPtr family;

  Index dim() const { return U.rows(); }
};

/// Site with the default initialization K_i = I, h_i = 0.
inline Site make_site(MatrixXd U, FactorPtr family) {
  if (!family) throw std::invalid_argument("make_site: null factor");
  if (family->dim() != U.rows()) {
    throw ShapeMismatch("make_site: factor dimension " + std::to_string(family->dim()) +
                        " differs from projection rank " + std::to_string(U.rows()));
  }
  const Index l = U.rows();
  return {std::move(U), MatrixXd::Identity(l, l), VectorXd::Zero(l), std::move(family)};
}

/// Site acting on coordinate k of R^n.
inline Site coordinate_site(Index n, Index k, FactorPtr family) {
  MatrixXd U = MatrixXd::Zero(1, n);
  U(0, k) = 1.0;
  return make_site(std::move(U), std::move(family));
}

enum class SweepMode { Serial, Parallel };
enum class DowndatePolicy { SkipSite, Abort };

struct EPOptions {
  int max_sweeps = 50;
  /// Stop once the largest relative change of any (h_i, K_i) in a sweep is below this.
  double site_tol = 1e-4;
  SweepMode sweep_mode = SweepMode::Serial;
  /// Applies to every site-local failure: downdate, invalid cavity, degenerate tilted mass.
  DowndatePolicy on_downdate_failure = DowndatePolicy::SkipSite;
  unsigned threads = 1;
  /// Snapshots keep the full covariance up to this dimension, the diagonal beyond.
  Index full_cov_limit = 1000;
};

/// Cavity marginal in s = U x: mean mu_hat, precision Chat_inv and its inverse.
struct Cavity {
  VectorXd mu_hat;
  MatrixXd Chat_inv;
  MatrixXd Chat;
};

/// Cavity of site s under the global approximation g.
/// Khat = U K^{-1} U^t is formed from W = L^{-1} U^t. Throws CavityInvalid
/// when Khat^{-1} - K_i is not positive definite.
inline Cavity cavity(const NaturalGaussian& g, const Site& s) {
  const MatrixXd W = g.factor().forward_solve(MatrixXd(s.U.transpose()));
  const VectorXd y = g.factor().forward_solve(g.h());
  const MatrixXd Khat = linalg::symmetrize(W.transpose() * W);
  const VectorXd marginal_mean = W.transpose() * y;  // U K^{-1} h
  MatrixXd Khat_inv;
  try {
    Khat_inv = linalg::symmetrize(linalg::cholesky(Khat).inverse());
  } catch (const NotPositiveDefinite&) {
    throw CavityInvalid("cavity: projected covariance U K^-1 U^t is singular");
  }
  MatrixXd Chat_inv = linalg::symmetrize(Khat_inv - s.K);
  linalg::CholeskyFactor cf;
  try {
    cf = linalg::cholesky(Chat_inv);
  } catch (const NotPositiveDefinite&) {
    throw CavityInvalid("cavity precision is not positive definite");
  }
  // (I - Khat K_i)^{-1} (U K^{-1} h - Khat h_i) = Chat (Khat^{-1} U K^{-1} h - h_i)
  VectorXd mu_hat = cf.solve(VectorXd(Khat_inv * marginal_mean - s.h));
  MatrixXd Chat = linalg::symmetrize(cf.inverse());
  return {std::move(mu_hat), std::move(Chat_inv), std::move(Chat)};
}

struct SiteParams {
  MatrixXd K;
  VectorXd h;
};

/// Moment matching: new site = tilted precision minus cavity precision.
inline SiteParams update_site(const Cavity& c, const tilted::TiltedMomentsN& tm) {
  const MatrixXd var_inv = linalg::symmetrize(linalg::cholesky(tm.cov).inverse());
  MatrixXd K = linalg::symmetrize(var_inv - c.Chat_inv);
  VectorXd h = var_inv * tm.mean - c.Chat_inv * c.mu_hat;
  return {std::move(K), std::move(h)};
}

/// Applies U^t (K_new - K_old) U to K and its factor by rank-one
/// up/downdates along the eigenvectors of the l x l delta, updates first.
/// On DowndateFailed the global state is left exactly as it was.
inline void refresh_global(NaturalGaussian& g, const MatrixXd& U, const SiteParams& old_site,
                           const SiteParams& new_site) {
  const MatrixXd dK = new_site.K - old_site.K;
  if (!dK.isZero(0.0)) {
    std::vector<std::pair<double, VectorXd>> terms;
    if (dK.rows() == 1) {
      terms.emplace_back(dK(0, 0), U.row(0).transpose());
    } else {
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(linalg::symmetrize(dK));
      for (Index k = 0; k < dK.rows(); ++k) {
        terms.emplace_back(eig.eigenvalues()(k), U.transpose() * eig.eigenvectors().col(k));
      }
    }
    const linalg::CholeskyFactor backup = g.factor();
    try {
      for (const auto& [delta, u] : terms) {
        if (delta > 0.0) g.mutable_factor().update(std::sqrt(delta) * u);
      }
      for (const auto& [delta, u] : terms) {
        if (delta < 0.0) g.mutable_factor().downdate(std::sqrt(-delta) * u);
      }
    } catch (const DowndateFailed&) {
      g.mutable_factor() = backup;
      throw;
    }
    g.mutable_K() += U.transpose() * dK * U;
  }
  g.mutable_h() += U.transpose() * (new_site.h - old_site.h);
}

/// K0 + sum U_i^t K_i U_i and h0 + sum U_i^t h_i from scratch.
inline NaturalParams reassemble(const NaturalParams& base, const std::vector<Site>& sites) {
  NaturalParams p = base;
  for (const auto& s : sites) {
    p.K.noalias() += s.U.transpose() * s.K * s.U;
    p.h.noalias() += s.U.transpose() * s.h;
  }
  p.K = linalg::symmetrize(p.K);
  return p;
}

/// Mean and covariance of Z^{-1} t(Ux) N(x; mu, C) from the moments (sbar,
/// Cbar) of the projected tilted density in s = U x.
inline MomentGaussian project_moments(const VectorXd& mu, const MatrixXd& C, const MatrixXd& U,
                                      const VectorXd& sbar, const MatrixXd& Cbar) {
  const MatrixXd CUt = C * U.transpose();
  const MatrixXd S = linalg::symmetrize(U * CUt);
  const MatrixXd G = linalg::cholesky(S).solve(MatrixXd(CUt.transpose()));  // (U C U^t)^{-1} U C
  VectorXd mu_star = mu + G.transpose() * (sbar - U * mu);
  MatrixXd C_star = linalg::symmetrize(C + G.transpose() * (Cbar - S) * G);
  return {std::move(mu_star), std::move(C_star)};
}

/// Tilted moments of t(Ux) N(x; mu, C) in full space, with log Z.
inline std::pair<MomentGaussian, double> projected_tilted(const VectorXd& mu, const MatrixXd& C,
                                                          const MatrixXd& U,
                                                          const tilted::FactorFamily& t) {
  const auto tm = t.tilted(U * mu, linalg::symmetrize(U * C * U.transpose()));
  return {project_moments(mu, C, U, tm.mean, tm.cov), tm.logZ};
}

/// Mean and covariance (full, or diagonal as an n x 1 column) of one iterate.
struct Snapshot {
  VectorXd mean;
  MatrixXd cov;
  bool full_cov = true;
};

inline Snapshot take_snapshot(const NaturalGaussian& g, Index full_cov_limit) {
  MatrixXd C = g.factor().inverse();
  if (g.dim() <= full_cov_limit) return {g.mean(), linalg::symmetrize(C), true};
  return {g.mean(), MatrixXd(C.diagonal()), false};
}

/// ||a - b|| / ||a||, 0 when both vanish. Frobenius norm for matrices.
inline double relative_difference(const MatrixXd& a, const MatrixXd& b) {
  const double num = (a - b).norm();
  const double den = a.norm();
  if (num == 0.0) return 0.0;
  return den > 0.0 ? num / den : std::numeric_limits<double>::infinity();
}

struct IterateMetrics {
  double e_p_mu = 0.0;
  double e_f_mu = 0.0;
  double e_p_C = 0.0;
  double e_f_C = 0.0;
};

/// Convergence metrics for snapshots 1..N-1: change relative to the previous
/// iterate (normalized by the current one) and distance to the last iterate
/// (normalized by the last one).
inline std::vector<IterateMetrics> convergence_metrics(const std::vector<Snapshot>& snaps) {
  std::vector<IterateMetrics> out;
  if (snaps.size() < 2) return out;
  const Snapshot& last = snaps.back();
  auto cov_of = [&](const Snapshot& s) -> MatrixXd {
    if (s.full_cov && !last.full_cov) return MatrixXd(s.cov.diagonal());
    return s.cov;
  };
  const MatrixXd last_cov = cov_of(last);
  for (std::size_t j = 1; j < snaps.size(); ++j) {
    IterateMetrics m;
    m.e_p_mu = relative_difference(snaps[j].mean, snaps[j - 1].mean);
    m.e_f_mu = relative_difference(last.mean, snaps[j].mean);
    const MatrixXd cj = cov_of(snaps[j]);
    m.e_p_C = relative_difference(cj, cov_of(snaps[j - 1]));
    m.e_f_C = relative_difference(last_cov, cj);
    out.push_back(m);
  }
  return out;
}

/// Largest relative change of (h, K) between two site states. The h
/// denominator carries a floor of 1e-12 ||K|| so sites whose h is pure
/// roundoff around zero do not dominate.
inline double site_change(const SiteParams& old_site, const SiteParams& new_site) {
  const double dk = (new_site.K - old_site.K).norm();
  const double kscale = std::max(new_site.K.norm(), old_site.K.norm());
  const double dh = (new_site.h - old_site.h).norm();
  const double hscale = std::max({new_site.h.norm(), old_site.h.norm(), 1e-12 * kscale});
  const double rk = dk == 0.0 ? 0.0 : dk / kscale;
  const double rh = dh == 0.0 ? 0.0 : dh / hscale;
  return std::max(rk, rh);
}

struct SweepRecord {
  int sweep = 0;
  double max_site_change = 0.0;
  int sites_updated = 0;
  int sites_skipped = 0;
  IterateMetrics metrics;
};

struct SkippedSite {
  int sweep;
  std::size_t site;
  std::string code;
  std::string reason;
};

struct EPResult {
  VectorXd mean;
  MatrixXd cov;
  int sweeps_used = 0;
  bool converged = false;
  std::vector<SweepRecord> sweeps;
  std::vector<SkippedSite> skipped_sites;
  /// snapshots[0] is the state before the first sweep, snapshots[j] after sweep j.
  std::vector<Snapshot> snapshots;
  NaturalGaussian global;
};

namespace detail {

inline bool all_finite(const SiteParams& p) {
  return p.K.allFinite() && p.h.allFinite();
}

/// Cavity, tilted moments and moment matching for one site.
inline SiteParams compute_site_update(const NaturalGaussian& g, const Site& s) {
  const Cavity c = cavity(g, s);
  const auto tm = s.family->tilted(c.mu_hat, c.Chat);
  SiteParams p = update_site(c, tm);
  if (!all_finite(p)) throw NonFiniteIterate("site update produced non-finite parameters");
  return p;
}

}  // namespace detail

/// Runs EP on t0 * prod_i t_i(U_i x). Sites are updated in place, so a second
/// call warm-starts from the previous site parameters.
inline EPResult run_ep(const NaturalParams& base, std::vector<Site>& sites,
                       const EPOptions& opts = {}) {
  if (!(opts.site_tol > 0.0)) throw std::invalid_argument("run_ep: site_tol must be positive");
  const Index n = base.dim();
  if (base.K.rows() != n || base.K.cols() != n) throw ShapeMismatch("run_ep: base K is not n x n");
  for (const auto& s : sites) {
    if (s.U.cols() != n || s.K.rows() != s.dim() || s.h.size() != s.dim() || !s.family ||
        s.family->dim() != s.dim()) {
      throw ShapeMismatch("run_ep: site shapes are inconsistent");
    }
  }

  auto factor_global = [&]() {
    const NaturalParams p = reassemble(base, sites);
    try {
      return NaturalGaussian(p.h, p.K);
    } catch (const NotPositiveDefinite& e) {
      throw GlobalNotPD(std::string("global precision is not positive definite: ") + e.what());
    }
  };

  EPResult res;
  NaturalGaussian g = factor_global();
  res.snapshots.push_back(take_snapshot(g, opts.full_cov_limit));

  auto handle_failure = [&](int sweep, std::size_t i, const Error& e) {
    if (opts.on_downdate_failure == DowndatePolicy::Abort) throw;
    res.skipped_sites.push_back({sweep, i, e.code(), e.what()});
  };

  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    SweepRecord rec;
    rec.sweep = sweep;
    if (opts.sweep_mode == SweepMode::Serial) {
      for (std::size_t i = 0; i < sites.size(); ++i) {
        Site& s = sites[i];
        try {
          SiteParams old_site{s.K, s.h};
          SiteParams new_site = detail::compute_site_update(g, s);
          refresh_global(g, s.U, old_site, new_site);
          rec.max_site_change = std::max(rec.max_site_change, site_change(old_site, new_site));
          s.K = std::move(new_site.K);
          s.h = std::move(new_site.h);
          ++rec.sites_updated;
        } catch (const Error& e) {
          handle_failure(sweep, i, e);
          ++rec.sites_skipped;
        }
      }
    } else {
      std::vector<std::optional<SiteParams>> updates(sites.size());
      std::vector<std::optional<std::pair<std::string, std::string>>> failures(sites.size());
      parallel_for(sites.size(), opts.threads, [&](std::size_t i) {
        try {
          updates[i] = detail::compute_site_update(g, sites[i]);
        } catch (const Error& e) {
          failures[i] = std::make_pair(e.code(), std::string(e.what()));
        }
      });
      for (std::size_t i = 0; i < sites.size(); ++i) {
        if (failures[i]) {
          if (opts.on_downdate_failure == DowndatePolicy::Abort) {
            throw CavityInvalid("parallel sweep: site " + std::to_string(i) + ": " +
                                failures[i]->second);
          }
          res.skipped_sites.push_back({sweep, i, failures[i]->first, failures[i]->second});
          ++rec.sites_skipped;
          continue;
        }
        rec.max_site_change =
            std::max(rec.max_site_change, site_change({sites[i].K, sites[i].h}, *updates[i]));
        sites[i].K = std::move(updates[i]->K);
        sites[i].h = std::move(updates[i]->h);
        ++rec.sites_updated;
      }
      g = factor_global();
    }
    if (!g.h().allFinite()) throw NonFiniteIterate("run_ep: global parameters became non-finite");
    res.snapshots.push_back(take_snapshot(g, opts.full_cov_limit));
    res.sweeps.push_back(rec);
    res.sweeps_used = sweep;
    if (rec.sites_updated == 0 && rec.sites_skipped > 0) break;
    if (rec.max_site_change < opts.site_tol) {
      res.converged = true;
      break;
    }
  }
  if (sites.empty()) res.converged = true;

  const auto metrics = convergence_metrics(res.snapshots);
  for (std::size_t j = 0; j < res.sweeps.size(); ++j) res.sweeps[j].metrics = metrics[j];
  res.mean = g.mean();
  res.cov = linalg::symmetrize(g.factor().inverse());
  res.global = std::move(g);
  return res;
}

}  // namespace epinv::ep
