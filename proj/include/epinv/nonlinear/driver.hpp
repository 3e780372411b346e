#pragma once

// Recursive linearization around the current mean, with an EP solve of each
// linearized problem and a clamped scalar step between iterates.

#include <algorithm>
#include <functional>
#include <utility>
#include <vector>

#include "epinv/ep/engine.hpp"
#include "epinv/errors.hpp"
#include "epinv/gaussian.hpp"

namespace epinv::nonlinear {

class ForwardModel {
 public:
  virtual ~ForwardModel() = default;

  virtual Index data_dim() const = 0;
  virtual Index param_dim() const = 0;
  virtual VectorXd evaluate(const VectorXd& x) const = 0;
  virtual MatrixXd jacobian(const VectorXd& x) const = 0;

  /// F(x) and F'(x) together; override when the two share work.
  virtual std::pair<VectorXd, MatrixXd> evaluate_with_jacobian(const VectorXd& x) const {
    return {evaluate(x), jacobian(x)};
  }

  /// Projection of a linearization point onto the set where F is defined.
  virtual VectorXd admissible(const VectorXd& x) const { return x; }
};

/// F(x) = A x + c.
class LinearModel final : public ForwardModel {
 public:
  explicit LinearModel(MatrixXd A, VectorXd c = {}) : A_(std::move(A)), c_(std::move(c)) {
    if (c_.size() == 0) c_ = VectorXd::Zero(A_.rows());
    if (c_.size() != A_.rows()) throw ShapeMismatch("LinearModel: offset length differs from rows");
  }

  Index data_dim() const override { return A_.rows(); }
  Index param_dim() const override { return A_.cols(); }
  VectorXd evaluate(const VectorXd& x) const override { return A_ * x + c_; }
  MatrixXd jacobian(const VectorXd&) const override { return A_; }

  const MatrixXd& matrix() const { return A_; }

 private:
  MatrixXd A_;
  VectorXd c_;
};

/// Model from callables, mainly for small analytic problems.
class FunctionModel final : public ForwardModel {
 public:
  using Eval = std::function<VectorXd(const VectorXd&)>;
  using Jac = std::function<MatrixXd(const VectorXd&)>;

  FunctionModel(Index m, Index n, Eval f, Jac j)
      : m_(m), n_(n), f_(std::move(f)), j_(std::move(j)) {}

  Index data_dim() const override { return m_; }
  Index param_dim() const override { return n_; }
  VectorXd evaluate(const VectorXd& x) const override { return f_(x); }
  MatrixXd jacobian(const VectorXd& x) const override { return j_(x); }

 private:
  Index m_, n_;
  Eval f_;
  Jac j_;
};

/// Gaussian base of exp(-alpha/2 ||F(mu) + J (x - mu) - b||^2) from F(mu), J.
inline NaturalParams linearize(const VectorXd& F_mu, const MatrixXd& J, const VectorXd& mu,
                               const VectorXd& data, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("linearize: alpha must be positive");
  if (F_mu.size() != data.size() || J.rows() != data.size() || J.cols() != mu.size()) {
    throw ShapeMismatch("linearize: inconsistent model dimensions");
  }
  MatrixXd K = alpha * (J.transpose() * J);
  VectorXd h = alpha * (J.transpose() * (data - F_mu + J * mu));
  return {std::move(h), linalg::symmetrize(K)};
}

inline NaturalParams linearize(const ForwardModel& model, const VectorXd& mu, const VectorXd& data,
                               double alpha) {
  const auto [F, J] = model.evaluate_with_jacobian(mu);
  return linearize(F, J, mu, data, alpha);
}

/// Clamped Barzilai-Borwein step
///   tau = <mu_k - mu_km1, d_k - d_km1> / <mu_k - mu_km1, mu_k - mu_km1>,
/// clamped to [0, 1]; tau = 1 when the two iterates coincide.
inline double bb_step(const VectorXd& mu_k, const VectorXd& mu_km1, const VectorXd& d_k,
                      const VectorXd& d_km1) {
  const VectorXd dm = mu_k - mu_km1;
  const double den = dm.squaredNorm();
  if (den == 0.0) return 1.0;
  const double tau = dm.dot(d_k - d_km1) / den;
  if (!std::isfinite(tau)) return 1.0;
  return std::clamp(tau, 0.0, 1.0);
}

/// Step rules between outer iterates.
///   BarzilaiBorwein: bb_step above.
///   Secant: tau = -<dm, dm> / <dm, d_k - d_km1>, the secant root of the
///           residual d = mu^* - mu along the last step, clamped.
///   Unit: tau = 1, i.e. mu_{k+1} = mu_k^*.
enum class StepRule { BarzilaiBorwein, Secant, Unit };

inline double secant_step(const VectorXd& mu_k, const VectorXd& mu_km1, const VectorXd& d_k,
                          const VectorXd& d_km1) {
  const VectorXd dm = mu_k - mu_km1;
  const double num = dm.squaredNorm();
  const double den = -dm.dot(d_k - d_km1);
  if (num == 0.0 || !(den > 0.0)) return 1.0;
  return std::clamp(num / den, 0.0, 1.0);
}

struct NonlinearOptions {
  int max_outer = 10;
  /// Stop when ||mu_k^* - mu_k|| / ||mu_k|| falls below this.
  double outer_tol = 1e-3;
  double alpha = 1.0;
  ep::EPOptions inner;
  StepRule step_rule = StepRule::Secant;
  /// Keep site parameters across outer iterations instead of resetting to K_i = I, h_i = 0.
  bool warm_start = true;
};

struct OuterRecord {
  int outer = 0;
  double tau = 1.0;
  double mean_change = 0.0;   // ||mu_k^* - mu_k|| / ||mu_k||
  double residual_norm = 0.0; // ||F(mu_k) - b||
  int inner_sweeps = 0;
  bool inner_converged = false;
};

/// One row per inner sweep, numbered across the whole run.
struct TraceRow {
  int outer = 0;
  int inner = 0;
  ep::IterateMetrics metrics;
};

struct NonlinearResult {
  VectorXd mean;
  MatrixXd cov;
  int outer_iterations = 0;
  int total_inner_sweeps = 0;
  bool converged = false;
  std::vector<OuterRecord> outer;
  std::vector<TraceRow> trace;
  std::vector<VectorXd> linearization_points;
  std::vector<ep::SkippedSite> skipped_sites;
  ep::EPResult last_ep;
};

/// Runs the outer loop: linearize at mu_k, EP on the linearized posterior
/// (prior base plus sites), step mu_{k+1} = mu_k + tau (mu_k^* - mu_k).
/// `prior` is an optional Gaussian base (dimension 0 means none).
inline NonlinearResult run_nonlinear(const ForwardModel& model, const VectorXd& data,
                                     const VectorXd& mu0, std::vector<ep::Site>& sites,
                                     const NonlinearOptions& opts, const NaturalParams& prior = {}) {
  if (data.size() != model.data_dim() || mu0.size() != model.param_dim()) {
    throw ShapeMismatch("run_nonlinear: data or initial mean has the wrong length");
  }
  if (prior.dim() != 0 && prior.dim() != model.param_dim()) {
    throw ShapeMismatch("run_nonlinear: prior dimension differs from the model");
  }
  NonlinearResult res;
  std::vector<ep::Snapshot> snaps;
  std::vector<std::pair<int, int>> labels;

  VectorXd mu = model.admissible(mu0);
  VectorXd mu_prev, d_prev;
  for (int k = 1; k <= opts.max_outer; ++k) {
    if (!mu.allFinite()) throw NonFiniteIterate("run_nonlinear: iterate is not finite");
    res.linearization_points.push_back(mu);
    const auto [F, J] = model.evaluate_with_jacobian(mu);
    NaturalParams base = linearize(F, J, mu, data, opts.alpha);
    if (prior.dim() != 0) base = base + prior;
    if (!opts.warm_start) {
      for (auto& s : sites) {
        s.K.setIdentity();
        s.h.setZero();
      }
    }
    ep::EPResult ep = ep::run_ep(base, sites, opts.inner);

    if (k == 1) {
      snaps.push_back(ep.snapshots.front());
      labels.emplace_back(1, 0);
    }
    for (std::size_t j = 1; j < ep.snapshots.size(); ++j) {
      snaps.push_back(ep.snapshots[j]);
      labels.emplace_back(k, int(j));
    }
    res.skipped_sites.insert(res.skipped_sites.end(), ep.skipped_sites.begin(),
                             ep.skipped_sites.end());

    const VectorXd d = ep.mean - mu;
    OuterRecord rec;
    rec.outer = k;
    rec.mean_change = d.norm() / std::max(mu.norm(), std::numeric_limits<double>::min());
    rec.residual_norm = (F - data).norm();
    rec.inner_sweeps = ep.sweeps_used;
    rec.inner_converged = ep.converged;
    if (k == 1 || opts.step_rule == StepRule::Unit) {
      rec.tau = 1.0;
    } else if (opts.step_rule == StepRule::BarzilaiBorwein) {
      rec.tau = bb_step(mu, mu_prev, d, d_prev);
    } else {
      rec.tau = secant_step(mu, mu_prev, d, d_prev);
    }
    res.total_inner_sweeps += ep.sweeps_used;
    res.outer_iterations = k;
    res.outer.push_back(rec);
    res.last_ep = std::move(ep);

    if (rec.mean_change < opts.outer_tol) {
      res.converged = true;
      break;
    }
    mu_prev = mu;
    d_prev = d;
    mu = model.admissible(mu + rec.tau * d);
  }

  const auto metrics = ep::convergence_metrics(snaps);
  for (std::size_t j = 1; j < snaps.size(); ++j) {
    res.trace.push_back({labels[j].first, labels[j].second, metrics[j - 1]});
  }
  res.mean = res.last_ep.mean;
  res.cov = res.last_ep.cov;
  return res;
}

}  // namespace epinv::nonlinear
