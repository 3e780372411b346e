#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "epinv/nonlinear/driver.hpp"
#include "test_util.hpp"

namespace {

using namespace epinv;
using namespace epinv::nonlinear;
using epinv::testing::random_matrix;
using epinv::testing::random_vector;
using epinv::testing::rel_fro;

FunctionModel cube_model() {
  return FunctionModel(
      1, 1, [](const VectorXd& x) { return VectorXd::Constant(1, x(0) * x(0) * x(0)); },
      [](const VectorXd& x) { return MatrixXd::Constant(1, 1, 3.0 * x(0) * x(0)); });
}

TEST(Linearize, LinearModelIsPointIndependent) {
  std::mt19937_64 rng(1);
  const MatrixXd A = random_matrix(rng, 5, 3);
  const LinearModel model(A);
  const VectorXd b = random_vector(rng, 5);
  const auto p1 = linearize(model, random_vector(rng, 3), b, 2.5);
  const auto p2 = linearize(model, random_vector(rng, 3), b, 2.5);
  EXPECT_LT(rel_fro(p1.K, 2.5 * A.transpose() * A), 1e-15);
  EXPECT_LT(rel_fro(p1.h, p2.h), 1e-13);
  EXPECT_LT(rel_fro(p1.h, 2.5 * A.transpose() * b), 1e-13);
}

TEST(Linearize, ScalarSquareExample) {
  const FunctionModel model(
      1, 1, [](const VectorXd& x) { return VectorXd::Constant(1, x(0) * x(0)); },
      [](const VectorXd& x) { return MatrixXd::Constant(1, 1, 2.0 * x(0)); });
  const auto p = linearize(model, VectorXd::Constant(1, 2.0), VectorXd::Constant(1, 4.0), 1.0);
  EXPECT_DOUBLE_EQ(p.K(0, 0), 16.0);
  EXPECT_DOUBLE_EQ(p.h(0), 32.0);
  // Residual-free point: K0 mu = h0 at mu = 2.
  EXPECT_DOUBLE_EQ(p.h(0) / p.K(0, 0), 2.0);
}

TEST(BBStep, Examples) {
  const VectorXd mk = VectorXd::Constant(2, 1.0);
  const VectorXd mkm1 = VectorXd::Zero(2);
  const VectorXd dm = mk - mkm1;
  const VectorXd dk1 = VectorXd::Constant(2, 0.3);
  EXPECT_EQ(bb_step(mk, mkm1, dk1, dk1), 0.0);
  EXPECT_DOUBLE_EQ(bb_step(mk, mkm1, dk1 + dm, dk1), 1.0);
  EXPECT_EQ(bb_step(mk, mkm1, dk1 + 3.0 * dm, dk1), 1.0);
  EXPECT_DOUBLE_EQ(bb_step(mk, mkm1, dk1 + 0.4 * dm, dk1), 0.4);
  EXPECT_EQ(bb_step(mk, mkm1, dk1 - dm, dk1), 0.0);
  EXPECT_EQ(bb_step(mk, mk, dk1, dk1 + dm), 1.0);
}

TEST(SecantStep, Examples) {
  const VectorXd mk = VectorXd::Constant(2, 1.0);
  const VectorXd mkm1 = VectorXd::Zero(2);
  const VectorXd dm = mk - mkm1;
  const VectorXd d0 = VectorXd::Constant(2, 0.3);
  // d independent of mu (mu^* fixed): full step.
  EXPECT_DOUBLE_EQ(secant_step(mk, mkm1, d0 - dm, d0), 1.0);
  // Period-two oscillation of mu^*: half step.
  EXPECT_DOUBLE_EQ(secant_step(mk, mkm1, d0 - 2.0 * dm, d0), 0.5);
  EXPECT_EQ(secant_step(mk, mkm1, d0, d0), 1.0);
}

TEST(RunNonlinear, LinearModelConvergesAfterOneStep) {
  std::mt19937_64 rng(2);
  const Index m = 8, n = 4;
  const MatrixXd A = random_matrix(rng, m, n);
  const LinearModel model(A);
  const VectorXd b = random_vector(rng, m);
  std::vector<ep::Site> sites;
  for (Index k = 0; k < n; ++k) {
    sites.push_back(ep::coordinate_site(n, k, std::make_shared<tilted::LaplacePositivity>(
                                                  tilted::LaplacePositivityFactor{1.0, 0.0, -2.0})));
  }
  NonlinearOptions opts;
  opts.alpha = 4.0;
  opts.inner.site_tol = 1e-10;
  const auto res = run_nonlinear(model, b, VectorXd::Constant(n, 0.1), sites, opts);
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.outer_iterations, 2);
  EXPECT_DOUBLE_EQ(res.outer[0].tau, 1.0);
  EXPECT_EQ(res.outer[1].inner_sweeps, 1);
  EXPECT_LT((res.linearization_points[1] - res.mean).norm() / res.mean.norm(), 1e-8);
}

/// MAP of alpha/2 (x^3 - b)^2 + (x - m0)^2 / (2 v0) by nested grid refinement.
double cube_map_by_grid(double b, double alpha, double m0, double v0) {
  auto obj = [&](double x) {
    const double r = x * x * x - b;
    return 0.5 * alpha * r * r + 0.5 * (x - m0) * (x - m0) / v0;
  };
  double lo = -5.0, hi = 5.0;
  double best = 0.0;
  for (int level = 0; level < 8; ++level) {
    const int N = 2000;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= N; ++i) {
      const double x = lo + (hi - lo) * i / N;
      if (obj(x) < best_val) {
        best_val = obj(x);
        best = x;
      }
    }
    const double w = (hi - lo) / N;
    lo = best - 2 * w;
    hi = best + 2 * w;
  }
  return best;
}

TEST(RunNonlinear, CubeModelReachesMap) {
  const auto model = cube_model();
  const double b = 8.0, alpha = 1.0, m0 = 0.0, v0 = 100.0;
  const NaturalParams prior{VectorXd::Constant(1, m0 / v0), MatrixXd::Constant(1, 1, 1.0 / v0)};
  const double map = cube_map_by_grid(b, alpha, m0, v0);
  for (StepRule rule : {StepRule::BarzilaiBorwein, StepRule::Secant}) {
    std::vector<ep::Site> sites;
    NonlinearOptions opts;
    opts.alpha = alpha;
    opts.outer_tol = 1e-9;
    opts.max_outer = 60;
    opts.step_rule = rule;
    // Started above the root, Gauss-Newton steps approach it monotonically.
    const auto res = run_nonlinear(model, VectorXd::Constant(1, b), VectorXd::Constant(1, 3.0),
                                   sites, opts, prior);
    EXPECT_TRUE(res.converged);
    EXPECT_NEAR(res.mean(0), map, 1e-4);
    for (const auto& r : res.outer) EXPECT_TRUE(r.tau >= 0.0 && r.tau <= 1.0);
    // The MAP residual is not zero (the prior pulls), so monotonicity is
    // checked while the residual is still well above it.
    const double r_map = std::abs(map * map * map - b);
    for (std::size_t k = 1; k < res.outer.size(); ++k) {
      if (res.outer[k - 1].residual_norm < 10.0 * r_map) break;
      if (rule == StepRule::Secant) {
        EXPECT_LT(res.outer[k].residual_norm, res.outer[k - 1].residual_norm) << k;
      } else {
        // A clamped tau = 0 repeats the iterate.
        EXPECT_LE(res.outer[k].residual_norm, res.outer[k - 1].residual_norm) << k;
      }
    }
  }
}

TEST(RunNonlinear, TraceCoversEverySweep) {
  const auto model = cube_model();
  const NaturalParams prior{VectorXd::Zero(1), MatrixXd::Constant(1, 1, 0.01)};
  std::vector<ep::Site> sites{ep::coordinate_site(
      1, 0, std::make_shared<tilted::LaplacePositivity>(tilted::LaplacePositivityFactor{0.5, 1.0, 0.0}))};
  NonlinearOptions opts;
  opts.step_rule = StepRule::Secant;
  const auto res = run_nonlinear(model, VectorXd::Constant(1, 8.0), VectorXd::Constant(1, 1.0),
                                 sites, opts, prior);
  ASSERT_EQ(int(res.trace.size()), res.total_inner_sweeps);
  EXPECT_EQ(res.trace.front().outer, 1);
  EXPECT_EQ(res.trace.front().inner, 1);
  EXPECT_EQ(res.trace.back().metrics.e_f_mu, 0.0);
  EXPECT_GE(res.mean(0), 0.0);
}

}  // namespace
