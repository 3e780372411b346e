#include <random>

#include <gtest/gtest.h>

#include "epinv/linalg/cholesky.hpp"
#include "test_util.hpp"

namespace {

using namespace epinv::linalg;
using epinv::testing::random_matrix;
using epinv::testing::random_spd;
using epinv::testing::random_vector;
using epinv::testing::rel_fro;

TEST(Cholesky, IdentityFactorsToIdentity) {
  const auto F = cholesky(MatrixXd::Identity(2, 2));
  EXPECT_EQ(F.lower(), MatrixXd::Identity(2, 2));
}

TEST(Cholesky, HandCheckedTwoByTwo) {
  MatrixXd A(2, 2);
  A << 4, 2, 2, 5;
  MatrixXd L(2, 2);
  L << 2, 0, 1, 2;
  EXPECT_LT((cholesky(A).lower() - L).norm(), 1e-15);
}

TEST(Cholesky, RandomSpdReconstructs) {
  std::mt19937_64 rng(8);
  const MatrixXd A = random_spd(rng, 8);
  const auto F = cholesky(A);
  EXPECT_LE(rel_fro(F.reconstruct(), A), 1e-12);
  EXPECT_TRUE((F.lower().diagonal().array() > 0).all());
  EXPECT_EQ(F.lower().triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm(), 0.0);
}

TEST(Cholesky, RejectsIndefiniteAndSemidefinite) {
  MatrixXd A(2, 2);
  A << 1, 2, 2, 1;
  EXPECT_THROW(cholesky(A), epinv::NotPositiveDefinite);
  MatrixXd S(2, 2);
  S << 1, 1, 1, 1;
  EXPECT_THROW(cholesky(S), epinv::NotPositiveDefinite);
}

TEST(Cholesky, UpdateOfIdentityByUnitVector) {
  const auto F = rank1_update(cholesky(MatrixXd::Identity(2, 2)), VectorXd::Unit(2, 0), +1);
  MatrixXd expected = MatrixXd::Identity(2, 2);
  expected(0, 0) = 2.0;
  EXPECT_LT((F.reconstruct() - expected).norm(), 1e-15);
}

TEST(Cholesky, UpdateMatchesDirectRefactorization) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd A = random_spd(rng, 8);
    const VectorXd x = random_vector(rng, 8);
    const auto updated = rank1_update(cholesky(A), x, +1);
    const auto direct = cholesky(MatrixXd(A + x * x.transpose()));
    EXPECT_LE(rel_fro(updated.lower(), direct.lower()), 1e-10);
  }
}

TEST(Cholesky, DowndateMatchesDirectRefactorization) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd A = random_spd(rng, 8);
    // A - x x^t stays PD when |L^{-1} x| < 1.
    VectorXd x = random_vector(rng, 8);
    x *= 0.5 / cholesky(A).forward_solve(x).norm();
    const auto down = rank1_update(cholesky(A), x, -1);
    const auto direct = cholesky(MatrixXd(A - x * x.transpose()));
    EXPECT_LE(rel_fro(down.lower(), direct.lower()), 1e-10);
  }
}

TEST(Cholesky, UpdateDowndatePairIsIdentity) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const MatrixXd A = random_spd(rng, 8);
    const VectorXd x = random_vector(rng, 8);
    const auto F = cholesky(A);
    const auto back = rank1_update(rank1_update(F, x, +1), x, -1);
    EXPECT_LE(rel_fro(back.lower(), F.lower()), 1e-12);
    EXPECT_LE(rel_fro(back.reconstruct(), A), 1e-12);
  }
}

TEST(Cholesky, FailedDowndateLeavesFactorUntouched) {
  std::mt19937_64 rng(14);
  const MatrixXd A = random_spd(rng, 6);
  auto F = cholesky(A);
  const MatrixXd before = F.lower();
  VectorXd x = random_vector(rng, 6);
  x *= 1.5 / F.forward_solve(x).norm();
  EXPECT_THROW(F.downdate(x), epinv::DowndateFailed);
  EXPECT_EQ(F.lower(), before);
}

TEST(Cholesky, SolveSimpleCases) {
  const MatrixXd B = (MatrixXd(2, 3) << 1, 2, 3, 4, 5, 6).finished();
  EXPECT_LT((solve(cholesky(MatrixXd::Identity(2, 2)), B) - B).norm(), 1e-15);
  MatrixXd D = MatrixXd::Zero(2, 2);
  D.diagonal() << 2, 5;
  MatrixXd expected = MatrixXd::Zero(2, 2);
  expected.diagonal() << 0.5, 0.2;
  EXPECT_LT((solve(cholesky(D), MatrixXd::Identity(2, 2)) - expected).norm(), 1e-15);
}

TEST(Cholesky, SolveResidual) {
  std::mt19937_64 rng(15);
  const MatrixXd A = random_spd(rng, 8);
  const MatrixXd B = random_matrix(rng, 8, 3);
  const MatrixXd X = solve(cholesky(A), B);
  EXPECT_LE((A * X - B).norm() / B.norm(), 1e-10);
}

TEST(Cholesky, WoodburyMatchesDirectInverse) {
  std::mt19937_64 rng(16);
  for (int n = 2; n <= 8; ++n) {
    for (int l = 1; l <= 2; ++l) {
      const MatrixXd A = random_spd(rng, n);
      const MatrixXd W = random_matrix(rng, n, l);
      const MatrixXd direct = MatrixXd(A + W * W.transpose()).inverse();
      EXPECT_LE(rel_fro(woodbury_inverse(cholesky(A), W), direct), 1e-10);
    }
  }
}

TEST(Cholesky, LongUpdateSequenceStaysAccurate) {
  std::mt19937_64 rng(17);
  MatrixXd A = random_spd(rng, 10);
  auto F = cholesky(A);
  for (int step = 0; step < 200; ++step) {
    VectorXd x = 0.3 * random_vector(rng, 10);
    if (step % 2 == 0) {
      F.update(x);
      A += x * x.transpose();
    } else if (F.forward_solve(x).norm() < 0.9) {
      F.downdate(x);
      A -= x * x.transpose();
    }
  }
  EXPECT_LE(rel_fro(F.reconstruct(), A), 1e-12);
}

}  // namespace
