#include <gtest/gtest.h>

#include <random>

#include "mbl/lbfgs.hpp"

using namespace mbl;

namespace {

Vector random_vector(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(d);
  for (auto& x : v) x = normal(rng);
  return v;
}

Matrix random_spd(Eigen::Index d, std::mt19937_64& rng, double lo, double hi) {
  std::normal_distribution<double> normal;
  Matrix g(d, d);
  for (auto& x : g.reshaped()) x = normal(rng);
  const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();
  Vector ev(d);
  std::uniform_real_distribution<double> unit(lo, hi);
  for (auto& x : ev) x = unit(rng);
  ev[0] = lo;
  ev[d - 1] = hi;
  return q * ev.asDiagonal() * q.transpose();
}

/// Textbook product form H+ = V^T H V + rho s s^T with V built explicitly.
Matrix oracle_inverse_hessian(const LbfgsMemory& memory, Eigen::Index d) {
  Matrix h = memory.h0_scale() * Matrix::Identity(d, d);
  for (const auto& p : memory.pairs()) {
    const double rho = 1.0 / p.y.dot(p.s);
    const Matrix v = Matrix::Identity(d, d) - rho * p.y * p.s.transpose();
    h = v.transpose() * h * v + rho * p.s * p.s.transpose();
  }
  return h;
}

LbfgsMemory random_history(Eigen::Index d, std::size_t m, std::size_t offered, std::mt19937_64& rng) {
  const Matrix a = random_spd(d, rng, 0.5, 20.0);
  LbfgsMemory memory(m);
  for (std::size_t i = 0; i < offered; ++i) {
    const Vector s = random_vector(d, rng);
    try_update(memory, s, a * s, UpdateRule{true, 1e-8});
  }
  return memory;
}

}  // namespace

TEST(TwoLoop, EmptyMemoryIsNegativeGradient) {
  LbfgsMemory memory(5);
  const Vector g = (Vector(3) << 1, -2, 3).finished();
  EXPECT_TRUE(two_loop_direction(memory, g) == -g);
  EXPECT_EQ(memory.h0_scale(), 1.0);
}

TEST(TwoLoop, UnitPairGivesIdentity) {
  LbfgsMemory memory(5);
  const Vector e1 = Vector::Unit(4, 0);
  ASSERT_EQ(try_update(memory, e1, e1, {}), UpdateOutcome::accepted);
  EXPECT_LT((two_loop_direction(memory, e1) + e1).norm(), 1e-15);
}

TEST(TwoLoop, MatchesDenseOracles) {
  std::mt19937_64 rng(123);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 50);
    const std::size_t m = 1 + rng() % 10;
    const auto memory = random_history(d, m, rng() % (2 * m + 1), rng);
    const Vector g = random_vector(d, rng);
    const Vector fast = two_loop_direction(memory, g);
    const Vector oracle = -(oracle_inverse_hessian(memory, d) * g);
    const Vector dense = -(dense_inverse_hessian(memory, static_cast<std::size_t>(d)) * g);
    worst = std::max(worst, (fast - oracle).norm() / oracle.norm());
    worst = std::max(worst, (dense - oracle).norm() / oracle.norm());
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(TwoLoop, SmallSpecExample) {
  std::mt19937_64 rng(7);
  const auto memory = random_history(5, 3, 6, rng);
  ASSERT_EQ(memory.size(), 3u);
  const Vector g = random_vector(5, rng);
  const Vector expected = -(dense_inverse_hessian(memory, 5) * g);
  EXPECT_LE((two_loop_direction(memory, g) - expected).norm() / expected.norm(), 1e-10);
}

TEST(TwoLoop, DimensionMismatchThrows) {
  std::mt19937_64 rng(1);
  const auto memory = random_history(4, 2, 2, rng);
  EXPECT_THROW(two_loop_direction(memory, Vector::Zero(3)), DomainError);
}

TEST(Memory, FifoEvictsOldest) {
  LbfgsMemory memory(3);
  std::vector<Vector> s;
  for (int i = 0; i < 4; ++i) {
    s.push_back(Vector::Unit(4, i) * (i + 1.0));
    ASSERT_EQ(try_update(memory, s.back(), 2.0 * s.back(), {}), UpdateOutcome::accepted);
  }
  ASSERT_EQ(memory.size(), 3u);
  for (const auto& p : memory.pairs()) EXPECT_FALSE(p.s == s[0]);
  EXPECT_TRUE(memory.pairs().front().s == s[1]);
  EXPECT_TRUE(memory.pairs().back().s == s[3]);
}

TEST(Memory, H0ScaleFollowsNewestPair) {
  LbfgsMemory memory(2);
  const Vector s = (Vector(2) << 1, 0).finished();
  try_update(memory, s, 4.0 * s, {});
  EXPECT_DOUBLE_EQ(memory.h0_scale(), 0.25);
  try_update(memory, s, 0.5 * s, {});
  EXPECT_DOUBLE_EQ(memory.h0_scale(), 2.0);
}

TEST(Update, AcceptAndSkipRules) {
  const Vector s = (Vector(3) << 1, 2, -1).finished();
  {
    LbfgsMemory memory(4);
    EXPECT_EQ(try_update(memory, s, s, {true, 1e-4}), UpdateOutcome::accepted);
  }
  {
    LbfgsMemory memory(4);
    const Vector y = (Vector(3) << 2, -1, 0).finished();  // y^T s = 0
    EXPECT_EQ(try_update(memory, s, y, {true, 1e-6}), UpdateOutcome::skipped);
    EXPECT_TRUE(memory.empty());
    EXPECT_EQ(memory.h0_scale(), 1.0);
  }
  for (bool cautious : {true, false}) {
    LbfgsMemory memory(4);
    EXPECT_EQ(try_update(memory, s, -s, {cautious, 1e-6}), UpdateOutcome::skipped);
    EXPECT_TRUE(memory.empty());
  }
  {
    LbfgsMemory memory(4);
    EXPECT_EQ(try_update(memory, Vector::Zero(3), s, {}), UpdateOutcome::skipped);
  }
  {
    // Positive but below the cautious threshold: only non-cautious accepts.
    const Vector y = 1e-3 * s;
    LbfgsMemory a(4), b(4);
    EXPECT_EQ(try_update(a, s, y, {true, 1e-2}), UpdateOutcome::skipped);
    EXPECT_EQ(try_update(b, s, y, {false, 1e-2}), UpdateOutcome::accepted);
  }
  {
    LbfgsMemory memory(0);
    EXPECT_EQ(try_update(memory, s, s, {}), UpdateOutcome::skipped);
  }
}

TEST(Update, InvalidArgumentsThrow) {
  LbfgsMemory memory(2);
  const Vector s = Vector::Ones(3);
  EXPECT_THROW(try_update(memory, s, s, {true, 0.0}), DomainError);
  EXPECT_THROW(try_update(memory, s, Vector::Ones(2), {}), DomainError);
  try_update(memory, s, s, {});
  EXPECT_THROW(try_update(memory, Vector::Ones(4), Vector::Ones(4), {}), DomainError);
}

TEST(Update, StoredPairsKeepPositiveCurvatureAndSpdMatrices) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 20);
    LbfgsMemory memory(1 + rng() % 8);
    for (int i = 0; i < 30; ++i) {
      // Arbitrary y, so many offers have negative curvature.
      try_update(memory, random_vector(d, rng), random_vector(d, rng), {rng() % 2 == 0, 1e-3});
      for (const auto& p : memory.pairs()) {
        EXPECT_GT(p.y.dot(p.s), 0.0);
        EXPECT_NEAR(p.rho * p.y.dot(p.s), 1.0, 1e-14);
      }
    }
    const Matrix h = dense_inverse_hessian(memory, static_cast<std::size_t>(d));
    Eigen::LLT<Matrix> llt(0.5 * (h + h.transpose()));
    EXPECT_EQ(llt.info(), Eigen::Success);
  }
}

TEST(Dense, DirectTimesInverseIsIdentity) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 30; ++t) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 30);
    const auto memory = random_history(d, 1 + rng() % 8, rng() % 12, rng);
    const Matrix b = dense_direct_hessian(memory, static_cast<std::size_t>(d));
    const Matrix h = dense_inverse_hessian(memory, static_cast<std::size_t>(d));
    EXPECT_LE((b * h - Matrix::Identity(d, d)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Dense, SecantEquationHoldsForNewestPair) {
  std::mt19937_64 rng(4);
  const auto memory = random_history(8, 5, 9, rng);
  const auto& p = memory.pairs().back();
  EXPECT_LT((dense_inverse_hessian(memory, 8) * p.y - p.s).norm(), 1e-10 * p.s.norm());
  EXPECT_LT((dense_direct_hessian(memory, 8) * p.s - p.y).norm(), 1e-10 * p.y.norm());
}

TEST(Dense, OverMonitorLimitThrows) {
  LbfgsMemory memory(1);
  EXPECT_THROW(dense_inverse_hessian(memory, kDenseMonitorLimit + 1), DomainError);
  EXPECT_THROW(dense_direct_hessian(memory, kDenseMonitorLimit + 1), DomainError);
}

TEST(CurvatureRatio, QuadraticPairsLieInSpectrum) {
  std::mt19937_64 rng(12);
  const Matrix a = random_spd(10, rng, 1.0, 10.0);
  LbfgsMemory memory(5);
  for (int i = 0; i < 500; ++i) {
    const Vector s = random_vector(10, rng);
    ASSERT_EQ(try_update(memory, s, a * s, {}), UpdateOutcome::accepted);
    const double ratio = curvature_ratio(memory.pairs().back());
    EXPECT_GE(ratio, 1.0 - 1e-10);
    EXPECT_LE(ratio, 10.0 + 1e-10);
    EXPECT_GE(memory.h0_scale(), 0.1 - 1e-12);
    EXPECT_LE(memory.h0_scale(), 1.0 + 1e-12);
  }
}

TEST(CurvatureRatio, CautiousPairsRespectEpsilonBounds) {
  // y = G s with G symmetric, spectral norm at most L_O = 3, possibly indefinite.
  std::mt19937_64 rng(8);
  const double eps = 1e-2, lip = 3.0;
  std::size_t accepted = 0;
  for (int t = 0; t < 2000; ++t) {
    Matrix g = random_spd(6, rng, 0.01, lip) - random_spd(6, rng, 0.0, 1.0);
    g *= lip / g.operatorNorm();
    LbfgsMemory memory(3);
    const Vector s = random_vector(6, rng);
    if (try_update(memory, s, g * s, {true, eps}) == UpdateOutcome::skipped) continue;
    ++accepted;
    const double ratio = curvature_ratio(memory.pairs().back());
    EXPECT_GE(ratio, eps);
    EXPECT_LE(ratio, lip * lip / eps);
  }
  EXPECT_GT(accepted, 100u);
}
