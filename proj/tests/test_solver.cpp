#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <numbers>

#include "mbl/objective.hpp"
#include "mbl/solver.hpp"

using namespace mbl;

namespace {

QuadraticProblem noiseless_quadratic(std::vector<double> eigenvalues, std::size_t n, std::vector<double> minimizer = {}) {
  QuadraticSpec spec;
  spec.eigenvalues = std::move(eigenvalues);
  spec.n = n;
  spec.noise = 0.0;
  spec.minimizer = std::move(minimizer);
  return QuadraticProblem(spec);
}

std::shared_ptr<Dataset> small_data(double flip = 0.1) {
  return std::make_shared<Dataset>(generate_synthetic({400, 12, 4, 5, flip}));
}

bool same_records(const Trace& a, const Trace& b) {
  if (a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto &x = a.records[i], &y = b.records[i];
    if (x.k != y.k || x.epoch != y.epoch || x.f_batch != y.f_batch || x.grad_norm_batch != y.grad_norm_batch ||
        x.f_full != y.f_full || x.grad_norm_full != y.grad_norm_full || x.pair_skipped != y.pair_skipped ||
        x.batch_size != y.batch_size || x.overlap_size != y.overlap_size)
      return false;
  }
  return true;
}

}  // namespace

TEST(Solver, GradientDescentTakesExactStepOnIdentity) {
  QuadraticSpec spec;
  spec.eigenvalues = {1, 1, 1};
  spec.rotation_seed = 0;
  spec.n = 2;
  spec.noise = 0.0;
  QuadraticProblem q(spec);
  SolverConfig c;
  c.method = Method::gradient_descent;
  c.strategy = Strategy::subsample;
  c.r = 1.0;
  c.alpha = 1.0;
  c.max_iters = 1;
  c.eval_every = 1;
  const Trace t = run(q, c, Vector(Vector::Unit(3, 0)));
  ASSERT_EQ(t.records.size(), 2u);
  EXPECT_DOUBLE_EQ(*t.records[0].grad_norm_full, 1.0);
  EXPECT_EQ(*t.records[1].grad_norm_full, 0.0);
  EXPECT_TRUE(t.final_point.isZero(0.0));
}

TEST(Solver, RobustLbfgsConvergesOnQuadraticWithin50Iterations) {
  std::vector<double> ev;
  for (int i = 1; i <= 10; ++i) ev.push_back(i);
  const auto q = noiseless_quadratic(ev, 50, std::vector<double>(10, 1.0));
  SolverConfig c;
  c.strategy = Strategy::subsample;
  c.r = 1.0;
  c.o = 0.2;
  c.alpha = 1.0;
  c.memory = 10;
  c.max_iters = 50;
  c.eval_every = 1;
  const Trace t = run(q, c);
  ASSERT_FALSE(t.diverged);
  double best = INFINITY;
  for (const auto& r : t.records) best = std::min(best, *r.grad_norm_full);
  EXPECT_LE(best, 1e-8);
  EXPECT_LE(*t.records.back().grad_norm_full, 1e-8);
}

TEST(Solver, MinimizerIsAFixedPoint) {
  const std::vector<double> wstar{1.5, -2.0, 0.5, 3.0};
  const auto q = noiseless_quadratic({1, 2, 3, 4}, 100, wstar);
  const Vector w0 = Eigen::Map<const Vector>(wstar.data(), 4);
  for (auto method : {Method::robust_lbfgs, Method::naive_lbfgs, Method::gradient_descent, Method::serial_sgd})
    for (auto strategy : {Strategy::partition, Strategy::subsample, Strategy::fault}) {
      SolverConfig c;
      c.method = method;
      c.strategy = strategy;
      c.epochs = 3;
      const Trace t = run(q, c, w0);
      ASSERT_FALSE(t.diverged);
      EXPECT_TRUE(t.final_point == w0) << to_string(method) << "/" << to_string(strategy);
      for (const auto& r : t.records) EXPECT_EQ(r.grad_norm_batch, 0.0);
    }
}

TEST(Solver, GradientDescentEqualsRobustWithZeroMemory) {
  LogisticProblem p(small_data());
  SolverConfig gd;
  gd.method = Method::gradient_descent;
  gd.epochs = 4;
  gd.r = 0.1;
  SolverConfig robust = gd;
  robust.method = Method::robust_lbfgs;
  robust.memory = 0;
  const Trace a = run(p, gd), b = run(p, robust);
  EXPECT_TRUE(same_records(a, b));
  EXPECT_TRUE(a.final_point == b.final_point);
  for (const auto& r : a.records) EXPECT_TRUE(r.pair_skipped);
}

TEST(Solver, GradientDescentSharesPlansWithRobust) {
  LogisticProblem p(small_data());
  SolverConfig c;
  c.epochs = 3;
  c.strategy = Strategy::fault;
  c.nodes = 8;
  c.p = 0.3;
  SolverConfig gd = c;
  gd.method = Method::gradient_descent;
  const Trace a = run(p, c), b = run(p, gd);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].batch_size, b.records[i].batch_size);
    EXPECT_EQ(a.records[i].overlap_size, b.records[i].overlap_size);
  }
}

TEST(Solver, BitwiseDeterministic) {
  LogisticProblem p(small_data());
  for (auto method : {Method::robust_lbfgs, Method::naive_lbfgs, Method::serial_sgd})
    for (auto strategy : {Strategy::partition, Strategy::subsample, Strategy::fault}) {
      SolverConfig c;
      c.method = method;
      c.strategy = strategy;
      c.epochs = 2;
      c.chunk_count = 3;
      const Trace a = run(p, c), b = run(p, c);
      EXPECT_TRUE(same_records(a, b));
      EXPECT_TRUE(a.final_point == b.final_point);
    }
}

TEST(Solver, RecordsAreFiniteAndWellFormed) {
  LogisticProblem p(small_data());
  SolverConfig c;
  c.epochs = 5;
  c.cautious = true;
  c.epsilon = 1e-4;
  const Trace t = run(p, c, [](const StepInfo& step) {
    for (const auto& pair : step.memory.pairs()) {
      ASSERT_TRUE(pair.s.allFinite());
      ASSERT_TRUE(pair.y.allFinite());
      ASSERT_TRUE(std::isfinite(pair.rho));
      ASSERT_GT(pair.y.dot(pair.s), 0.0);
    }
  });
  ASSERT_FALSE(t.diverged);
  std::size_t evaluated = 0;
  for (const auto& r : t.records) {
    EXPECT_GE(r.batch_size, 1u);
    EXPECT_GE(r.grad_norm_batch, 0.0);
    EXPECT_TRUE(std::isfinite(r.f_batch));
    evaluated += r.grad_norm_full.has_value();
  }
  EXPECT_EQ(evaluated, 6u);  // once per epoch plus the final iterate
  EXPECT_EQ(t.records.back().epoch, 5u);
  EXPECT_TRUE(t.records.back().grad_norm_full.has_value());
}

TEST(Solver, RobustPairsUseExactOverlap) {
  LogisticProblem p(small_data());
  SolverConfig c;
  c.epochs = 3;
  c.strategy = Strategy::partition;
  std::size_t checked = 0;
  run(p, c, [&](const StepInfo& step) {
    if (!step.offered) {
      EXPECT_TRUE(step.plan.boundary || step.plan.overlap_next.empty());
      return;
    }
    const Vector expected = p.evaluate(step.w_next, step.plan.overlap_next).gradient -
                            p.evaluate(step.w, step.plan.overlap_next).gradient;
    EXPECT_TRUE(step.offered->y == expected);
    ++checked;
  });
  EXPECT_GT(checked, 0u);
}

TEST(Solver, NaivePairsUseConsecutiveBatches) {
  LogisticProblem p(small_data());
  SolverConfig c;
  c.method = Method::naive_lbfgs;
  c.max_iters = 20;
  struct Step {
    Vector w, w_next, y;
    IndexList batch;
  };
  std::vector<Step> steps;
  run(p, c, [&](const StepInfo& step) {
    ASSERT_NE(step.offered, nullptr);
    steps.push_back({step.w, step.w_next, step.offered->y, step.plan.batch});
  });
  ASSERT_EQ(steps.size(), 20u);
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
    const Vector expected = p.evaluate(steps[k].w_next, steps[k + 1].batch).gradient -
                            p.evaluate(steps[k].w, steps[k].batch).gradient;
    EXPECT_TRUE(steps[k].y == expected) << "k = " << k;
  }
}

TEST(Solver, DivergenceTruncatesInsteadOfThrowing) {
  const auto q = noiseless_quadratic({1, 100}, 10);
  SolverConfig c;
  c.method = Method::gradient_descent;
  c.alpha = 1.0;  // |1 - 100| > 1: geometric blow-up
  c.max_iters = 100000;
  c.strategy = Strategy::subsample;
  c.r = 1.0;
  const Trace t = run(q, c, Vector(Vector::Ones(2)));
  EXPECT_TRUE(t.diverged);
  EXPECT_LT(t.records.size(), 100000u);
  for (const auto& r : t.records) EXPECT_LE(r.f_batch, 1e300);
}

TEST(Solver, InvalidConfigThrowsBeforeIterating) {
  LogisticProblem p(small_data());
  SolverConfig c;
  EXPECT_THROW(run(p, c), ConfigError);  // no termination bound
  c.epochs = 1;
  c.max_iters = 1;
  EXPECT_THROW(run(p, c), ConfigError);
  c.max_iters.reset();
  c.alpha = 0.0;
  EXPECT_THROW(run(p, c), ConfigError);
  c.alpha = 1.0;
  c.r = 0.001;
  EXPECT_THROW(run(p, c), ConfigError);
  c.r = 0.1;
  EXPECT_THROW(run(p, c, Vector(Vector::Zero(3))), ConfigError);
}

TEST(Solver, SerialSgdUsesOneSamplePerStep) {
  LogisticProblem p(small_data());
  SolverConfig c;
  c.method = Method::serial_sgd;
  c.alpha = 0.1;
  c.epochs = 2;
  const Trace t = run(p, c);
  ASSERT_EQ(t.records.size(), 801u);
  for (std::size_t i = 0; i + 1 < t.records.size(); ++i) {
    EXPECT_EQ(t.records[i].batch_size, 1u);
    EXPECT_EQ(t.records[i].epoch, i / 400);
  }
}

TEST(InitialPoint, ZerosAndSeededGaussian) {
  EXPECT_TRUE(initial_point(5, InitialPoint::zeros, 1).isZero(0.0));
  const Vector a = initial_point(10000, InitialPoint::seeded_gaussian, 3);
  EXPECT_TRUE(a == initial_point(10000, InitialPoint::seeded_gaussian, 3));
  EXPECT_FALSE(a == initial_point(10000, InitialPoint::seeded_gaussian, 4));
  EXPECT_NEAR(a.cwiseAbs().mean(), std::sqrt(2.0 / std::numbers::pi), 0.02);
}
