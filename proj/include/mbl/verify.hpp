#pragma once

// Self-checks behind `mbl verify`: each returns one line per property with
// the measured value, the threshold it is held to, and the verdict.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mbl/analysis.hpp"
#include "mbl/data.hpp"
#include "mbl/lbfgs.hpp"
#include "mbl/objective.hpp"
#include "mbl/sampling.hpp"
#include "mbl/solver.hpp"

namespace mbl {

struct CheckLine {
  std::string check;
  std::string property;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

// Reference problems -------------------------------------------------------

/// d = 10 quadratic, Hessian eigenvalues 1..10, n = 1000 centred shifts.
inline QuadraticProblem reference_quadratic() {
  QuadraticSpec spec;
  for (int i = 1; i <= 10; ++i) spec.eigenvalues.push_back(i);
  spec.n = 1000;
  spec.noise = 1.0;
  spec.minimizer.assign(10, 1.0);
  return QuadraticProblem(spec);
}

inline SolverConfig reference_convex_config() {
  SolverConfig c;
  c.strategy = Strategy::subsample;
  c.r = 0.05;
  c.o = 0.2;
  c.alpha = 0.1;
  c.max_iters = 2000;
  return c;
}

inline CauchyProblem reference_cauchy(std::size_t d, std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.n = 500;
  s.d = d;
  s.nnz_per_row = std::min<std::size_t>(d, 10);
  s.seed = seed;
  return CauchyProblem(std::make_shared<Dataset>(generate_synthetic(s)));
}

inline SolverConfig reference_nonconvex_config() {
  SolverConfig c;
  c.strategy = Strategy::subsample;
  c.r = 0.1;
  c.o = 0.2;
  c.alpha = 0.1;
  c.max_iters = 5000;
  c.cautious = true;
  c.epsilon = 1e-4;
  c.init = InitialPoint::seeded_gaussian;
  return c;
}

// Checks -------------------------------------------------------------------

/// Logistic gradients against central differences (h = 1e-5).
inline std::vector<CheckLine> verify_gradient(std::size_t instances = 20, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    SyntheticSpec spec;
    spec.n = std::uniform_int_distribution<std::size_t>(20, 200)(rng);
    spec.d = std::uniform_int_distribution<std::size_t>(2, 50)(rng);
    spec.nnz_per_row = std::uniform_int_distribution<std::size_t>(1, spec.d)(rng);
    spec.seed = rng();
    spec.flip_probability = 0.1;
    LogisticProblem problem(std::make_shared<Dataset>(generate_synthetic(spec)));
    Vector w = initial_point(spec.d, InitialPoint::seeded_gaussian, rng());
    const auto all = full_index_set(spec.n);
    const Vector g = problem.evaluate(w, all).gradient;
    Vector fd(g.size());
    const double h = 1e-5;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      Vector wp = w, wm = w;
      wp[j] += h;
      wm[j] -= h;
      fd[j] = (problem.evaluate(wp, all).value - problem.evaluate(wm, all).value) / (2 * h);
    }
    worst = std::max(worst, (fd - g).norm() / std::max(g.norm(), 1e-300));
  }
  return {{"gradient", "max relative error vs central differences", worst, 1e-6, worst <= 1e-6}};
}

/// Two-loop direction against the dense inverse-Hessian product.
inline std::vector<CheckLine> verify_two_loop(std::size_t histories = 100, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (std::size_t t = 0; t < histories; ++t) {
    const auto d = std::uniform_int_distribution<Eigen::Index>(1, 50)(rng);
    const auto m = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
    const std::size_t offered = std::uniform_int_distribution<std::size_t>(0, 2 * m)(rng);
    Matrix root(d, d);
    for (auto& v : root.reshaped()) v = normal(rng);
    const Matrix spd = root * root.transpose() + 0.1 * Matrix::Identity(d, d);
    LbfgsMemory memory(m);
    for (std::size_t i = 0; i < offered; ++i) {
      Vector s(d);
      for (auto& v : s) v = normal(rng);
      try_update(memory, s, spd * s, UpdateRule{false, 0.0});
    }
    Vector g(d);
    for (auto& v : g) v = normal(rng);
    const Vector dense = -(dense_inverse_hessian(memory, static_cast<std::size_t>(d)) * g);
    const Vector fast = two_loop_direction(memory, g);
    worst = std::max(worst, (fast - dense).norm() / std::max(dense.norm(), 1e-300));
  }
  return {{"two-loop", "max relative deviation from dense H g", worst, 1e-10, worst <= 1e-10}};
}

/// Curvature-ratio bounds: exact on a quadratic with overlap Hessian
/// eigenvalues in [1, 10]; epsilon floor and bounded spectrum under cautious
/// updating on the Cauchy problem.
inline std::vector<CheckLine> verify_curvature(std::uint64_t seed = 1) {
  std::vector<CheckLine> out;
  {
    const QuadraticProblem q = reference_quadratic();
    SolverConfig c = reference_convex_config();
    c.max_iters = 1000;
    c.seed = seed;
    CurvatureRatioStats stats;
    run(q, c, [&](const StepInfo& step) { stats.observe(step); });
    const double lo = q.lambda_min() - 1e-8, hi = q.lambda_max() + 1e-8;
    out.push_back({"curvature", "quadratic min |y|^2/y^T s", stats.min_ratio, lo,
                   stats.accepted > 0 && stats.min_ratio >= lo});
    out.push_back({"curvature", "quadratic max |y|^2/y^T s", stats.max_ratio, hi,
                   stats.accepted > 0 && stats.max_ratio <= hi});
  }
  {
    const CauchyProblem p = reference_cauchy(20);
    SolverConfig c = reference_nonconvex_config();
    c.max_iters = 1000;
    c.seed = seed;
    CurvatureRatioStats stats;
    HessianEigenMonitor eigen(p.dim());
    run(p, c, [&](const StepInfo& step) {
      stats.observe(step);
      eigen.observe(step.memory);
    });
    const bool any = stats.accepted > 0;
    out.push_back({"curvature", "cautious min |y|^2/s^T y", any ? stats.min_ratio : 0.0, c.epsilon,
                   any && stats.min_ratio >= c.epsilon});
    out.push_back({"curvature", "cautious min eigenvalue of H_k", eigen.bounds().mu1, 0.0, eigen.bounds().mu1 > 0.0});
    out.push_back({"curvature", "cautious max eigenvalue of H_k", eigen.bounds().mu2, 0.0,
                   std::isfinite(eigen.bounds().mu2)});
  }
  return out;
}

inline std::vector<CheckLine> verify_convex_bound(std::uint64_t seed = 1, std::size_t seeds = 10) {
  SolverConfig c = reference_convex_config();
  c.seed = seed;
  const auto report = check_convex_neighborhood(reference_quadratic(), c, seeds);
  return {
      {"convex-bound", "alpha below 1/(2 mu1 lambda)", report.alpha,
       report.constants.mu1 > 0 ? convex_alpha_limit(report.constants) : 0.0, report.applicable},
      {"convex-bound", "violations of the bound curve", static_cast<double>(report.violations), 0.0,
       report.applicable && report.violations == 0},
      {"convex-bound", "tail mean gap vs limit", report.tail_mean_gap, report.limit,
       report.applicable && report.tail_mean_gap <= report.limit},
  };
}

inline std::vector<CheckLine> verify_nonconvex_bound(std::uint64_t seed = 1) {
  SolverConfig c = reference_nonconvex_config();
  c.seed = seed;
  const auto report = check_nonconvex_average_gradient(reference_cauchy(10), c);
  return {
      {"nonconvex-bound", "alpha below mu1/(mu2^2 eta Lambda)", report.alpha,
       report.constants.mu1 > 0 ? nonconvex_alpha_limit(report.constants) : 0.0, report.applicable},
      {"nonconvex-bound", "mean |grad F|^2 vs bound", report.mean_squared_grad, report.bound, report.passed},
  };
}

/// Overlap identity, epoch coverage, responsive-node count and
/// iterations per epoch.
inline std::vector<CheckLine> verify_samplers(std::uint64_t seed = 1) {
  std::vector<CheckLine> out;
  auto identity = [](BatchSampler& sampler, std::size_t iterations) {
    BatchPlan prev = sampler.next();
    std::size_t bad = 0;
    for (std::size_t k = 0; k < iterations; ++k) {
      BatchPlan next = sampler.next();
      IndexList both;
      std::set_intersection(prev.batch.begin(), prev.batch.end(), next.batch.begin(), next.batch.end(),
                            std::back_inserter(both));
      if (both != prev.overlap_next || both != next.overlap_prev) ++bad;
      prev = std::move(next);
    }
    return bad;
  };
  {
    PartitionSampler s(1000, 0.1, 0.2, seed);
    const auto bad = identity(s, 1000);
    out.push_back({"samplers", "partition O_k != S_k cap S_k+1", double(bad), 0.0, bad == 0});
  }
  {
    FaultSampler s(make_node_partition(1000, 16, 0.3, seed), 0);
    const auto bad = identity(s, 1000);
    out.push_back({"samplers", "fault O_k != S_k cap S_k+1", double(bad), 0.0, bad == 0});
  }
  {
    PartitionSampler s(1000, 0.1, 0.2, seed);
    std::size_t incomplete = 0;
    for (int e = 0; e < 20; ++e) {
      std::vector<char> seen(1000, 0);
      for (std::size_t k = 0; k < s.plans_per_epoch(); ++k)
        for (auto i : s.next().batch) seen[i] = 1;
      if (std::count(seen.begin(), seen.end(), 0) != 0) ++incomplete;
    }
    out.push_back({"samplers", "partition epochs missing an index", double(incomplete), 0.0, incomplete == 0});
  }
  {
    FaultSampler s(make_node_partition(1000, 16, 0.3, seed), 0);
    double total = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) total += static_cast<double>(s.next().nodes.size());
    const double mean = total / draws;
    out.push_back({"samplers", "fault mean responsive nodes (K=16 p=0.3)", mean, 0.2,
                   std::abs(mean - 11.2) <= 0.2});
  }
  {
    PartitionSampler s(100000, 0.01, 0.2, seed);
    const double per_epoch = static_cast<double>(s.plans_per_epoch());
    out.push_back({"samplers", "partition iterations per epoch (n=1e5 r=0.01 o=0.2)", per_epoch, 1.0,
                   std::abs(per_epoch - 125.0) <= 1.0});
  }
  return out;
}

}  // namespace mbl
