#pragma once

// Numerical checks of the convergence theory on desk-scale problems: dense
// eigenvalue and trace/determinant monitors for the L-BFGS matrices, the
// closed-form neighborhood bounds, and end-to-end checks that run the solver
// and compare measured behaviour with the bounds.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mbl/error.hpp"
#include "mbl/lbfgs.hpp"
#include "mbl/objective.hpp"
#include "mbl/solver.hpp"

namespace mbl {

/// Constants appearing in the convergence bounds. lambda_* are Hessian
/// eigenvalue bounds of F (full) and of every overlap function; mu1/mu2 bound
/// the spectrum of H_k; gamma bounds batch-gradient norms; eta is the
/// gradient-growth constant of the nonconvex analysis.
struct BoundConstants {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double overlap_lambda_min = 0.0;
  double overlap_lambda_max = 0.0;
  double mu1 = 0.0;
  double mu2 = 0.0;
  double gamma = 0.0;
  double eta = 1.0;
  double overlap_lipschitz = 0.0;
  double f_star = 0.0;
};

inline constexpr std::size_t kEigenMonitorLimit = 200;

struct EigenBounds {
  double mu1 = std::numeric_limits<double>::infinity();
  double mu2 = 0.0;
  std::size_t snapshots = 0;
};

/// Tracks min/max eigenvalues of the dense H_k over a run.
class HessianEigenMonitor {
 public:
  explicit HessianEigenMonitor(std::size_t d) : d_(d) {
    if (d > kEigenMonitorLimit) throw DomainError("eigen monitor: dimension over monitor limit");
  }

  void observe(const LbfgsMemory& memory) {
    const Matrix h = dense_inverse_hessian(memory, d_);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(h, Eigen::EigenvaluesOnly);
    const auto& ev = solver.eigenvalues();
    bounds_.mu1 = std::min(bounds_.mu1, ev.minCoeff());
    bounds_.mu2 = std::max(bounds_.mu2, ev.maxCoeff());
    ++bounds_.snapshots;
  }

  const EigenBounds& bounds() const { return bounds_; }

 private:
  std::size_t d_;
  EigenBounds bounds_;
};

/// mu1 = min_k lambda_min(H_k), mu2 = max_k lambda_max(H_k). Throws if some
/// snapshot is not positive definite.
inline EigenBounds measure_hessian_eigen_bounds(std::span<const LbfgsMemory> snapshots, std::size_t d) {
  HessianEigenMonitor monitor(d);
  for (const auto& m : snapshots) monitor.observe(m);
  if (monitor.bounds().snapshots > 0 && !(monitor.bounds().mu1 > 0.0))
    throw DomainError("Hessian approximation is not positive definite");
  return monitor.bounds();
}

struct TraceDet {
  double trace = 0.0;
  double det = 0.0;
  double log_det = 0.0;
};

/// Trace and determinant of the direct approximation B_k.
inline TraceDet trace_det_monitor(const LbfgsMemory& memory, std::size_t d) {
  if (d > kEigenMonitorLimit) throw DomainError("trace/det monitor: dimension over monitor limit");
  const Matrix b = dense_direct_hessian(memory, d);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (b + b.transpose()), Eigen::EigenvaluesOnly);
  TraceDet out;
  out.trace = b.trace();
  out.log_det = solver.eigenvalues().array().log().sum();
  out.det = b.determinant();
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form bounds

/// Step-length interval (0, 1 / (2 mu1 lambda)) of the strongly convex bound.
inline double convex_alpha_limit(const BoundConstants& c) { return 1.0 / (2.0 * c.mu1 * c.lambda_min); }

inline double convex_limit(const BoundConstants& c, double alpha) {
  return alpha * c.mu2 * c.mu2 * c.gamma * c.gamma * c.lambda_max / (4.0 * c.mu1 * c.lambda_min);
}

/// b_k = (1 - 2 a mu1 lambda)^k gap0 + [1 - (1 - a mu1 lambda)^k] * limit,
/// with the two decay rates kept as given: the curve undershoots the limit
/// before converging to it.
inline double convex_bound_at(const BoundConstants& c, double gap0, double alpha, std::size_t k) {
  const double x = alpha * c.mu1 * c.lambda_min;
  const double kk = static_cast<double>(k);
  return std::pow(1.0 - 2.0 * x, kk) * gap0 + (1.0 - std::pow(1.0 - x, kk)) * convex_limit(c, alpha);
}

inline std::vector<double> convex_bound_curve(const BoundConstants& c, double gap0, double alpha,
                                              std::size_t k_max) {
  if (!(c.mu1 > 0.0 && c.mu2 >= c.mu1 && c.lambda_min > 0.0 && c.lambda_max >= c.lambda_min))
    throw DomainError("convex_bound_curve: invalid constants");
  if (!(alpha > 0.0 && alpha < convex_alpha_limit(c)))
    throw DomainError("convex_bound_curve: alpha outside (0, 1/(2 mu1 lambda))");
  std::vector<double> out(k_max + 1);
  for (std::size_t k = 0; k <= k_max; ++k) out[k] = convex_bound_at(c, gap0, alpha, k);
  return out;
}

/// Step-length interval (0, mu1 / (mu2^2 eta Lambda)) of the nonconvex bound.
inline double nonconvex_alpha_limit(const BoundConstants& c) {
  return c.mu1 / (c.mu2 * c.mu2 * c.eta * c.lambda_max);
}

inline double nonconvex_limit(const BoundConstants& c, double alpha) {
  return alpha * c.mu2 * c.mu2 * c.gamma * c.gamma * c.lambda_max / c.mu1;
}

/// Bound on (1/L) sum_{k<L} E|grad F(w_k)|^2.
inline double nonconvex_bound(const BoundConstants& c, double gap0, double alpha, double iterations) {
  if (!(c.mu1 > 0.0 && c.mu2 >= c.mu1 && c.lambda_max > 0.0 && c.eta > 0.0))
    throw DomainError("nonconvex_bound: invalid constants");
  if (!(alpha > 0.0 && alpha < nonconvex_alpha_limit(c)))
    throw DomainError("nonconvex_bound: alpha outside (0, mu1/(mu2^2 eta Lambda))");
  if (!(iterations > 0.0)) throw DomainError("nonconvex_bound: iteration count must be positive");
  return nonconvex_limit(c, alpha) + 2.0 * gap0 / (alpha * c.mu1 * iterations);
}

// ---------------------------------------------------------------------------
// Pair audits

/// Statistics of ||y||^2 / (y^T s) over the accepted pairs of a run.
struct CurvatureRatioStats {
  std::size_t offered = 0;
  std::size_t accepted = 0;
  double min_ratio = std::numeric_limits<double>::infinity();
  double max_ratio = 0.0;
  double min_h0_scale = std::numeric_limits<double>::infinity();
  double max_h0_scale = 0.0;
  bool all_finite = true;

  void observe(const StepInfo& step) {
    if (!step.offered) return;
    ++offered;
    if (step.outcome != UpdateOutcome::accepted) return;
    ++accepted;
    const double ratio = curvature_ratio(*step.offered);
    min_ratio = std::min(min_ratio, ratio);
    max_ratio = std::max(max_ratio, ratio);
    min_h0_scale = std::min(min_h0_scale, step.memory.h0_scale());
    max_h0_scale = std::max(max_h0_scale, step.memory.h0_scale());
    for (const auto& pair : step.memory.pairs())
      all_finite = all_finite && pair.s.allFinite() && pair.y.allFinite() && std::isfinite(pair.rho);
  }
};

// ---------------------------------------------------------------------------
// End-to-end checks

struct ConvexNeighborhoodReport {
  bool applicable = false;
  bool passed = false;
  BoundConstants constants;
  double alpha = 0.0;
  std::vector<double> mean_gap;  // seed-averaged F(w_k) - F*
  std::vector<double> bound;
  std::size_t violations = 0;
  double max_ratio_to_bound = 0.0;
  double tail_mean_gap = 0.0;
  double limit = 0.0;
  std::string note;
};

/// Runs `n_seeds` solver instances (seeds config.seed, config.seed+1, ...) on a
/// quadratic, measures mu1, mu2 and gamma (max observed batch-gradient norm
/// plus 10%), and checks the seed-averaged gap against the bound curve for
/// every k, and the mean gap over the second half of the run against the
/// limit value.
inline ConvexNeighborhoodReport check_convex_neighborhood(const QuadraticProblem& problem,
                                                          const SolverConfig& config, std::size_t n_seeds) {
  if (!config.max_iters) throw ConfigError("check_convex_neighborhood needs max_iters");
  if (n_seeds == 0) throw ConfigError("check_convex_neighborhood needs at least one seed");
  const std::size_t d = problem.dim();
  const std::size_t k_max = *config.max_iters;

  ConvexNeighborhoodReport report;
  report.alpha = config.alpha;
  report.mean_gap.assign(k_max + 1, 0.0);
  HessianEigenMonitor eigen(d);
  eigen.observe(LbfgsMemory(config.memory));
  double max_grad = 0.0;
  std::size_t completed = 0;

  for (std::size_t s = 0; s < n_seeds; ++s) {
    SolverConfig seeded = config;
    seeded.seed = config.seed + s;
    std::vector<double> gaps;
    gaps.reserve(k_max + 1);
    const Trace trace = run(problem, seeded, [&](const StepInfo& step) {
      gaps.push_back(problem.gap(step.w));
      eigen.observe(step.memory);
    });
    if (trace.diverged) {
      report.note = "run diverged for seed " + std::to_string(seeded.seed);
      return report;
    }
    gaps.push_back(problem.gap(trace.final_point));
    for (const auto& rec : trace.records) max_grad = std::max(max_grad, rec.grad_norm_batch);
    for (std::size_t k = 0; k <= k_max && k < gaps.size(); ++k) report.mean_gap[k] += gaps[k];
    ++completed;
  }
  for (auto& g : report.mean_gap) g /= static_cast<double>(completed);

  BoundConstants& c = report.constants;
  c.lambda_min = problem.lambda_min();
  c.lambda_max = problem.lambda_max();
  c.overlap_lambda_min = problem.lambda_min();
  c.overlap_lambda_max = problem.lambda_max();
  c.mu1 = eigen.bounds().mu1;
  c.mu2 = eigen.bounds().mu2;
  c.gamma = 1.1 * max_grad;
  c.f_star = problem.optimal_value();

  if (!(c.mu1 > 0.0) || !(config.alpha < convex_alpha_limit(c))) {
    report.note = "alpha outside (0, 1/(2 mu1 lambda)) for the measured mu1";
    return report;
  }
  report.applicable = true;
  report.bound = convex_bound_curve(c, report.mean_gap[0], config.alpha, k_max);
  report.limit = convex_limit(c, config.alpha);
  for (std::size_t k = 0; k <= k_max; ++k) {
    const double bound = report.bound[k];
    report.max_ratio_to_bound = std::max(report.max_ratio_to_bound, report.mean_gap[k] / bound);
    if (report.mean_gap[k] > bound * (1.0 + 1e-12)) ++report.violations;
  }
  const std::size_t tail_begin = k_max / 2;
  double tail = 0.0;
  for (std::size_t k = tail_begin; k <= k_max; ++k) tail += report.mean_gap[k];
  report.tail_mean_gap = tail / static_cast<double>(k_max + 1 - tail_begin);
  report.passed = report.violations == 0 && report.tail_mean_gap <= report.limit;
  return report;
}

struct NonconvexReport {
  bool applicable = false;
  bool passed = false;
  BoundConstants constants;
  double alpha = 0.0;
  std::size_t rounds = 0;
  double mean_squared_grad = 0.0;
  double bound = 0.0;
  double gap0 = 0.0;
  CurvatureRatioStats ratios;
  std::string note;
};

/// Runs the cautious method on the Cauchy problem for L = max_iters steps,
/// measures mu1, mu2, gamma (max batch-gradient norm plus 10%, eta = 1) and
/// Lambda (gradient Lipschitz constant of F). While the step length lies
/// outside (0, mu1/(mu2^2 eta Lambda)) it is halved below the measured limit
/// and the run repeated. Then compares the mean of |grad F(w_k)|^2 over
/// k < L with the bound.
inline NonconvexReport check_nonconvex_average_gradient(const CauchyProblem& problem, SolverConfig config,
                                                        std::size_t max_rounds = 8) {
  if (!config.max_iters || *config.max_iters == 0) throw ConfigError("nonconvex check needs max_iters > 0");
  if (!config.cautious) throw ConfigError("nonconvex check needs cautious updating");
  const std::size_t d = problem.dim();
  const std::size_t iterations = *config.max_iters;

  NonconvexReport report;
  const double full_lipschitz = problem.full_lipschitz_bound();
  for (std::size_t round = 0; round < max_rounds; ++round) {
    report.rounds = round + 1;
    HessianEigenMonitor eigen(d);
    eigen.observe(LbfgsMemory(config.memory));
    CurvatureRatioStats ratios;
    double sum_sq = 0.0;
    std::size_t counted = 0;
    double max_grad = 0.0;
    const Vector w0 = initial_point(problem, config.init, config.seed);
    const Trace trace = run(problem, config, w0, [&](const StepInfo& step) {
      eigen.observe(step.memory);
      ratios.observe(step);
      const double g = full_gradient_norm(problem, step.w, config.chunk_count);
      sum_sq += g * g;
      ++counted;
      max_grad = std::max(max_grad, step.batch_eval.gradient.norm());
    });
    if (trace.diverged) {
      report.note = "run diverged";
      return report;
    }

    BoundConstants& c = report.constants;
    c.lambda_max = full_lipschitz;
    c.overlap_lipschitz = problem.lipschitz_bound();
    c.mu1 = eigen.bounds().mu1;
    c.mu2 = eigen.bounds().mu2;
    c.gamma = 1.1 * max_grad;
    c.eta = 1.0;
    c.f_star = problem.lower_bound();
    report.alpha = config.alpha;
    report.ratios = ratios;
    report.gap0 = evaluate_full(problem, w0, config.chunk_count).value - c.f_star;
    report.mean_squared_grad = sum_sq / static_cast<double>(counted);

    if (c.mu1 > 0.0 && config.alpha < nonconvex_alpha_limit(c) && counted == iterations) {
      report.applicable = true;
      report.bound = nonconvex_bound(c, report.gap0, config.alpha, static_cast<double>(iterations));
      report.passed = report.mean_squared_grad <= report.bound;
      return report;
    }
    if (!(c.mu1 > 0.0)) {
      report.note = "H_k lost positive definiteness";
      return report;
    }
    config.alpha = 0.5 * nonconvex_alpha_limit(c);
  }
  report.note = "step length did not settle inside the measured interval";
  return report;
}

}  // namespace mbl
