#pragma once

// Fixed-step multi-batch L-BFGS and its baselines.
//
//   robust_lbfgs      y_k = g^{O_k}(w_{k+1}) - g^{O_k}(w_k) on the overlap
//   naive_lbfgs       y_k = g^{S_{k+1}}(w_{k+1}) - g^{S_k}(w_k)
//   gradient_descent  H_k = I on the same batches
//   serial_sgd        one uniformly drawn example per step

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "mbl/error.hpp"
#include "mbl/lbfgs.hpp"
#include "mbl/objective.hpp"
#include "mbl/sampling.hpp"

namespace mbl {

enum class Method { robust_lbfgs, naive_lbfgs, gradient_descent, serial_sgd };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::robust_lbfgs: return "robust";
    case Method::naive_lbfgs: return "naive";
    case Method::gradient_descent: return "gd";
    case Method::serial_sgd: return "sgd";
  }
  return "?";
}

enum class InitialPoint { zeros, seeded_gaussian };

struct SolverConfig {
  Method method = Method::robust_lbfgs;
  double alpha = 1.0;
  std::size_t memory = 10;
  double epsilon = 1e-6;
  bool cautious = false;
  Strategy strategy = Strategy::partition;
  double r = 0.1;
  double o = 0.2;
  std::size_t nodes = 16;
  double p = 0.1;
  /// Reshuffle data across nodes every this many iterations (0 = never).
  std::size_t redistribute_every = 0;
  /// Exactly one of `epochs` and `max_iters` must be set.
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> max_iters;
  std::uint64_t seed = 1;
  /// Full objective/gradient cadence in iterations; 0 evaluates at the first
  /// iteration of every epoch. The final iterate is always evaluated.
  std::size_t eval_every = 0;
  std::size_t chunk_count = 1;
  InitialPoint init = InitialPoint::zeros;
  /// Record per-iteration wall time; off keeps traces reproducible byte for byte.
  bool record_timing = false;
};

inline void validate(const SolverConfig& config) {
  if (!(config.alpha > 0.0) || !std::isfinite(config.alpha)) throw ConfigError("alpha must be positive");
  if (config.epochs.has_value() == config.max_iters.has_value())
    throw ConfigError("set exactly one of epochs and max_iters");
  if (config.cautious && !(config.epsilon > 0.0)) throw ConfigError("cautious epsilon must be positive");
  if (config.chunk_count == 0) throw ConfigError("chunk_count must be positive");
  if (config.method != Method::serial_sgd && config.strategy == Strategy::fault) {
    if (config.nodes == 0) throw ConfigError("node count must be positive");
    if (!(config.p >= 0.0 && config.p < 1.0)) throw ConfigError("failure probability must lie in [0, 1)");
  }
}

struct IterationRecord {
  std::size_t k = 0;
  std::size_t epoch = 0;
  double f_batch = 0.0;
  double grad_norm_batch = 0.0;
  std::optional<double> f_full;
  std::optional<double> grad_norm_full;
  bool pair_skipped = true;
  std::size_t batch_size = 0;
  std::size_t overlap_size = 0;
  std::int64_t elapsed_ns = 0;
};

struct Trace {
  std::vector<IterationRecord> records;
  bool diverged = false;
  Vector final_point;
};

/// What the solver did in one iteration, for monitors. `memory` is the state
/// after the update attempt, i.e. the H_{k+1} used by the next step.
struct StepInfo {
  const BatchPlan& plan;
  const Vector& w;
  const Vector& w_next;
  const BatchEval& batch_eval;
  const LbfgsMemory& memory;
  const CurvaturePair* offered;  // null when no pair was formed
  UpdateOutcome outcome;
};

using StepObserver = std::function<void(const StepInfo&)>;

/// SplitMix64 finalizer; decorrelates the streams drawn from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Vector initial_point(std::size_t dim, InitialPoint mode, std::uint64_t seed) {
  Vector w = Vector::Zero(static_cast<Eigen::Index>(dim));
  if (mode == InitialPoint::seeded_gaussian) {
    std::mt19937_64 rng(derive_seed(seed, 7));
    std::normal_distribution<double> normal;
    for (auto& v : w) v = normal(rng);
  }
  return w;
}

template <BatchObjective P>
Vector initial_point(const P& problem, InitialPoint mode, std::uint64_t seed) {
  return initial_point(problem.dim(), mode, seed);
}

/// Sampler used by `run` for this configuration and problem size.
inline std::unique_ptr<BatchSampler> make_sampler(const SolverConfig& config, std::size_t n) {
  if (config.method == Method::serial_sgd)
    return std::make_unique<SingleSampleSampler>(n, derive_seed(config.seed, 1));
  switch (config.strategy) {
    case Strategy::partition:
      return std::make_unique<PartitionSampler>(n, config.r, config.o, derive_seed(config.seed, 1));
    case Strategy::subsample:
      return std::make_unique<SubsampleSampler>(n, config.r, config.o, derive_seed(config.seed, 1));
    case Strategy::fault: {
      NodePartition partition = make_node_partition(n, config.nodes, config.p, derive_seed(config.seed, 2));
      partition.seed = derive_seed(config.seed, 3);
      return std::make_unique<FaultSampler>(std::move(partition), config.redistribute_every);
    }
  }
  throw ConfigError("unknown strategy");
}

namespace detail {

inline bool finite_eval(const BatchEval& e) {
  return std::isfinite(e.value) && e.value <= 1e300 && e.gradient.allFinite();
}

}  // namespace detail

/// Runs the configured method from `w0`. Numerical blow-up truncates the trace
/// and sets `diverged`; invalid configurations throw before iteration 0.
template <BatchObjective P>
Trace run(const P& problem, const SolverConfig& config, const Vector& w0,
          const StepObserver& observer = {}) {
  validate(config);
  if (static_cast<std::size_t>(w0.size()) != problem.dim())
    throw ConfigError("initial point dimension does not match the problem");

  const std::size_t n = problem.num_examples();
  auto sampler = make_sampler(config, n);
  LbfgsMemory memory(config.method == Method::gradient_descent || config.method == Method::serial_sgd
                         ? 0
                         : config.memory);
  const UpdateRule rule{config.cautious, config.epsilon};
  const std::size_t chunks = config.chunk_count;

  auto keep_going = [&](const BatchPlan& plan) {
    return config.epochs ? plan.epoch < *config.epochs : plan.k < *config.max_iters;
  };
  using Clock = std::chrono::steady_clock;

  Trace trace;
  Vector w = w0;
  BatchPlan plan = sampler->next();
  BatchEval batch_eval = problem.evaluate(w, plan.batch, chunks);
  std::optional<std::size_t> last_eval_epoch;

  auto full_eval = [&](IterationRecord& rec, const Vector& at) {
    const BatchEval full = evaluate_full(problem, at, chunks);
    rec.f_full = full.value;
    rec.grad_norm_full = full.gradient.norm();
    return detail::finite_eval(full);
  };

  while (true) {
    const auto started = Clock::now();
    if (!detail::finite_eval(batch_eval)) {
      trace.diverged = true;
      break;
    }
    IterationRecord rec;
    rec.k = plan.k;
    rec.epoch = plan.epoch;
    rec.f_batch = batch_eval.value;
    rec.grad_norm_batch = batch_eval.gradient.norm();
    rec.batch_size = plan.batch.size();

    if (!keep_going(plan)) {
      // Final iterate: no step, always fully evaluated.
      if (!full_eval(rec, w)) trace.diverged = true;
      trace.records.push_back(rec);
      break;
    }

    const bool eval_due = config.eval_every > 0 ? plan.k % config.eval_every == 0
                                                : last_eval_epoch != plan.epoch;
    if (eval_due) {
      last_eval_epoch = plan.epoch;
      if (!full_eval(rec, w)) {
        trace.diverged = true;
        trace.records.push_back(rec);
        break;
      }
    }

    const Vector direction =
        memory.capacity() == 0 ? Vector(-batch_eval.gradient) : two_loop_direction(memory, batch_eval.gradient);

    const bool robust_pair = config.method == Method::robust_lbfgs && memory.capacity() > 0 &&
                             !plan.boundary && !plan.overlap_next.empty();
    Vector overlap_grad_before;
    if (robust_pair) overlap_grad_before = problem.evaluate(w, plan.overlap_next, chunks).gradient;

    Vector w_next = w + config.alpha * direction;
    BatchPlan next_plan = sampler->next();
    BatchEval next_eval;
    if (w_next.allFinite()) {
      next_eval = problem.evaluate(w_next, next_plan.batch, chunks);
    } else {
      next_eval.value = std::numeric_limits<double>::quiet_NaN();
      next_eval.gradient = Vector::Constant(w.size(), std::numeric_limits<double>::quiet_NaN());
    }

    std::optional<CurvaturePair> offered;
    UpdateOutcome outcome = UpdateOutcome::skipped;
    if (w_next.allFinite()) {
      if (robust_pair) {
        const Vector overlap_grad_after = problem.evaluate(w_next, plan.overlap_next, chunks).gradient;
        offered = CurvaturePair{w_next - w, overlap_grad_after - overlap_grad_before, 0.0};
      } else if (config.method == Method::naive_lbfgs && memory.capacity() > 0 && detail::finite_eval(next_eval)) {
        offered = CurvaturePair{w_next - w, next_eval.gradient - batch_eval.gradient, 0.0};
      }
      if (offered) {
        outcome = try_update(memory, offered->s, offered->y, rule);
        offered->rho = 1.0 / offered->s.dot(offered->y);
      }
    }
    rec.pair_skipped = outcome == UpdateOutcome::skipped;
    rec.overlap_size = plan.overlap_next.size();

    if (observer) observer(StepInfo{plan, w, w_next, batch_eval, memory, offered ? &*offered : nullptr, outcome});

    if (config.record_timing)
      rec.elapsed_ns =
          std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - started).count();
    trace.records.push_back(rec);

    if (!w_next.allFinite()) {
      trace.diverged = true;
      break;
    }
    w = std::move(w_next);
    plan = std::move(next_plan);
    batch_eval = std::move(next_eval);
  }
  trace.final_point = w;
  return trace;
}

template <BatchObjective P>
Trace run(const P& problem, const SolverConfig& config, const StepObserver& observer = {}) {
  return run(problem, config, initial_point(problem, config.init, config.seed), observer);
}

}  // namespace mbl
