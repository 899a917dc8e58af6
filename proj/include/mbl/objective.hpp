#pragma once

// Finite-sum objectives F(w) = (1/n) sum_i f_i(w) evaluated on index subsets.
//
// Every problem exposes evaluate(w, indices, chunks), returning the batch
// average of the component values and gradients. Batch sums are split into
// `chunks` contiguous ranges of the index list; partial sums are combined in
// chunk order so results are bit-identical for a fixed chunk count.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <variant>
#include <vector>

#include "mbl/data.hpp"
#include "mbl/error.hpp"

namespace mbl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexSpan = std::span<const std::size_t>;

struct BatchEval {
  double value = 0.0;
  Vector gradient;
  std::size_t sample_count = 0;
};

template <class P>
concept BatchObjective = requires(const P& p, const Vector& w, IndexSpan idx, std::size_t chunks) {
  { p.dim() } -> std::convertible_to<std::size_t>;
  { p.num_examples() } -> std::convertible_to<std::size_t>;
  { p.evaluate(w, idx, chunks) } -> std::same_as<BatchEval>;
};

namespace detail {

inline void check_batch_args(const Vector& w, IndexSpan indices, std::size_t dim, std::size_t n) {
  if (indices.empty()) throw DomainError("evaluate: empty index set");
  if (static_cast<std::size_t>(w.size()) != dim) throw DomainError("evaluate: dimension mismatch");
  for (auto i : indices)
    if (i >= n) throw DomainError("evaluate: index out of range");
}

/// Sums per-example (value, gradient) contributions over `indices`.
template <class PerExample>
std::pair<double, Vector> chunked_sum(IndexSpan indices, std::size_t chunks, std::size_t dim,
                                      const PerExample& accumulate) {
  chunks = std::clamp<std::size_t>(chunks, 1, indices.size());
  std::vector<double> values(chunks, 0.0);
  std::vector<Vector> grads(chunks, Vector::Zero(static_cast<Eigen::Index>(dim)));
  auto work = [&](std::size_t c) {
    const std::size_t begin = indices.size() * c / chunks;
    const std::size_t end = indices.size() * (c + 1) / chunks;
    for (std::size_t j = begin; j < end; ++j) accumulate(indices[j], values[c], grads[c]);
  };
  if (chunks == 1) {
    work(0);
  } else {
    std::vector<std::jthread> workers;
    workers.reserve(chunks - 1);
    for (std::size_t c = 1; c < chunks; ++c) workers.emplace_back(work, c);
    work(0);
  }
  double value = 0.0;
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(dim));
  for (std::size_t c = 0; c < chunks; ++c) {
    value += values[c];
    grad += grads[c];
  }
  return {value, std::move(grad)};
}

inline double sparse_dot(std::span<const Feature> row, const Vector& w) {
  double acc = 0.0;
  for (const auto& f : row) acc += f.value * w[f.index];
  return acc;
}

inline void sparse_axpy(double scale, std::span<const Feature> row, Vector& out) {
  for (const auto& f : row) out[f.index] += scale * f.value;
}

}  // namespace detail

/// log(1 + exp(-z)) without overflow.
inline double log1p_exp_neg(double z) {
  return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

/// 1 / (1 + exp(z)).
inline double sigmoid_neg(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

/// L2-regularized logistic regression. The regularizer sigma/2 |w|^2 is part
/// of every batch evaluation, so every sub-sampled function is strongly convex.
class LogisticProblem {
 public:
  explicit LogisticProblem(std::shared_ptr<const Dataset> data, std::optional<double> sigma = {})
      : data_(std::move(data)) {
    if (!data_ || data_->n() == 0) throw ConfigError("logistic: dataset is empty");
    sigma_ = sigma.value_or(1.0 / static_cast<double>(data_->n()));
    if (!(sigma_ >= 0.0)) throw ConfigError("logistic: sigma must be non-negative");
  }

  std::size_t dim() const { return data_->dim(); }
  std::size_t num_examples() const { return data_->n(); }
  double sigma() const { return sigma_; }
  const Dataset& data() const { return *data_; }

  BatchEval evaluate(const Vector& w, IndexSpan indices, std::size_t chunks = 1) const {
    detail::check_batch_args(w, indices, dim(), num_examples());
    const Dataset& data = *data_;
    auto [sum, grad] = detail::chunked_sum(
        indices, chunks, dim(), [&](std::size_t i, double& value, Vector& g) {
          const auto row = data.row(i);
          const double y = data.label(i);
          const double margin = y * detail::sparse_dot(row, w);
          value += log1p_exp_neg(margin);
          detail::sparse_axpy(-y * sigmoid_neg(margin), row, g);
        });
    const double inv = 1.0 / static_cast<double>(indices.size());
    BatchEval out;
    out.value = sum * inv + 0.5 * sigma_ * w.squaredNorm();
    out.gradient = grad * inv + sigma_ * w;
    out.sample_count = indices.size();
    return out;
  }

  /// Upper bound on the Hessian spectrum of any batch function:
  /// max_i |x_i|^2 / 4 + sigma.
  double curvature_upper_bound() const {
    double max_row = 0.0;
    for (std::size_t i = 0; i < data_->n(); ++i) max_row = std::max(max_row, data_->row_squared_norm(i));
    return 0.25 * max_row + sigma_;
  }
  double curvature_lower_bound() const { return sigma_; }

 private:
  std::shared_ptr<const Dataset> data_;
  double sigma_ = 0.0;
};

struct QuadraticSpec {
  /// Spectrum of A; every entry must be strictly positive.
  std::vector<double> eigenvalues;
  /// Seed of the orthogonal rotation Q in A = Q diag(eigenvalues) Q^T.
  /// Zero keeps A diagonal.
  std::uint64_t rotation_seed = 1;
  /// Minimizer w*; empty means the zero vector.
  std::vector<double> minimizer;
  /// Number of components. Component i is
  ///   f_i(w) = 1/2 (w-w*)^T A (w-w*) - b_i^T (w-w*)
  /// with Gaussian shifts b_i (std dev `noise`) centred to sum to zero, so the
  /// average is exactly the pure quadratic and every batch Hessian equals A.
  std::size_t n = 1;
  double noise = 0.0;
  std::uint64_t noise_seed = 1;
};

class QuadraticProblem {
 public:
  explicit QuadraticProblem(const QuadraticSpec& spec) {
    const auto d = static_cast<Eigen::Index>(spec.eigenvalues.size());
    if (d == 0) throw ConfigError("quadratic: empty spectrum");
    for (double e : spec.eigenvalues)
      if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError("quadratic: eigenvalues must be positive");
    if (spec.n < 1) throw ConfigError("quadratic: n must be at least 1");
    if (!(spec.noise >= 0.0)) throw ConfigError("quadratic: noise must be non-negative");
    if (!spec.minimizer.empty() && static_cast<Eigen::Index>(spec.minimizer.size()) != d)
      throw ConfigError("quadratic: minimizer dimension mismatch");

    const Vector spectrum = Eigen::Map<const Vector>(spec.eigenvalues.data(), d);
    lambda_min_ = spectrum.minCoeff();
    lambda_max_ = spectrum.maxCoeff();
    if (spec.rotation_seed == 0) {
      hessian_ = spectrum.asDiagonal();
    } else {
      std::mt19937_64 rng(spec.rotation_seed);
      std::normal_distribution<double> normal;
      Matrix gauss(d, d);
      for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index i = 0; i < d; ++i) gauss(i, j) = normal(rng);
      const Matrix q = Eigen::HouseholderQR<Matrix>(gauss).householderQ();
      hessian_ = q * spectrum.asDiagonal() * q.transpose();
      hessian_ = 0.5 * (hessian_ + hessian_.transpose()).eval();
    }
    minimizer_ = spec.minimizer.empty() ? Vector::Zero(d)
                                        : Vector(Eigen::Map<const Vector>(spec.minimizer.data(), d));

    shifts_ = Matrix::Zero(d, static_cast<Eigen::Index>(spec.n));
    if (spec.noise > 0.0 && spec.n > 1) {
      std::mt19937_64 rng(spec.noise_seed);
      std::normal_distribution<double> normal(0.0, spec.noise);
      for (Eigen::Index i = 0; i < shifts_.cols(); ++i)
        for (Eigen::Index j = 0; j < d; ++j) shifts_(j, i) = normal(rng);
      const Vector mean = shifts_.rowwise().mean();
      shifts_.colwise() -= mean;
    }
  }

  std::size_t dim() const { return static_cast<std::size_t>(hessian_.rows()); }
  std::size_t num_examples() const { return static_cast<std::size_t>(shifts_.cols()); }
  const Matrix& hessian() const { return hessian_; }
  const Vector& minimizer() const { return minimizer_; }
  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }
  double optimal_value() const { return 0.0; }

  /// Shift vector b_i of component i.
  Vector shift(std::size_t i) const { return shifts_.col(static_cast<Eigen::Index>(i)); }

  BatchEval evaluate(const Vector& w, IndexSpan indices, std::size_t chunks = 1) const {
    detail::check_batch_args(w, indices, dim(), num_examples());
    const Vector delta = w - minimizer_;
    auto [unused, shift_sum] = detail::chunked_sum(
        indices, chunks, dim(), [&](std::size_t i, double&, Vector& acc) {
          acc += shifts_.col(static_cast<Eigen::Index>(i));
        });
    const Vector mean_shift = shift_sum / static_cast<double>(indices.size());
    const Vector a_delta = hessian_ * delta;
    BatchEval out;
    out.value = 0.5 * delta.dot(a_delta) - mean_shift.dot(delta);
    out.gradient = a_delta - mean_shift;
    out.sample_count = indices.size();
    return out;
  }

  /// Exact objective gap F(w) - F* of the averaged problem.
  double gap(const Vector& w) const {
    const Vector delta = w - minimizer_;
    return 0.5 * delta.dot(hessian_ * delta);
  }

 private:
  Matrix hessian_;
  Vector minimizer_;
  Matrix shifts_;  // d x n
  double lambda_min_ = 0.0;
  double lambda_max_ = 0.0;
};

/// Robust regression with the Cauchy loss f_i(w) = log(1 + (a_i^T w - b_i)^2)
/// on dataset rows a_i and labels b_i. Nonconvex, bounded below by zero.
class CauchyProblem {
 public:
  explicit CauchyProblem(std::shared_ptr<const Dataset> data) : data_(std::move(data)) {
    if (!data_ || data_->n() == 0) throw ConfigError("cauchy: dataset is empty");
  }

  std::size_t dim() const { return data_->dim(); }
  std::size_t num_examples() const { return data_->n(); }
  const Dataset& data() const { return *data_; }
  double lower_bound() const { return 0.0; }

  BatchEval evaluate(const Vector& w, IndexSpan indices, std::size_t chunks = 1) const {
    detail::check_batch_args(w, indices, dim(), num_examples());
    const Dataset& data = *data_;
    auto [sum, grad] = detail::chunked_sum(
        indices, chunks, dim(), [&](std::size_t i, double& value, Vector& g) {
          const auto row = data.row(i);
          const double r = detail::sparse_dot(row, w) - data.label(i);
          value += std::log1p(r * r);
          detail::sparse_axpy(2.0 * r / (1.0 + r * r), row, g);
        });
    const double inv = 1.0 / static_cast<double>(indices.size());
    return {sum * inv, grad * inv, indices.size()};
  }

  /// Gradient Lipschitz constant valid for F and every batch function:
  /// the loss curvature 2(1-r^2)/(1+r^2)^2 lies in [-1/4, 2].
  double lipschitz_bound() const {
    double max_row = 0.0;
    for (std::size_t i = 0; i < data_->n(); ++i) max_row = std::max(max_row, data_->row_squared_norm(i));
    return 2.0 * max_row;
  }

  /// Tighter constant for the full average F: 2 lambda_max((1/n) sum a a^T).
  /// Falls back to lipschitz_bound() above `dense_limit` features.
  double full_lipschitz_bound(std::size_t dense_limit = 2048) const {
    if (dim() > dense_limit) return lipschitz_bound();
    const auto d = static_cast<Eigen::Index>(dim());
    Matrix gram = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < data_->n(); ++i) {
      const auto row = data_->row(i);
      for (const auto& a : row)
        for (const auto& b : row) gram(a.index, b.index) += a.value * b.value;
    }
    gram /= static_cast<double>(data_->n());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(gram, Eigen::EigenvaluesOnly);
    return 2.0 * solver.eigenvalues().maxCoeff();
  }

 private:
  std::shared_ptr<const Dataset> data_;
};

/// Runtime-selected problem for the command-line front end.
class AnyProblem {
 public:
  using Variant = std::variant<LogisticProblem, QuadraticProblem, CauchyProblem>;

  template <class P>
    requires std::constructible_from<Variant, P>
  AnyProblem(P problem) : problem_(std::move(problem)) {}

  std::size_t dim() const {
    return std::visit([](const auto& p) { return p.dim(); }, problem_);
  }
  std::size_t num_examples() const {
    return std::visit([](const auto& p) { return p.num_examples(); }, problem_);
  }
  BatchEval evaluate(const Vector& w, IndexSpan indices, std::size_t chunks = 1) const {
    return std::visit([&](const auto& p) { return p.evaluate(w, indices, chunks); }, problem_);
  }
  const Variant& variant() const { return problem_; }

 private:
  Variant problem_;
};

inline std::vector<std::size_t> full_index_set(std::size_t n) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

template <BatchObjective P>
BatchEval evaluate_full(const P& problem, const Vector& w, std::size_t chunks = 1) {
  const auto all = full_index_set(problem.num_examples());
  return problem.evaluate(w, all, chunks);
}

template <BatchObjective P>
double full_gradient_norm(const P& problem, const Vector& w, std::size_t chunks = 1) {
  return evaluate_full(problem, w, chunks).gradient.norm();
}

}  // namespace mbl
