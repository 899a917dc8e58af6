#pragma once

// Limited-memory BFGS curvature storage, the two-loop recursion, and dense
// reconstructions of the implied inverse/direct Hessian approximations for
// monitoring at small dimension.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <deque>
#include <utility>
#include <vector>

#include "mbl/error.hpp"

namespace mbl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct CurvaturePair {
  Vector s;  // w_{k+1} - w_k
  Vector y;  // gradient difference
  double rho = 0.0;  // 1 / (y^T s)
};

/// ||y||^2 / (y^T s), the scaling that bounds the initial matrix B^(0).
inline double curvature_ratio(const CurvaturePair& pair) {
  return pair.y.squaredNorm() / pair.y.dot(pair.s);
}

/// FIFO store of at most `capacity` pairs, newest last. H0 = h0_scale * I,
/// with h0_scale = s^T y / y^T y of the newest pair (1 while empty).
class LbfgsMemory {
 public:
  explicit LbfgsMemory(std::size_t capacity = 10) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const std::deque<CurvaturePair>& pairs() const { return pairs_; }
  double h0_scale() const { return h0_scale_; }

  void clear() {
    pairs_.clear();
    h0_scale_ = 1.0;
  }

  /// Stores a pair that already passed the curvature test.
  void push(CurvaturePair pair) {
    if (capacity_ == 0) return;
    if (pairs_.size() == capacity_) pairs_.pop_front();
    h0_scale_ = pair.s.dot(pair.y) / pair.y.squaredNorm();
    pairs_.push_back(std::move(pair));
  }

 private:
  std::size_t capacity_;
  std::deque<CurvaturePair> pairs_;
  double h0_scale_ = 1.0;
};

struct UpdateRule {
  /// Cautious mode stores a pair only when y^T s >= epsilon |s|^2.
  bool cautious = true;
  double epsilon = 1e-6;
};

enum class UpdateOutcome { accepted, skipped };

/// Offers (s, y) to the memory. Skipped pairs leave the memory, including
/// its initial scaling, untouched.
inline UpdateOutcome try_update(LbfgsMemory& memory, const Vector& s, const Vector& y,
                                const UpdateRule& rule) {
  if (rule.cautious && !(rule.epsilon > 0.0))
    throw DomainError("try_update: cautious epsilon must be positive");
  if (s.size() != y.size()) throw DomainError("try_update: s and y differ in length");
  if (!memory.empty() && s.size() != memory.pairs().back().s.size())
    throw DomainError("try_update: dimension mismatch with stored pairs");
  if (memory.capacity() == 0) return UpdateOutcome::skipped;

  const double ss = s.squaredNorm();
  if (ss == 0.0 || !s.allFinite() || !y.allFinite()) return UpdateOutcome::skipped;
  const double sy = s.dot(y);
  const double yy = y.squaredNorm();
  if (!std::isfinite(sy) || !std::isfinite(yy)) return UpdateOutcome::skipped;

  bool admit = false;
  if (rule.cautious) {
    admit = sy >= rule.epsilon * ss && sy > 0.0;
  } else {
    admit = sy > 0.0 && sy > 1e-300 * std::sqrt(ss) * std::sqrt(yy);
  }
  const double rho = 1.0 / sy;
  if (!admit || !std::isfinite(rho) || !std::isfinite(sy / yy)) return UpdateOutcome::skipped;

  memory.push({s, y, rho});
  return UpdateOutcome::accepted;
}

/// p = -H g via the two-loop recursion; O(m d), no d x d matrix is formed.
inline Vector two_loop_direction(const LbfgsMemory& memory, const Vector& g) {
  const auto& pairs = memory.pairs();
  if (!pairs.empty() && pairs.front().s.size() != g.size())
    throw DomainError("two_loop_direction: dimension mismatch");

  Vector q = g;
  std::vector<double> alpha(pairs.size());
  for (std::size_t i = pairs.size(); i-- > 0;) {
    alpha[i] = pairs[i].rho * pairs[i].s.dot(q);
    q.noalias() -= alpha[i] * pairs[i].y;
  }
  q *= memory.h0_scale();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double beta = pairs[i].rho * pairs[i].y.dot(q);
    q.noalias() += (alpha[i] - beta) * pairs[i].s;
  }
  return -q;
}

inline constexpr std::size_t kDenseMonitorLimit = 2048;

/// Explicit H from H0 = h0_scale I by H+ = V^T H V + rho s s^T,
/// V = I - rho y s^T, oldest pair first.
inline Matrix dense_inverse_hessian(const LbfgsMemory& memory, std::size_t d) {
  if (d > kDenseMonitorLimit) throw DomainError("dense_inverse_hessian: dimension over monitor limit");
  const auto n = static_cast<Eigen::Index>(d);
  Matrix h = memory.h0_scale() * Matrix::Identity(n, n);
  for (const auto& pair : memory.pairs()) {
    if (pair.s.size() != n) throw DomainError("dense_inverse_hessian: dimension mismatch");
    // V^T H V expanded: H - rho (s (Hy)^T + (Hy) s^T) + rho^2 (y^T H y) s s^T.
    const Vector hy = h * pair.y;
    const double yhy = pair.y.dot(hy);
    h -= pair.rho * (pair.s * hy.transpose() + hy * pair.s.transpose());
    h += (pair.rho * pair.rho * yhy + pair.rho) * (pair.s * pair.s.transpose());
  }
  return h;
}

/// Explicit B from B0 = (1 / h0_scale) I by the direct BFGS recursion
/// B+ = B - (B s s^T B) / (s^T B s) + (y y^T) / (y^T s).
inline Matrix dense_direct_hessian(const LbfgsMemory& memory, std::size_t d) {
  if (d > kDenseMonitorLimit) throw DomainError("dense_direct_hessian: dimension over monitor limit");
  const auto n = static_cast<Eigen::Index>(d);
  Matrix b = (1.0 / memory.h0_scale()) * Matrix::Identity(n, n);
  for (const auto& pair : memory.pairs()) {
    if (pair.s.size() != n) throw DomainError("dense_direct_hessian: dimension mismatch");
    const Vector bs = b * pair.s;
    b -= (bs * bs.transpose()) / pair.s.dot(bs);
    b += pair.rho * (pair.y * pair.y.transpose());
  }
  return b;
}

}  // namespace mbl
