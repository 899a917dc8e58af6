#pragma once

// Batch plans for the multi-batch regimes: an overlapping partition of a
// shuffled dataset, independent subsampling, and batches formed from the
// data blocks of simulated nodes that survive each round.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "mbl/error.hpp"

namespace mbl {

using IndexList = std::vector<std::size_t>;

/// Index sets for one iteration. All lists are sorted ascending.
struct BatchPlan {
  std::size_t k = 0;
  /// Epoch the iteration belongs to (a pass of the shuffled data for the
  /// partition strategy, otherwise floor(samples drawn before k / n)).
  std::size_t epoch = 0;
  IndexList batch;         // S_k
  IndexList overlap_prev;  // O_{k-1}, shared with the previous batch
  IndexList overlap_next;  // O_k, used for the curvature pair of this step
  /// True when overlap_next does not arise from the sampling structure (epoch
  /// reshuffle or node redistribution); the solver skips that pair.
  bool boundary = false;
  /// Responsive node ids (fault strategy only).
  std::vector<std::size_t> nodes;
};

class BatchSampler {
 public:
  virtual ~BatchSampler() = default;
  virtual BatchPlan next() = 0;
  virtual std::size_t num_examples() const = 0;
};

struct BatchSizes {
  std::size_t batch = 0;
  std::size_t overlap = 0;
};

/// |S| = round(r n), |O| = max(1, round(o |S|)); requires |S| >= 2 and |O| < |S|.
inline BatchSizes batch_sizes(std::size_t n, double r, double o) {
  if (!(r > 0.0 && r <= 1.0)) throw ConfigError("batch fraction r must lie in (0, 1]");
  if (!(o >= 0.0 && o < 1.0)) throw ConfigError("overlap fraction o must lie in [0, 1)");
  BatchSizes sizes;
  sizes.batch = static_cast<std::size_t>(std::llround(r * static_cast<double>(n)));
  sizes.overlap = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(o * static_cast<double>(sizes.batch))));
  if (sizes.batch < 2) throw ConfigError("batch size round(r n) must be at least 2");
  if (sizes.batch > n) throw ConfigError("batch size exceeds the dataset");
  if (sizes.overlap >= sizes.batch) throw ConfigError("overlap size must be smaller than the batch size");
  return sizes;
}

namespace detail {

inline IndexList sorted_copy(std::vector<std::size_t>::const_iterator first,
                             std::vector<std::size_t>::const_iterator last) {
  IndexList out(first, last);
  std::sort(out.begin(), out.end());
  return out;
}

inline IndexList intersect_sorted(const IndexList& a, const IndexList& b) {
  IndexList out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace detail

/// Shuffles the data once per epoch and lays batches out in order:
/// plan k covers positions [k (|S|-|O|), k (|S|-|O|) + |S|), clipped at n,
/// and its trailing |O| positions are the head of plan k+1. The last plan of
/// an epoch reports the exact intersection with the next epoch's first batch
/// as a boundary overlap.
class PartitionSampler final : public BatchSampler {
 public:
  PartitionSampler(std::size_t n, double r, double o, std::uint64_t seed)
      : n_(n), sizes_(batch_sizes(n, r, o)), rng_(seed) {
    stride_ = sizes_.batch - sizes_.overlap;
    plans_per_epoch_ = (n_ - sizes_.overlap + stride_ - 1) / stride_;
    perm_ = shuffled();
  }

  std::size_t num_examples() const override { return n_; }
  std::size_t plans_per_epoch() const { return plans_per_epoch_; }
  BatchSizes sizes() const { return sizes_; }

  BatchPlan next() override {
    BatchPlan plan;
    plan.k = k_++;
    plan.epoch = epoch_;
    const std::size_t start = position_ * stride_;
    const std::size_t end = std::min(start + sizes_.batch, n_);
    plan.batch = detail::sorted_copy(perm_.begin() + static_cast<std::ptrdiff_t>(start),
                                     perm_.begin() + static_cast<std::ptrdiff_t>(end));
    if (position_ == 0) {
      plan.overlap_prev = std::move(carried_overlap_);
      carried_overlap_.clear();
    } else {
      plan.overlap_prev = detail::sorted_copy(
          perm_.begin() + static_cast<std::ptrdiff_t>(start),
          perm_.begin() + static_cast<std::ptrdiff_t>(start + sizes_.overlap));
    }

    if (position_ + 1 < plans_per_epoch_) {
      plan.overlap_next = detail::sorted_copy(
          perm_.begin() + static_cast<std::ptrdiff_t>(end - sizes_.overlap),
          perm_.begin() + static_cast<std::ptrdiff_t>(end));
      ++position_;
    } else {
      perm_ = shuffled();
      const IndexList next_batch = detail::sorted_copy(
          perm_.begin(), perm_.begin() + static_cast<std::ptrdiff_t>(std::min(sizes_.batch, n_)));
      plan.overlap_next = detail::intersect_sorted(plan.batch, next_batch);
      plan.boundary = true;
      carried_overlap_ = plan.overlap_next;
      position_ = 0;
      ++epoch_;
    }
    return plan;
  }

 private:
  IndexList shuffled() {
    IndexList perm(n_);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng_);
    return perm;
  }

  std::size_t n_;
  BatchSizes sizes_;
  std::mt19937_64 rng_;
  std::size_t stride_ = 0;
  std::size_t plans_per_epoch_ = 0;
  IndexList perm_;
  IndexList carried_overlap_;
  std::size_t position_ = 0;
  std::size_t epoch_ = 0;
  std::size_t k_ = 0;
};

/// S_k: |S| indices uniformly without replacement; O_k: |O| indices uniformly
/// from S_k. O_k generally is not contained in S_{k+1}, so the robust method
/// pays one extra overlap gradient per iteration.
class SubsampleSampler final : public BatchSampler {
 public:
  SubsampleSampler(std::size_t n, double r, double o, std::uint64_t seed)
      : n_(n), sizes_(batch_sizes(n, r, o)), rng_(seed), pool_(n) {
    std::iota(pool_.begin(), pool_.end(), std::size_t{0});
  }

  std::size_t num_examples() const override { return n_; }
  BatchSizes sizes() const { return sizes_; }

  BatchPlan next() override {
    BatchPlan plan;
    plan.k = k_++;
    plan.epoch = drawn_ / n_;
    partial_shuffle(pool_, sizes_.batch);
    plan.batch = detail::sorted_copy(pool_.begin(), pool_.begin() + static_cast<std::ptrdiff_t>(sizes_.batch));
    IndexList scratch = plan.batch;
    partial_shuffle(scratch, sizes_.overlap);
    plan.overlap_next =
        detail::sorted_copy(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(sizes_.overlap));
    drawn_ += sizes_.batch;
    return plan;
  }

 private:
  void partial_shuffle(IndexList& items, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
      std::swap(items[i], items[pick(rng_)]);
    }
  }

  std::size_t n_;
  BatchSizes sizes_;
  std::mt19937_64 rng_;
  IndexList pool_;
  std::size_t drawn_ = 0;
  std::size_t k_ = 0;
};

/// One uniformly drawn example per iteration, with replacement.
class SingleSampleSampler final : public BatchSampler {
 public:
  SingleSampleSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {
    if (n == 0) throw ConfigError("single-sample sampler needs a non-empty dataset");
  }

  std::size_t num_examples() const override { return n_; }

  BatchPlan next() override {
    BatchPlan plan;
    plan.k = k_;
    plan.epoch = k_ / n_;
    ++k_;
    std::uniform_int_distribution<std::size_t> pick(0, n_ - 1);
    plan.batch = {pick(rng_)};
    return plan;
  }

 private:
  std::size_t n_;
  std::mt19937_64 rng_;
  std::size_t k_ = 0;
};

/// Data blocks B_1..B_K held by simulated nodes; each node independently
/// fails to respond with probability p per round.
struct NodePartition {
  std::vector<IndexList> blocks;
  double p = 0.0;
  std::uint64_t seed = 0;

  std::size_t node_count() const { return blocks.size(); }
  std::size_t num_examples() const {
    std::size_t total = 0;
    for (const auto& b : blocks) total += b.size();
    return total;
  }
};

/// Throws ConfigError unless the blocks are disjoint, cover {0..n-1} and
/// 0 <= p < 1.
inline void validate(const NodePartition& partition) {
  if (partition.blocks.empty()) throw ConfigError("node partition needs at least one node");
  if (!(partition.p >= 0.0 && partition.p < 1.0))
    throw ConfigError("failure probability p must lie in [0, 1)");
  const std::size_t n = partition.num_examples();
  std::vector<char> seen(n, 0);
  for (const auto& block : partition.blocks) {
    for (auto i : block) {
      if (i >= n || seen[i]) throw ConfigError("node blocks must be disjoint and cover the dataset");
      seen[i] = 1;
    }
  }
}

/// Reshuffles all indices into K contiguous blocks of sizes floor(n/K) or
/// ceil(n/K), the larger blocks first.
inline NodePartition shuffle_redistribute(const NodePartition& partition, std::uint64_t seed) {
  const std::size_t n = partition.num_examples();
  const std::size_t k = partition.node_count();
  if (k == 0) throw ConfigError("node partition needs at least one node");
  IndexList perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  NodePartition out;
  out.p = partition.p;
  out.seed = seed;
  out.blocks.resize(k);
  std::size_t offset = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t size = n / k + (j < n % k ? 1 : 0);
    out.blocks[j] = detail::sorted_copy(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                                        perm.begin() + static_cast<std::ptrdiff_t>(offset + size));
    offset += size;
  }
  return out;
}

inline NodePartition make_node_partition(std::size_t n, std::size_t nodes, double p, std::uint64_t seed) {
  if (nodes == 0 || nodes > n) throw ConfigError("node count must lie in [1, n]");
  NodePartition base;
  base.p = p;
  base.blocks.assign(nodes, IndexList{});
  base.blocks[0].resize(n);
  std::iota(base.blocks[0].begin(), base.blocks[0].end(), std::size_t{0});
  NodePartition out = shuffle_redistribute(base, seed);
  validate(out);
  return out;
}

/// S_k is the union of the blocks of responsive nodes J_k and O_k the union
/// over J_k and J_{k+1}. A round with no responsive node is redrawn. With
/// `redistribute_every` = E > 0 the data are reshuffled across nodes before
/// every iteration that is a multiple of E; the overlap spanning such a
/// reshuffle is the plain intersection and is flagged as a boundary.
class FaultSampler final : public BatchSampler {
 public:
  explicit FaultSampler(NodePartition partition, std::size_t redistribute_every = 0)
      : partition_(std::make_shared<const NodePartition>(std::move(partition))),
        redistribute_every_(redistribute_every),
        rng_(partition_->seed) {
    validate(*partition_);
    n_ = partition_->num_examples();
  }

  std::size_t num_examples() const override { return n_; }
  const NodePartition& partition() const { return *partition_; }

  BatchPlan next() override {
    if (!current_) current_ = draw_round(partition_);
    std::shared_ptr<const NodePartition> next_partition = current_->partition;
    if (redistribute_every_ > 0 && (k_ + 1) % redistribute_every_ == 0) {
      partition_ = std::make_shared<const NodePartition>(shuffle_redistribute(*partition_, rng_()));
      next_partition = partition_;
    }
    Round upcoming = draw_round(next_partition);

    BatchPlan plan;
    plan.k = k_++;
    plan.epoch = drawn_ / n_;
    plan.batch = current_->batch;
    plan.nodes = current_->nodes;
    plan.overlap_prev = std::move(carried_overlap_);
    if (upcoming.partition == current_->partition) {
      IndexList shared;
      std::set_intersection(current_->nodes.begin(), current_->nodes.end(), upcoming.nodes.begin(),
                            upcoming.nodes.end(), std::back_inserter(shared));
      for (auto node : shared) {
        const auto& block = current_->partition->blocks[node];
        plan.overlap_next.insert(plan.overlap_next.end(), block.begin(), block.end());
      }
      std::sort(plan.overlap_next.begin(), plan.overlap_next.end());
    } else {
      plan.overlap_next = detail::intersect_sorted(plan.batch, upcoming.batch);
      plan.boundary = true;
    }
    carried_overlap_ = plan.overlap_next;
    drawn_ += plan.batch.size();
    current_ = std::move(upcoming);
    return plan;
  }

 private:
  struct Round {
    std::shared_ptr<const NodePartition> partition;
    std::vector<std::size_t> nodes;
    IndexList batch;
  };

  Round draw_round(std::shared_ptr<const NodePartition> partition) {
    std::bernoulli_distribution responds(1.0 - partition->p);
    Round round;
    while (round.nodes.empty()) {
      for (std::size_t j = 0; j < partition->node_count(); ++j)
        if (responds(rng_)) round.nodes.push_back(j);
    }
    for (auto node : round.nodes) {
      const auto& block = partition->blocks[node];
      round.batch.insert(round.batch.end(), block.begin(), block.end());
    }
    std::sort(round.batch.begin(), round.batch.end());
    round.partition = std::move(partition);
    return round;
  }

  std::shared_ptr<const NodePartition> partition_;
  std::size_t redistribute_every_;
  std::mt19937_64 rng_;
  std::size_t n_ = 0;
  std::optional<Round> current_;
  IndexList carried_overlap_;
  std::size_t drawn_ = 0;
  std::size_t k_ = 0;
};

enum class Strategy { partition, subsample, fault };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::partition: return "partition";
    case Strategy::subsample: return "subsample";
    case Strategy::fault: return "fault";
  }
  return "?";
}

}  // namespace mbl
