#include <gtest/gtest.h>

#include <algorithm>
#include <iterator>
#include <numeric>
#include <random>

#include "mbl/sampling.hpp"

using namespace mbl;

namespace {

IndexList intersect(const IndexList& a, const IndexList& b) {
  IndexList out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

bool sorted_unique(const IndexList& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

bool subset(const IndexList& a, const IndexList& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }

/// Checks O_k = S_k cap S_{k+1} and the O_prev hand-off over `iterations` plans.
void expect_overlap_identity(BatchSampler& sampler, std::size_t iterations) {
  BatchPlan prev = sampler.next();
  for (std::size_t k = 0; k < iterations; ++k) {
    BatchPlan next = sampler.next();
    ASSERT_EQ(prev.overlap_next, intersect(prev.batch, next.batch)) << "k = " << prev.k;
    ASSERT_EQ(next.overlap_prev, prev.overlap_next);
    ASSERT_TRUE(sorted_unique(prev.batch));
    ASSERT_EQ(next.k, prev.k + 1);
    prev = std::move(next);
  }
}

}  // namespace

TEST(BatchSizes, RoundingAndGuards) {
  const auto s = batch_sizes(100, 0.1, 0.2);
  EXPECT_EQ(s.batch, 10u);
  EXPECT_EQ(s.overlap, 2u);
  EXPECT_EQ(batch_sizes(1000, 0.01, 0.0).overlap, 1u);
  EXPECT_THROW(batch_sizes(100, 0.0, 0.2), ConfigError);
  EXPECT_THROW(batch_sizes(100, 0.1, 1.0), ConfigError);
  EXPECT_THROW(batch_sizes(100, 0.01, 0.2), ConfigError);  // |S| = 1
  EXPECT_THROW(batch_sizes(10, 0.2, 0.9), ConfigError);    // |O| = |S|
}

TEST(Partition, LayoutMatchesShuffledPositions) {
  PartitionSampler sampler(100, 0.1, 0.2, 42);
  const auto p0 = sampler.next();
  const auto p1 = sampler.next();
  EXPECT_EQ(p0.batch.size(), 10u);
  EXPECT_EQ(p0.overlap_next.size(), 2u);
  EXPECT_EQ(p1.batch.size(), 10u);
  // Plan 1 starts at position 8: it shares exactly O_0 with plan 0.
  EXPECT_EQ(intersect(p0.batch, p1.batch), p0.overlap_next);
  EXPECT_EQ(p1.overlap_prev, p0.overlap_next);
  EXPECT_TRUE(p0.overlap_prev.empty());
  EXPECT_FALSE(p0.boundary);
}

TEST(Partition, ThirteenPlansPerEpochForN100) {
  PartitionSampler sampler(100, 0.1, 0.2, 1);
  EXPECT_EQ(sampler.plans_per_epoch(), 13u);
  for (std::size_t k = 0; k < 13; ++k) {
    const auto plan = sampler.next();
    EXPECT_EQ(plan.epoch, 0u);
    EXPECT_EQ(plan.boundary, k == 12);
  }
  EXPECT_EQ(sampler.next().epoch, 1u);
}

TEST(Partition, IterationsPerEpochNearCommunicationCount) {
  PartitionSampler sampler(100000, 0.01, 0.2, 1);
  EXPECT_NEAR(static_cast<double>(sampler.plans_per_epoch()), 1.0 / (0.01 * 0.8), 1.0);
}

TEST(Partition, EveryEpochCoversEveryIndexAtMostTwice) {
  PartitionSampler sampler(1000, 0.05, 0.3, 9);
  for (int e = 0; e < 10; ++e) {
    std::vector<int> hits(1000, 0);
    for (std::size_t k = 0; k < sampler.plans_per_epoch(); ++k)
      for (auto i : sampler.next().batch) ++hits[i];
    EXPECT_EQ(*std::min_element(hits.begin(), hits.end()), 1);
    EXPECT_LE(*std::max_element(hits.begin(), hits.end()), 2);
  }
}

TEST(Partition, OverlapIdentityAcrossEpochs) {
  PartitionSampler sampler(1000, 0.1, 0.2, 3);
  expect_overlap_identity(sampler, 1000);
}

TEST(Partition, DeterministicStream) {
  PartitionSampler a(500, 0.1, 0.2, 77), b(500, 0.1, 0.2, 77);
  for (int k = 0; k < 200; ++k) {
    const auto x = a.next(), y = b.next();
    ASSERT_EQ(x.batch, y.batch);
    ASSERT_EQ(x.overlap_next, y.overlap_next);
  }
}

TEST(Subsample, SizesAndContainment) {
  SubsampleSampler sampler(1000, 0.05, 0.2, 5);
  for (int k = 0; k < 500; ++k) {
    const auto plan = sampler.next();
    ASSERT_EQ(plan.batch.size(), 50u);
    ASSERT_EQ(plan.overlap_next.size(), 10u);
    ASSERT_TRUE(sorted_unique(plan.batch));
    ASSERT_TRUE(sorted_unique(plan.overlap_next));
    ASSERT_TRUE(subset(plan.overlap_next, plan.batch));
    ASSERT_FALSE(plan.boundary);
  }
}

TEST(Subsample, FullBatchWhenSizeEqualsN) {
  SubsampleSampler sampler(10, 1.0, 0.2, 5);
  IndexList all(10);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (int k = 0; k < 5; ++k) EXPECT_EQ(sampler.next().batch, all);
}

TEST(Subsample, InclusionFrequencyIsUniform) {
  SubsampleSampler sampler(100, 0.1, 0.2, 13);
  std::vector<double> hits(100, 0.0);
  const int draws = 10000;
  for (int k = 0; k < draws; ++k)
    for (auto i : sampler.next().batch) hits[i] += 1.0;
  for (double h : hits) EXPECT_NEAR(h / draws, 0.1, 0.01);
}

TEST(Subsample, EpochCountsDrawnSamples) {
  SubsampleSampler sampler(100, 0.1, 0.2, 1);
  for (int k = 0; k < 25; ++k) EXPECT_EQ(sampler.next().epoch, static_cast<std::size_t>(k / 10));
}

TEST(NodePartitionTest, RedistributeKeepsEqualDisjointBlocks) {
  const auto base = make_node_partition(1000, 16, 0.3, 4);
  const auto shuffled = shuffle_redistribute(base, 99);
  for (const auto* part : {&base, &shuffled}) {
    EXPECT_NO_THROW(validate(*part));
    ASSERT_EQ(part->blocks.size(), 16u);
    for (const auto& block : part->blocks) {
      EXPECT_TRUE(block.size() == 62u || block.size() == 63u);
      EXPECT_TRUE(sorted_unique(block));
    }
  }
  EXPECT_NE(base.blocks, shuffled.blocks);
}

TEST(NodePartitionTest, SingleNodeHoldsEverything) {
  const auto part = shuffle_redistribute(make_node_partition(50, 1, 0.0, 1), 3);
  ASSERT_EQ(part.blocks.size(), 1u);
  EXPECT_EQ(part.blocks[0].size(), 50u);
}

TEST(NodePartitionTest, ValidationRejectsBadPartitions) {
  NodePartition bad{{{0, 1}, {1, 2}}, 0.1, 1};
  EXPECT_THROW(validate(bad), ConfigError);
  NodePartition gap{{{0}, {2}}, 0.1, 1};
  EXPECT_THROW(validate(gap), ConfigError);
  NodePartition prob{{{0}, {1}}, 1.0, 1};
  EXPECT_THROW(validate(prob), ConfigError);
  EXPECT_THROW(make_node_partition(10, 0, 0.1, 1), ConfigError);
}

TEST(Fault, NoFailuresMeansFullData) {
  FaultSampler sampler(make_node_partition(200, 8, 0.0, 2));
  for (int k = 0; k < 20; ++k) {
    const auto plan = sampler.next();
    EXPECT_EQ(plan.nodes.size(), 8u);
    EXPECT_EQ(plan.batch.size(), 200u);
    EXPECT_EQ(plan.overlap_next.size(), 200u);
  }
}

TEST(Fault, OverlapIdentity) {
  FaultSampler sampler(make_node_partition(1000, 16, 0.3, 5));
  expect_overlap_identity(sampler, 1000);
}

TEST(Fault, OverlapIdentityWithRedistribution) {
  FaultSampler sampler(make_node_partition(1000, 16, 0.3, 5), 7);
  BatchPlan prev = sampler.next();
  std::size_t boundaries = 0;
  for (int k = 0; k < 300; ++k) {
    BatchPlan next = sampler.next();
    ASSERT_EQ(prev.overlap_next, intersect(prev.batch, next.batch));
    boundaries += prev.boundary;
    if (prev.boundary) EXPECT_EQ((prev.k + 1) % 7, 0u);
    prev = std::move(next);
  }
  EXPECT_EQ(boundaries, 300u / 7u);
}

TEST(Fault, ResponsiveNodeCountIsBinomial) {
  FaultSampler sampler(make_node_partition(1600, 16, 0.3, 11));
  double total = 0.0;
  for (int k = 0; k < 10000; ++k) total += static_cast<double>(sampler.next().nodes.size());
  EXPECT_NEAR(total / 10000.0, 16 * 0.7, 0.2);
}

TEST(Fault, EmptyOverlapFrequencyMatchesEnumeration) {
  // Exact: J_k is uniform over the non-empty subsets of two nodes when
  // p = 0.5; enumerate the 4 x 4 joint outcomes and drop empty draws.
  double empty = 0.0, total = 0.0;
  for (unsigned a = 0; a < 4; ++a)
    for (unsigned b = 0; b < 4; ++b) {
      if (a == 0 || b == 0) continue;
      total += 1.0;
      if ((a & b) == 0) empty += 1.0;
    }
  const double exact = empty / total;

  FaultSampler sampler(make_node_partition(10, 2, 0.5, 21));
  int hits = 0;
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) hits += sampler.next().overlap_next.empty();
  const double sd = std::sqrt(exact * (1 - exact) / draws);
  EXPECT_NEAR(static_cast<double>(hits) / draws, exact, 4 * sd);
}

TEST(SingleSample, OneIndexPerStepWithReplacement) {
  SingleSampleSampler sampler(50, 3);
  std::vector<int> hits(50, 0);
  for (int k = 0; k < 5000; ++k) {
    const auto plan = sampler.next();
    ASSERT_EQ(plan.batch.size(), 1u);
    ++hits[plan.batch[0]];
    EXPECT_EQ(plan.epoch, static_cast<std::size_t>(k / 50));
  }
  for (int h : hits) EXPECT_NEAR(h, 100, 45);
}
