// Copyright 2026 The qrc-mol Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qrc/subsample.hpp"

#include <gtest/gtest.h>

#include <set>

namespace {

using namespace qrc;

Matrix blobs(std::size_t per_blob, Rng& rng) {
  Matrix x(static_cast<Eigen::Index>(2 * per_blob), 2);
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const double cx = i < per_blob ? -50.0 : 50.0;
    x(static_cast<Eigen::Index>(i), 0) = cx + 0.3 * rng.normal();
    x(static_cast<Eigen::Index>(i), 1) = 0.3 * rng.normal();
  }
  return x;
}

TEST(KMeans, SeparatedBlobsAreRecovered) {
  Rng rng(1);
  const Matrix x = blobs(30, rng);
  const auto r = kmeans(x, 2, 7);
  for (std::size_t i = 1; i < 30; ++i) EXPECT_EQ(r.assignments[i], r.assignments[0]);
  for (std::size_t i = 31; i < 60; ++i) EXPECT_EQ(r.assignments[i], r.assignments[30]);
  EXPECT_NE(r.assignments[0], r.assignments[30]);
  // Brute-force nearest-centroid check.
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    (r.model.centroids.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    EXPECT_EQ(best, r.assignments[static_cast<std::size_t>(i)]);
  }
}

TEST(KMeans, SingleClusterIsColumnMean) {
  Rng rng(2);
  Matrix x(40, 3);
  for (Eigen::Index i = 0; i < 40; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
  const auto r = kmeans(x, 1, 3);
  EXPECT_LT((r.model.centroids.row(0) - x.colwise().mean()).norm(), 1e-12);
}

TEST(KMeans, DeterministicAndMonotone) {
  Rng rng(3);
  Matrix x(200, 4);
  for (Eigen::Index i = 0; i < 200; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) x(i, j) = rng.normal();
  const auto a = kmeans(x, 5, 11);
  const auto b = kmeans(x, 5, 11);
  EXPECT_EQ(a.assignments, b.assignments);
  for (std::size_t t = 1; t < a.model.inertia_history.size(); ++t)
    EXPECT_LE(a.model.inertia_history[t], a.model.inertia_history[t - 1] + 1e-9);
}

TEST(KMeans, RejectsTooManyClusters) {
  Matrix x(3, 1);
  x << 1, 2, 3;
  EXPECT_THROW(kmeans(x, 4, 0), Error);
}

TEST(Subsample, ProportionalAllocation) {
  std::vector<int> a(100, 0);
  for (std::size_t i = 60; i < 100; ++i) a[i] = 1;
  const auto plan = make_subsamples(a, 1, 10, 5);
  ASSERT_EQ(plan.subsets.size(), 1u);
  std::size_t c0 = 0;
  for (Index i : plan.subsets[0]) c0 += a[i] == 0;
  EXPECT_EQ(c0, 6u);
  EXPECT_EQ(plan.subsets[0].size() - c0, 4u);
}

TEST(Subsample, DisjointAndExactAllocation) {
  Rng rng(4);
  std::vector<int> a(1000);
  for (auto& v : a) v = static_cast<int>(rng.below(5));
  const auto plan = make_subsamples(a, 5, 100, 9);
  std::set<Index> seen;
  std::vector<double> freq(5, 0.0);
  for (int v : a) freq[static_cast<std::size_t>(v)] += 1.0;
  const auto expected = largest_remainder(100, freq);
  for (const auto& s : plan.subsets) {
    EXPECT_EQ(s.size(), 100u);
    std::vector<std::size_t> counts(5, 0);
    for (Index i : s) {
      EXPECT_TRUE(seen.insert(i).second);
      ++counts[static_cast<std::size_t>(a[i])];
    }
    EXPECT_EQ(counts, expected);
  }
  EXPECT_EQ(seen.size(), 500u);
  EXPECT_TRUE(plan.warnings.empty());
}

TEST(Subsample, ShortClusterFallsBackToGlobalPool) {
  // Cluster 1 holds 3 records but the quota of 4 subsamples would need 4.
  std::vector<int> a(40, 0);
  for (std::size_t i = 0; i < 3; ++i) a[i] = 1;
  const auto plan = make_subsamples(a, 4, 10, 1);
  std::set<Index> seen;
  for (const auto& s : plan.subsets) {
    EXPECT_EQ(s.size(), 10u);
    for (Index i : s) EXPECT_TRUE(seen.insert(i).second);
  }
  EXPECT_FALSE(plan.warnings.empty());
}

TEST(Subsample, PoolExhaustedIsRejected) {
  std::vector<int> a(50, 0);
  EXPECT_THROW(make_subsamples(a, 6, 10, 0), Error);
}

TEST(Subsample, ReplenishAllowsOversizedRequests) {
  Rng rng(7);
  std::vector<int> a(500);
  for (auto& v : a) v = static_cast<int>(rng.below(3));
  EXPECT_THROW(make_subsamples(a, 5, 200, 2), Error);
  const auto plan = make_subsamples(a, 5, 200, 2, true);
  EXPECT_TRUE(plan.replenished);
  ASSERT_EQ(plan.subsets.size(), 5u);
  // Passes: {0, 1}, {2, 3}, {4}; disjoint inside each pass.
  for (const auto& [x, y] : {std::pair{0, 1}, std::pair{2, 3}}) {
    std::set<Index> u(plan.subsets[x].begin(), plan.subsets[x].end());
    u.insert(plan.subsets[y].begin(), plan.subsets[y].end());
    EXPECT_EQ(u.size(), 400u);
  }
  for (const auto& s : plan.subsets) EXPECT_EQ(std::set<Index>(s.begin(), s.end()).size(), 200u);
  EXPECT_THROW(make_subsamples(a, 1, 501, 2, true), Error);
}

TEST(Subsample, JsonRoundTripByRecordId) {
  std::vector<int> a(30);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 30; ++i) {
    a[i] = static_cast<int>(i % 3);
    ids.push_back("M" + std::to_string(i));
  }
  const auto plan = make_subsamples(a, 2, 12, 3);
  const auto back = plan_from_json(plan_to_json(plan, ids), ids);
  EXPECT_EQ(back.subsets, plan.subsets);
  EXPECT_EQ(back.quota, plan.quota);
}

TEST(StratifiedSplit, PartitionAndProportions) {
  Rng rng(6);
  std::vector<int> a(400);
  for (auto& v : a) v = static_cast<int>(rng.below(4));
  IndexList idx;
  for (Index i = 0; i < 400; i += 4) idx.push_back(i);
  const auto s = stratified_split(idx, a, 0.25, 12);
  EXPECT_EQ(s.train.size(), 75u);
  EXPECT_EQ(s.test.size(), 25u);
  std::set<Index> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all, std::set<Index>(idx.begin(), idx.end()));

  std::vector<double> freq(4, 0.0);
  for (Index i : idx) freq[static_cast<std::size_t>(a[i])] += 1.0;
  const auto expected = largest_remainder(25, freq);
  std::vector<std::size_t> got(4, 0);
  for (Index i : s.test) ++got[static_cast<std::size_t>(a[i])];
  EXPECT_EQ(got, expected);

  const auto again = stratified_split(idx, a, 0.25, 12);
  EXPECT_EQ(again.test, s.test);
}

}  // namespace
