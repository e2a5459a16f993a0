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

// KMeans clustering and cluster-proportional, disjoint subsampling.

#pragma once

#include "qrc/dataset.hpp"

#include <json.hpp>

#include <map>
#include <set>
#include <unordered_map>

namespace qrc {

struct ClusterModel {
  Matrix centroids;  // k x d
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> inertia_history;  // after every assignment step
};

struct KMeansResult {
  ClusterModel model;
  std::vector<int> assignments;
};

namespace detail {

/// Nearest centroid (ties to the lower index) and the squared distance.
inline std::pair<int, double> nearest_centroid(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Matrix& centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

inline Matrix kmeans_plus_plus(const Matrix& x, std::size_t k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Matrix centroids(static_cast<Eigen::Index>(k), x.cols());
  centroids.row(0) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (x.row(i) - centroids.row(0)).squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2[static_cast<std::size_t>(i)];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(static_cast<Eigen::Index>(c)) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (x.row(i) - x.row(pick)).squaredNorm());
    }
  }
  return centroids;
}

}  // namespace detail

/// Lloyd iterations from a seeded k-means++ start, until the assignment is a
/// fixpoint or `max_iterations` is reached. A cluster that becomes empty is
/// re-seeded at the point farthest from its current centroid.
inline KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iterations = 300) {
  const auto n = static_cast<std::size_t>(x.rows());
  require(k >= 1, ErrorKind::invalid_argument, "kmeans: k must be >= 1");
  require(k <= n, ErrorKind::invalid_argument, "kmeans: k=" + std::to_string(k) + " > rows=" + std::to_string(n));
  require(x.allFinite(), ErrorKind::invalid_argument, "kmeans: non-finite input");
  Rng rng(seed);
  KMeansResult out;
  auto& model = out.model;
  model.centroids = detail::kmeans_plus_plus(x, k, rng);
  std::vector<int> assign(n, -1);
  std::vector<double> dist(n, 0.0);

  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto [c, d] = detail::nearest_centroid(x.row(static_cast<Eigen::Index>(i)), model.centroids);
      changed |= (c != assign[i]);
      assign[i] = c;
      dist[i] = d;
      inertia += d;
    }
    model.inertia_history.push_back(inertia);
    model.inertia = inertia;
    model.iterations = it + 1;
    if (!changed) break;

    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(assign[i]) += x.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        model.centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the worst-served point.
      const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      model.centroids.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(far));
      dist[far] = 0.0;
    }
  }
  out.assignments = std::move(assign);
  return out;
}

/// Assigns rows to the nearest centroid of a fitted model.
inline std::vector<int> predict_clusters(const ClusterModel& model, const Matrix& x) {
  require(x.cols() == model.centroids.cols(), ErrorKind::dimension_mismatch, "predict_clusters: arity mismatch");
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = detail::nearest_centroid(x.row(i), model.centroids).first;
  return out;
}

struct SubsamplePlan {
  std::vector<IndexList> subsets;  // each ascending
  std::size_t subsample_size = 0;
  std::size_t n_subsamples = 0;
  std::vector<int> cluster_labels;              // sorted distinct labels
  std::vector<std::size_t> quota;               // per cluster label, per subsample
  std::vector<std::string> warnings;
  bool replenished = false;  // some subsets were drawn from a refilled pool
};

/// Draws `n_subsamples` pairwise-disjoint subsets of `subsample_size`
/// records. Every subset takes the largest-remainder share of each cluster's
/// population frequency; when a cluster runs dry the shortfall is filled from
/// the records left in other clusters and reported in `warnings`.
///
/// With `replenish`, a request larger than the pool is allowed: once fewer
/// than `subsample_size` records remain, every record returns to the pool
/// (reshuffled). Subsets are then disjoint only within one pass.
inline SubsamplePlan make_subsamples(const std::vector<int>& assignments, std::size_t n_subsamples,
                                     std::size_t subsample_size, std::uint64_t seed, bool replenish = false) {
  const std::size_t n = assignments.size();
  require(n_subsamples >= 1 && subsample_size >= 1, ErrorKind::invalid_argument,
          "make_subsamples: counts and sizes must be >= 1");
  require(subsample_size <= n, ErrorKind::infeasible,
          "make_subsamples: subsample size " + std::to_string(subsample_size) + " > " + std::to_string(n) + " records");
  require(replenish || n_subsamples * subsample_size <= n, ErrorKind::infeasible,
          "make_subsamples: pool exhausted (" + std::to_string(n_subsamples) + " x " + std::to_string(subsample_size) +
              " > " + std::to_string(n) + " records)");
  SubsamplePlan plan;
  plan.n_subsamples = n_subsamples;
  plan.subsample_size = subsample_size;

  std::map<int, IndexList> members;
  for (std::size_t i = 0; i < n; ++i) members[assignments[i]].push_back(i);
  std::vector<IndexList> pools;
  std::vector<double> weights;
  Rng rng(seed);
  for (auto& [label, idx] : members) {
    plan.cluster_labels.push_back(label);
    weights.push_back(static_cast<double>(idx.size()));
    rng.shuffle(idx);
    pools.push_back(idx);
  }
  plan.quota = largest_remainder(subsample_size, weights);
  std::vector<std::size_t> cursor(pools.size(), 0);

  std::size_t left = n;
  for (std::size_t s = 0; s < n_subsamples; ++s) {
    if (left < subsample_size) {
      for (auto& pool : pools) rng.shuffle(pool);
      std::fill(cursor.begin(), cursor.end(), 0);
      left = n;
      plan.replenished = true;
      plan.warnings.push_back("pool replenished before subsample " + std::to_string(s) +
                              "; subsamples from different passes may overlap");
    }
    left -= subsample_size;
    IndexList subset;
    std::size_t shortfall = 0;
    for (std::size_t c = 0; c < pools.size(); ++c) {
      const std::size_t available = pools[c].size() - cursor[c];
      const std::size_t take = std::min(plan.quota[c], available);
      subset.insert(subset.end(), pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c]),
                    pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c] + take));
      cursor[c] += take;
      if (take < plan.quota[c]) {
        shortfall += plan.quota[c] - take;
        plan.warnings.push_back("subsample " + std::to_string(s) + ": cluster " + std::to_string(plan.cluster_labels[c]) +
                                " short by " + std::to_string(plan.quota[c] - take) + "; filled from global pool");
      }
    }
    if (shortfall > 0) {
      std::vector<Index> rest;
      for (std::size_t c = 0; c < pools.size(); ++c) rest.insert(rest.end(), pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c]), pools[c].end());
      std::sort(rest.begin(), rest.end());
      rng.shuffle(rest);
      rest.resize(std::min(shortfall, rest.size()));
      const std::set<Index> chosen(rest.begin(), rest.end());
      for (std::size_t c = 0; c < pools.size(); ++c) {
        // Move chosen records to the consumed prefix of their cluster pool.
        auto first = pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c]);
        auto mid = std::stable_partition(first, pools[c].end(), [&](Index i) { return chosen.count(i) > 0; });
        cursor[c] += static_cast<std::size_t>(mid - first);
      }
      subset.insert(subset.end(), rest.begin(), rest.end());
    }
    std::sort(subset.begin(), subset.end());
    plan.subsets.push_back(std::move(subset));
  }
  return plan;
}

/// Train/test split of a subsample, stratified by cluster assignment.
/// Returned indices refer to the original record positions.
inline SplitIndices stratified_split(const IndexList& indices, const std::vector<int>& assignments,
                                     double test_fraction, std::uint64_t seed) {
  require(!indices.empty(), ErrorKind::invalid_argument, "stratified_split: empty index set");
  std::vector<int> strata;
  strata.reserve(indices.size());
  for (Index i : indices) {
    require(i < assignments.size(), ErrorKind::dimension_mismatch, "stratified_split: index beyond assignments");
    strata.push_back(assignments[i]);
  }
  SplitIndices local = split_indices(indices.size(), test_fraction, &strata, seed);
  for (auto& p : local.train) p = indices[p];
  for (auto& p : local.test) p = indices[p];
  return local;
}

inline nlohmann::json plan_to_json(const SubsamplePlan& plan, const std::vector<std::string>& record_ids) {
  nlohmann::json subsets = nlohmann::json::array();
  for (const auto& s : plan.subsets) {
    nlohmann::json ids = nlohmann::json::array();
    for (Index i : s) ids.push_back(record_ids.at(i));
    subsets.push_back(ids);
  }
  return nlohmann::json{{"format", "qrc-subsample-plan/1"},
                        {"subsample_size", plan.subsample_size},
                        {"n_subsamples", plan.n_subsamples},
                        {"cluster_labels", plan.cluster_labels},
                        {"quota", plan.quota},
                        {"replenished", plan.replenished},
                        {"warnings", plan.warnings},
                        {"subsamples", subsets}};
}

/// Rebuilds a plan against a dataset by record id.
inline SubsamplePlan plan_from_json(const nlohmann::json& j, const std::vector<std::string>& record_ids) {
  require(j.value("format", "") == "qrc-subsample-plan/1", ErrorKind::parse, "subsample plan: unsupported format tag");
  std::unordered_map<std::string, Index> position;
  for (std::size_t i = 0; i < record_ids.size(); ++i) position.emplace(record_ids[i], i);
  SubsamplePlan plan;
  plan.subsample_size = j.at("subsample_size").get<std::size_t>();
  plan.n_subsamples = j.at("n_subsamples").get<std::size_t>();
  plan.cluster_labels = j.value("cluster_labels", std::vector<int>{});
  plan.quota = j.value("quota", std::vector<std::size_t>{});
  plan.replenished = j.value("replenished", false);
  plan.warnings = j.value("warnings", std::vector<std::string>{});
  for (const auto& s : j.at("subsamples")) {
    IndexList idx;
    for (const auto& id : s) {
      const auto it = position.find(id.get<std::string>());
      require(it != position.end(), ErrorKind::parse, "subsample plan: unknown record id " + id.get<std::string>());
      idx.push_back(it->second);
    }
    std::sort(idx.begin(), idx.end());
    plan.subsets.push_back(std::move(idx));
  }
  return plan;
}

}  // namespace qrc
