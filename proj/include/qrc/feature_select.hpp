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

// Kernel SHAP attributions, mean-|phi| ranking and top-k feature selection.

#pragma once

#include "qrc/regressors.hpp"
#include "qrc/subsample.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace qrc {

/// Batch model: one prediction per row.
using BatchModel = std::function<Vector(const Matrix&)>;

inline BatchModel as_batch_model(const TrainedModel& model) {
  return [&model](const Matrix& x) { return predict(model, x); };
}

struct ShapConfig {
  Matrix background;              // reference records, one per row
  Vector background_weights;      // empty: uniform
  std::size_t n_coalitions = 2048;
  double regularization = 1e-8;   // used only when the weighted system is singular
  std::uint64_t seed = 0;

  void validate(std::size_t n_features) const {
    require(background.rows() >= 1, ErrorKind::invalid_argument, "shap: empty background");
    require(static_cast<std::size_t>(background.cols()) == n_features, ErrorKind::dimension_mismatch,
            "shap: background has " + std::to_string(background.cols()) + " columns, record has " +
                std::to_string(n_features));
    require(background_weights.size() == 0 || background_weights.size() == background.rows(),
            ErrorKind::dimension_mismatch, "shap: background weight count != background rows");
    require(n_coalitions >= 2 * n_features + 2, ErrorKind::invalid_argument,
            "shap: coalition budget " + std::to_string(n_coalitions) + " below 2*d+2 = " +
                std::to_string(2 * n_features + 2));
  }
};

struct Attribution {
  double base_value = 0.0;   // weighted mean model output over the background
  Vector phi;
  double prediction = 0.0;   // model output on the explained record
  bool exact = false;        // every coalition was enumerated
  bool regularized = false;  // weighted system was singular
};

namespace detail {

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

/// Calls `visit(mask)` for every size-s subset of {0..d-1} in lexicographic order.
inline void for_each_subset(std::size_t d, std::size_t s, const std::function<void(const std::vector<char>&)>& visit) {
  std::vector<std::size_t> idx(s);
  for (std::size_t i = 0; i < s; ++i) idx[i] = i;
  std::vector<char> mask(d);
  while (true) {
    std::fill(mask.begin(), mask.end(), 0);
    for (std::size_t i : idx) mask[i] = 1;
    visit(mask);
    std::size_t p = s;
    while (p > 0 && idx[p - 1] == d - s + p - 1) --p;
    if (p == 0) return;
    ++idx[p - 1];
    for (std::size_t q = p; q < s; ++q) idx[q] = idx[q - 1] + 1;
  }
}

struct Coalitions {
  std::vector<std::vector<char>> masks;
  std::vector<double> weights;
  bool exact = true;
};

// Mirrors the usual KernelExplainer schedule: subset sizes are visited from
// the outside in (s and d-s together), each size is enumerated completely
// while the remaining budget covers it, and the rest of the kernel mass is
// spread over randomly drawn coalitions (each paired with its complement).
inline Coalitions plan_coalitions(std::size_t d, std::size_t budget, Rng& rng) {
  Coalitions out;
  if (d < 2) return out;
  const std::size_t n_size_groups = d / 2;  // sizes 1..ceil((d-1)/2)
  const std::size_t n_paired = (d - 1) / 2;   // sizes whose complement has a different size
  std::vector<double> size_weight(n_size_groups);
  double total = 0.0;
  for (std::size_t g = 0; g < n_size_groups; ++g) {
    const auto s = static_cast<double>(g + 1);
    size_weight[g] = (static_cast<double>(d) - 1.0) / (s * (static_cast<double>(d) - s));
    if (g < n_paired) size_weight[g] *= 2.0;
    total += size_weight[g];
  }
  for (auto& w : size_weight) w /= total;

  std::size_t left = budget;
  std::size_t full_groups = 0;
  double weight_left = 1.0;
  for (std::size_t g = 0; g < n_size_groups; ++g) {
    const std::size_t s = g + 1;
    const bool paired = g < n_paired;
    const double count = binomial(d, s) * (paired ? 2.0 : 1.0);
    // Share of the remaining budget this size would receive by kernel mass.
    double rem_total = 0.0;
    for (std::size_t h = g; h < n_size_groups; ++h) rem_total += size_weight[h];
    const double share = size_weight[g] / rem_total;
    if (static_cast<double>(left) * share + 1e-9 < count) break;
    const double per = size_weight[g] / count;
    for_each_subset(d, s, [&](const std::vector<char>& m) {
      out.masks.push_back(m);
      out.weights.push_back(per);
      if (paired) {
        std::vector<char> c(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) c[i] = static_cast<char>(!m[i]);
        out.masks.push_back(c);
        out.weights.push_back(per);
      }
    });
    left -= static_cast<std::size_t>(count);
    weight_left -= size_weight[g];
    ++full_groups;
  }
  if (full_groups == n_size_groups) return out;

  out.exact = false;
  std::vector<double> cdf;
  double acc = 0.0;
  for (std::size_t g = full_groups; g < n_size_groups; ++g) {
    acc += size_weight[g];
    cdf.push_back(acc);
  }
  std::map<std::vector<char>, double> drawn;  // mask -> draw count
  std::vector<std::vector<char>> order;       // first-seen order, for determinism
  std::size_t draws = 0;
  std::vector<std::size_t> perm(d);
  const auto add = [&](const std::vector<char>& m) {
    auto [it, inserted] = drawn.emplace(m, 0.0);
    if (inserted) order.push_back(m);
    it->second += 1.0;
    ++draws;
  };
  // Draw until the budget is spent or a generous attempt cap is hit (duplicates are merged).
  const std::size_t max_attempts = 20 * left + 100;
  for (std::size_t attempt = 0; attempt < max_attempts && order.size() < left; ++attempt) {
    const double u = rng.uniform() * acc;
    std::size_t g = full_groups;
    for (std::size_t k = 0; k < cdf.size(); ++k) {
      if (u < cdf[k]) {
        g = full_groups + k;
        break;
      }
      g = full_groups + k;
    }
    const std::size_t s = g + 1;
    for (std::size_t i = 0; i < d; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<char> m(d, 0);
    for (std::size_t i = 0; i < s; ++i) m[perm[i]] = 1;
    add(m);
    if (g < n_paired && order.size() < left) {
      std::vector<char> c(d);
      for (std::size_t i = 0; i < d; ++i) c[i] = static_cast<char>(!m[i]);
      add(c);
    }
  }
  for (const auto& m : order) {
    out.masks.push_back(m);
    out.weights.push_back(weight_left * drawn[m] / static_cast<double>(draws));
  }
  return out;
}

}  // namespace detail

/// Kernel SHAP for one record. The weighted least-squares fit over sampled
/// coalitions is solved with the efficiency constraint substituted in, so
/// base_value + sum(phi) reproduces the model output on `record`.
inline Attribution kernel_shap(const BatchModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& record,
                               const ShapConfig& config) {
  const auto d = static_cast<std::size_t>(record.size());
  require(d >= 1, ErrorKind::invalid_argument, "shap: record has no features");
  config.validate(d);
  const Eigen::Index nb = config.background.rows();
  Vector bw = config.background_weights.size() ? config.background_weights : Vector::Ones(nb);
  require((bw.array() >= 0.0).all() && bw.sum() > 0.0, ErrorKind::invalid_argument, "shap: invalid background weights");
  bw /= bw.sum();

  Attribution a;
  const Vector bg_out = model(config.background);
  require(bg_out.size() == nb, ErrorKind::dimension_mismatch, "shap: model returned wrong output count");
  a.base_value = bw.dot(bg_out);
  a.prediction = model(Matrix(record))[0];
  const double total = a.prediction - a.base_value;
  a.phi = Vector::Zero(static_cast<Eigen::Index>(d));
  if (d == 1) {
    a.phi[0] = total;
    a.exact = true;
    return a;
  }

  Rng rng(config.seed);
  const auto plan = detail::plan_coalitions(d, config.n_coalitions, rng);
  a.exact = plan.exact;
  const auto n_coal = static_cast<Eigen::Index>(plan.masks.size());

  // Evaluate every coalition against every background row in one batch.
  Matrix synth(n_coal * nb, static_cast<Eigen::Index>(d));
  for (Eigen::Index c = 0; c < n_coal; ++c) {
    const auto& m = plan.masks[static_cast<std::size_t>(c)];
    for (Eigen::Index b = 0; b < nb; ++b) {
      auto row = synth.row(c * nb + b);
      row = config.background.row(b);
      for (std::size_t i = 0; i < d; ++i)
        if (m[i]) row[static_cast<Eigen::Index>(i)] = record[static_cast<Eigen::Index>(i)];
    }
  }
  const Vector out = model(synth);
  Vector value(n_coal);
  for (Eigen::Index c = 0; c < n_coal; ++c) value[c] = bw.dot(out.segment(c * nb, nb));

  // phi_last = total - sum(others); regress on z_i - z_last.
  const auto p = static_cast<Eigen::Index>(d - 1);
  Matrix xw(n_coal, p);
  Vector yw(n_coal);
  Vector w(n_coal);
  for (Eigen::Index c = 0; c < n_coal; ++c) {
    const auto& m = plan.masks[static_cast<std::size_t>(c)];
    const double zl = m[d - 1];
    for (Eigen::Index i = 0; i < p; ++i) xw(c, i) = m[static_cast<std::size_t>(i)] - zl;
    yw[c] = value[c] - a.base_value - zl * total;
    w[c] = plan.weights[static_cast<std::size_t>(c)];
  }
  Matrix gram = xw.transpose() * w.asDiagonal() * xw;
  const Vector rhs = xw.transpose() * w.asDiagonal() * yw;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double top = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  if (eig.eigenvalues().minCoeff() <= 1e-12 * top) {
    gram.diagonal().array() += config.regularization;
    a.regularized = true;
  }
  const Vector head = gram.ldlt().solve(rhs);
  a.phi.head(p) = head;
  a.phi[p] = total - head.sum();
  return a;
}

inline Attribution kernel_shap(const TrainedModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& record,
                               const ShapConfig& config) {
  return kernel_shap(as_batch_model(model), record, config);
}

/// Explains every row of `x`; row r uses the seed derived from (config.seed, "row/r").
inline std::vector<Attribution> explain_rows(const BatchModel& model, const Matrix& x, const ShapConfig& config,
                                             unsigned workers = 1) {
  std::vector<Attribution> out(static_cast<std::size_t>(x.rows()));
  parallel_for(out.size(), resolve_workers(workers), [&](std::size_t r) {
    ShapConfig c = config;
    c.seed = derive_seed(config.seed, "row/" + std::to_string(r));
    out[r] = kernel_shap(model, x.row(static_cast<Eigen::Index>(r)), c);
  });
  return out;
}

/// Background summary: k-means centroids weighted by cluster size.
inline std::pair<Matrix, Vector> kmeans_background(const Matrix& x, std::size_t k, std::uint64_t seed) {
  if (static_cast<std::size_t>(x.rows()) <= k) return {x, Vector::Ones(x.rows())};
  const auto km = kmeans(x, k, seed);
  Vector w = Vector::Zero(static_cast<Eigen::Index>(k));
  for (int a : km.assignments) w[a] += 1.0;
  return {km.model.centroids, w};
}

struct FeatureRanking {
  IndexList order;             // feature indices, best first
  std::vector<double> scores;  // mean |phi| aligned with `order`, nonincreasing
};

/// Mean |phi| per feature, sorted descending; equal scores keep the lower index first.
inline FeatureRanking rank_features(const std::vector<Attribution>& attributions) {
  require(!attributions.empty(), ErrorKind::invalid_argument, "rank_features: no attributions");
  const Eigen::Index d = attributions.front().phi.size();
  Vector mean_abs = Vector::Zero(d);
  for (const auto& a : attributions) {
    require(a.phi.size() == d, ErrorKind::dimension_mismatch, "rank_features: attribution arity mismatch");
    mean_abs += a.phi.cwiseAbs();
  }
  mean_abs /= static_cast<double>(attributions.size());
  FeatureRanking r;
  r.order.resize(static_cast<std::size_t>(d));
  std::iota(r.order.begin(), r.order.end(), Index{0});
  std::stable_sort(r.order.begin(), r.order.end(), [&](Index a, Index b) {
    return mean_abs[static_cast<Eigen::Index>(a)] > mean_abs[static_cast<Eigen::Index>(b)];
  });
  for (Index i : r.order) r.scores.push_back(mean_abs[static_cast<Eigen::Index>(i)]);
  return r;
}

/// Top-k features in ascending index order, ready for column slicing.
inline IndexList select_top_k(const FeatureRanking& ranking, std::size_t k) {
  require(k >= 1 && k <= ranking.order.size(), ErrorKind::invalid_argument,
          "select_top_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(ranking.order.size()) + "]");
  IndexList out(ranking.order.begin(), ranking.order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

inline void write_ranking_csv(const FeatureRanking& ranking, const std::vector<std::string>& feature_names,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot write " + path);
  out << "feature_name,score,rank\n";
  for (std::size_t r = 0; r < ranking.order.size(); ++r) {
    out << csv_escape(feature_names.at(ranking.order[r])) << ',' << format_double(ranking.scores[r]) << ',' << (r + 1)
        << '\n';
  }
}

}  // namespace qrc
