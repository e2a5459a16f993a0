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

// Regression readouts: ridge-conditioned least squares, k-nearest neighbours,
// CART, random forest and Gaussian-process regression with an RBF kernel.

#pragma once

#include "qrc/common.hpp"

#include <json.hpp>

#include <numeric>
#include <variant>

namespace qrc {

enum class RegressorKind { linear, knn, cart, random_forest, gp_rbf };

inline const char* to_string(RegressorKind kind) {
  switch (kind) {
    case RegressorKind::linear: return "linear";
    case RegressorKind::knn: return "knn";
    case RegressorKind::cart: return "cart";
    case RegressorKind::random_forest: return "random_forest";
    case RegressorKind::gp_rbf: return "gp_rbf";
  }
  return "unknown";
}

inline RegressorKind regressor_kind_from_string(const std::string& s) {
  for (auto k : {RegressorKind::linear, RegressorKind::knn, RegressorKind::cart, RegressorKind::random_forest,
                 RegressorKind::gp_rbf}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorKind::invalid_argument, "unknown regressor kind '" + s + "'");
}

struct RegressorSpec {
  RegressorKind kind = RegressorKind::random_forest;
  // linear
  double ridge = 1e-8;
  // knn
  std::size_t k = 5;
  // cart / random_forest
  std::size_t max_depth = 0;  // 0: unlimited
  std::size_t min_leaf = 2;
  std::size_t n_trees = 100;
  std::size_t max_features = 0;  // 0: ceil(sqrt(d)) for forests, d for cart
  bool bootstrap = true;
  // gp_rbf
  double length_scale = 1.0;  // <= 0: sqrt(median pairwise squared distance)
  double signal_variance = 1.0;
  double noise_variance = 1e-2;

  static RegressorSpec of(RegressorKind kind) {
    RegressorSpec s;
    s.kind = kind;
    return s;
  }

  void validate() const {
    require(ridge >= 0.0, ErrorKind::invalid_argument, "regressor: ridge must be >= 0");
    require(k >= 1, ErrorKind::invalid_argument, "regressor: knn k must be >= 1");
    require(min_leaf >= 1 && n_trees >= 1, ErrorKind::invalid_argument, "regressor: min_leaf and n_trees must be >= 1");
    require(signal_variance > 0.0 && noise_variance >= 0.0, ErrorKind::invalid_argument,
            "regressor: gp variances must be positive");
  }
};

// ---------------------------------------------------------------------------
// Fitted parameters
// ---------------------------------------------------------------------------

struct LinearParams {
  Vector weights;
  double intercept = 0.0;
};

struct KnnParams {
  Matrix x;
  Vector y;
};

struct TreeNode {
  int feature = -1;  // -1: leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
};

struct ForestParams {
  std::vector<Tree> trees;
};

struct GpParams {
  Matrix x;
  Vector alpha;
  double y_mean = 0.0;
  double length_scale = 1.0;  // effective value used
};

struct TrainedModel {
  RegressorSpec spec;
  std::size_t n_train = 0;
  std::size_t n_features = 0;
  std::uint64_t seed = 0;
  std::variant<LinearParams, KnnParams, ForestParams, GpParams> params;

  RegressorKind kind() const { return spec.kind; }
};

namespace detail {

inline void check_training_data(const Matrix& x, const Vector& y, std::size_t min_rows) {
  require(x.rows() == y.size(), ErrorKind::dimension_mismatch, "train: rows(X) != len(y)");
  require(static_cast<std::size_t>(x.rows()) >= min_rows, ErrorKind::invalid_argument,
          "train: need at least " + std::to_string(min_rows) + " rows");
  require(x.cols() >= 1, ErrorKind::invalid_argument, "train: X has no columns");
  require(x.allFinite() && y.allFinite(), ErrorKind::invalid_argument, "train: non-finite values in input");
}

inline LinearParams fit_linear(const Matrix& x, const Vector& y, double ridge) {
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const double y_mu = y.mean();
  const Matrix xc = x.rowwise() - mu;
  const Vector yc = y.array() - y_mu;
  Matrix gram = xc.transpose() * xc;
  gram.diagonal().array() += ridge;
  LinearParams p;
  Eigen::LDLT<Matrix> ldlt(gram);
  p.weights = ldlt.solve(xc.transpose() * yc);
  if (!p.weights.allFinite() || ldlt.info() != Eigen::Success) {
    p.weights = gram.completeOrthogonalDecomposition().solve(xc.transpose() * yc);
  }
  p.intercept = y_mu - mu.dot(p.weights);
  return p;
}

/// Greedy variance-reduction tree. `features_per_split` < d draws a random
/// feature subset at each node; otherwise all features are scanned in order
/// and `rng` is not consumed.
class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const Vector& y, std::size_t max_depth, std::size_t min_leaf,
              std::size_t features_per_split, Rng& rng)
      : x_(x), y_(y), max_depth_(max_depth), min_leaf_(min_leaf), mtry_(features_per_split), rng_(rng) {}

  Tree build(IndexList samples) {
    tree_.nodes.clear();
    grow(samples, 0);
    return std::move(tree_);
  }

 private:
  int grow(IndexList& samples, std::size_t depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double sum = 0.0, sumsq = 0.0;
    for (Index s : samples) {
      const double v = y_[static_cast<Eigen::Index>(s)];
      sum += v;
      sumsq += v * v;
    }
    const double n = static_cast<double>(samples.size());
    tree_.nodes[static_cast<std::size_t>(id)].value = sum / n;
    const double sse = sumsq - sum * sum / n;
    const bool depth_ok = max_depth_ == 0 || depth < max_depth_;
    if (!depth_ok || samples.size() < 2 * min_leaf_ || sse <= 1e-12 * std::max(1.0, sumsq)) return id;

    const Split best = find_split(samples, sum, sse);
    if (best.feature < 0) return id;

    IndexList left, right;
    for (Index s : samples) {
      (x_(static_cast<Eigen::Index>(s), best.feature) <= best.threshold ? left : right).push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  Split find_split(const IndexList& samples, double total_sum, double total_sse) {
    const std::size_t d = static_cast<std::size_t>(x_.cols());
    std::vector<std::size_t> features(d);
    std::iota(features.begin(), features.end(), 0);
    if (mtry_ < d) {
      for (std::size_t i = 0; i < mtry_; ++i) std::swap(features[i], features[i + rng_.below(d - i)]);
      features.resize(mtry_);
      std::sort(features.begin(), features.end());
    }
    Split best;
    const std::size_t n = samples.size();
    std::vector<std::pair<double, double>> column(n);
    for (std::size_t f : features) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto s = static_cast<Eigen::Index>(samples[i]);
        column[i] = {x_(s, static_cast<Eigen::Index>(f)), y_[s]};
      }
      std::stable_sort(column.begin(), column.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double left_sum = 0.0, left_sq = 0.0, right_sq = 0.0;
      for (const auto& c : column) right_sq += c.second * c.second;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += column[i].second;
        left_sq += column[i].second * column[i].second;
        right_sq -= column[i].second * column[i].second;
        const std::size_t nl = i + 1, nr = n - nl;
        if (nl < min_leaf_ || nr < min_leaf_) continue;
        if (column[i].first == column[i + 1].first) continue;
        const double right_sum = total_sum - left_sum;
        const double sse_l = left_sq - left_sum * left_sum / static_cast<double>(nl);
        const double sse_r = right_sq - right_sum * right_sum / static_cast<double>(nr);
        const double gain = total_sse - sse_l - sse_r;
        if (gain > best.gain + 1e-12 * std::max(1.0, total_sse)) {
          best.feature = static_cast<int>(f);
          best.threshold = 0.5 * (column[i].first + column[i + 1].first);
          best.gain = gain;
        }
      }
    }
    return best;
  }

  const Matrix& x_;
  const Vector& y_;
  std::size_t max_depth_;
  std::size_t min_leaf_;
  std::size_t mtry_;
  Rng& rng_;
  Tree tree_;
};

inline double rbf(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b,
                  double signal_variance, double length_scale) {
  return signal_variance * std::exp(-(a - b).squaredNorm() / (2.0 * length_scale * length_scale));
}

inline double median_squared_distance(const Matrix& x) {
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(x.rows() * (x.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) d.push_back((x.row(i) - x.row(j)).squaredNorm());
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double m = *mid;
  if (d.size() % 2 == 0) m = 0.5 * (m + *std::max_element(d.begin(), mid));
  return m > 0.0 ? m : 1.0;
}

inline GpParams fit_gp(const Matrix& x, const Vector& y, const RegressorSpec& spec) {
  GpParams p;
  p.x = x;
  p.y_mean = y.mean();
  p.length_scale = spec.length_scale > 0.0 ? spec.length_scale : std::sqrt(median_squared_distance(x));
  const Eigen::Index n = x.rows();
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = spec.signal_variance + spec.noise_variance;
    for (Eigen::Index j = i + 1; j < n; ++j) k(i, j) = k(j, i) = rbf(x.row(i), x.row(j), spec.signal_variance, p.length_scale);
  }
  const Vector yc = y.array() - p.y_mean;
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() == Eigen::Success) {
    p.alpha = llt.solve(yc);
  } else {
    p.alpha = k.ldlt().solve(yc);
  }
  require(p.alpha.allFinite(), ErrorKind::numerical, "gp_rbf: kernel matrix is singular; increase noise_variance");
  return p;
}

}  // namespace detail

/// Fits a model. `workers` parallelises forest training; every tree draws
/// its randomness from derive_seed(seed, "tree/<index>"), so the fitted
/// forest is independent of the worker count.
inline TrainedModel train(const RegressorSpec& spec, const Matrix& x, const Vector& y, std::uint64_t seed,
                          unsigned workers = 1) {
  spec.validate();
  detail::check_training_data(x, y, 2);
  TrainedModel m;
  m.spec = spec;
  m.n_train = static_cast<std::size_t>(x.rows());
  m.n_features = static_cast<std::size_t>(x.cols());
  m.seed = seed;
  const std::size_t d = m.n_features;
  switch (spec.kind) {
    case RegressorKind::linear:
      m.params = detail::fit_linear(x, y, spec.ridge);
      break;
    case RegressorKind::knn:
      require(spec.k <= m.n_train, ErrorKind::invalid_argument,
              "knn: k=" + std::to_string(spec.k) + " exceeds training size " + std::to_string(m.n_train));
      m.params = KnnParams{x, y};
      break;
    case RegressorKind::cart: {
      Rng rng(derive_seed(seed, "tree/0"));
      const std::size_t mtry = spec.max_features == 0 ? d : std::min(spec.max_features, d);
      detail::TreeBuilder builder(x, y, spec.max_depth, spec.min_leaf, mtry, rng);
      IndexList all(m.n_train);
      std::iota(all.begin(), all.end(), 0);
      m.params = ForestParams{{builder.build(std::move(all))}};
      break;
    }
    case RegressorKind::random_forest: {
      const std::size_t mtry = spec.max_features == 0
                                   ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))))
                                   : std::min(spec.max_features, d);
      ForestParams forest;
      forest.trees.resize(spec.n_trees);
      parallel_for(spec.n_trees, workers, [&](std::size_t t) {
        Rng rng(derive_seed(seed, "tree/" + std::to_string(t)));
        IndexList sample(m.n_train);
        if (spec.bootstrap) {
          for (auto& s : sample) s = static_cast<Index>(rng.below(m.n_train));
          std::sort(sample.begin(), sample.end());
        } else {
          std::iota(sample.begin(), sample.end(), 0);
        }
        detail::TreeBuilder builder(x, y, spec.max_depth, spec.min_leaf, mtry, rng);
        forest.trees[t] = builder.build(std::move(sample));
      });
      m.params = std::move(forest);
      break;
    }
    case RegressorKind::gp_rbf:
      m.params = detail::fit_gp(x, y, spec);
      break;
  }
  return m;
}

inline double predict_one(const TrainedModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, LinearParams>) {
          return x.dot(p.weights.transpose()) + p.intercept;
        } else if constexpr (std::is_same_v<P, KnnParams>) {
          const Eigen::Index n = p.x.rows();
          std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
          for (Eigen::Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = {(p.x.row(i) - x).squaredNorm(), i};
          const std::size_t k = std::min<std::size_t>(model.spec.k, dist.size());
          std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
          double s = 0.0;
          for (std::size_t i = 0; i < k; ++i) s += p.y[dist[i].second];
          return s / static_cast<double>(k);
        } else if constexpr (std::is_same_v<P, ForestParams>) {
          double s = 0.0;
          for (const auto& t : p.trees) s += t.predict(x);
          return s / static_cast<double>(p.trees.size());
        } else {
          double s = p.y_mean;
          for (Eigen::Index i = 0; i < p.x.rows(); ++i)
            s += p.alpha[i] * detail::rbf(p.x.row(i), x, model.spec.signal_variance, p.length_scale);
          return s;
        }
      },
      model.params);
}

inline Vector predict(const TrainedModel& model, const Matrix& x) {
  require(static_cast<std::size_t>(x.cols()) == model.n_features, ErrorKind::dimension_mismatch,
          "predict: arity " + std::to_string(x.cols()) + " != training feature count " +
              std::to_string(model.n_features));
  Vector out(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out[r] = predict_one(model, x.row(r));
  return out;
}

inline double mse(const Vector& predictions, const Vector& targets) {
  require(predictions.size() == targets.size(), ErrorKind::dimension_mismatch, "mse: length mismatch");
  require(predictions.size() >= 1, ErrorKind::invalid_argument, "mse: empty input");
  return (predictions - targets).squaredNorm() / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// Serialization ("qrc-model/1")
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const RegressorSpec& s) {
  nlohmann::json j{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case RegressorKind::linear: j["ridge"] = s.ridge; break;
    case RegressorKind::knn: j["k"] = s.k; break;
    case RegressorKind::cart:
    case RegressorKind::random_forest:
      j["max_depth"] = s.max_depth;
      j["min_leaf"] = s.min_leaf;
      j["max_features"] = s.max_features;
      if (s.kind == RegressorKind::random_forest) {
        j["n_trees"] = s.n_trees;
        j["bootstrap"] = s.bootstrap;
      }
      break;
    case RegressorKind::gp_rbf:
      j["length_scale"] = s.length_scale;
      j["signal_variance"] = s.signal_variance;
      j["noise_variance"] = s.noise_variance;
      break;
  }
  return j;
}

/// Missing hyperparameters keep their documented defaults.
inline RegressorSpec regressor_spec_from_json(const nlohmann::json& j) {
  RegressorSpec s = RegressorSpec::of(regressor_kind_from_string(j.at("kind").get<std::string>()));
  s.ridge = j.value("ridge", s.ridge);
  s.k = j.value("k", s.k);
  s.max_depth = j.value("max_depth", s.max_depth);
  s.min_leaf = j.value("min_leaf", s.min_leaf);
  s.n_trees = j.value("n_trees", s.n_trees);
  s.max_features = j.value("max_features", s.max_features);
  s.bootstrap = j.value("bootstrap", s.bootstrap);
  s.length_scale = j.value("length_scale", s.length_scale);
  s.signal_variance = j.value("signal_variance", s.signal_variance);
  s.noise_variance = j.value("noise_variance", s.noise_variance);
  s.validate();
  return s;
}

namespace detail {

inline nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  return m;
}

inline std::vector<double> vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector vec(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace detail

inline nlohmann::json to_json(const TrainedModel& m) {
  nlohmann::json params;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, LinearParams>) {
          params = {{"weights", detail::vec(p.weights)}, {"intercept", p.intercept}};
        } else if constexpr (std::is_same_v<P, KnnParams>) {
          params = {{"x", detail::matrix_json(p.x)}, {"y", detail::vec(p.y)}};
        } else if constexpr (std::is_same_v<P, ForestParams>) {
          nlohmann::json trees = nlohmann::json::array();
          for (const auto& t : p.trees) {
            nlohmann::json nodes = nlohmann::json::array();
            for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
            trees.push_back(nodes);
          }
          params = {{"node_layout", {"feature", "threshold", "left", "right", "value"}}, {"trees", trees}};
        } else {
          params = {{"x", detail::matrix_json(p.x)},
                    {"alpha", detail::vec(p.alpha)},
                    {"y_mean", p.y_mean},
                    {"effective_length_scale", p.length_scale}};
        }
      },
      m.params);
  return nlohmann::json{{"format", "qrc-model/1"},
                        {"kind", to_string(m.spec.kind)},
                        {"hyperparameters", to_json(m.spec)},
                        {"parameters", params},
                        {"metadata", {{"n_train", m.n_train}, {"n_features", m.n_features}, {"seed", m.seed}}}};
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  require(j.value("format", "") == "qrc-model/1", ErrorKind::parse, "model: unsupported format tag");
  TrainedModel m;
  m.spec = regressor_spec_from_json(j.at("hyperparameters"));
  const auto& meta = j.at("metadata");
  m.n_train = meta.at("n_train").get<std::size_t>();
  m.n_features = meta.at("n_features").get<std::size_t>();
  m.seed = meta.at("seed").get<std::uint64_t>();
  const auto& p = j.at("parameters");
  const auto d = static_cast<Eigen::Index>(m.n_features);
  switch (m.spec.kind) {
    case RegressorKind::linear:
      m.params = LinearParams{detail::vec(p.at("weights").get<std::vector<double>>()), p.at("intercept").get<double>()};
      break;
    case RegressorKind::knn:
      m.params = KnnParams{detail::matrix_from_json(p.at("x"), d), detail::vec(p.at("y").get<std::vector<double>>())};
      break;
    case RegressorKind::cart:
    case RegressorKind::random_forest: {
      ForestParams f;
      for (const auto& t : p.at("trees")) {
        Tree tree;
        for (const auto& n : t) {
          tree.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                                n.at(4).get<double>()});
        }
        f.trees.push_back(std::move(tree));
      }
      m.params = std::move(f);
      break;
    }
    case RegressorKind::gp_rbf:
      m.params = GpParams{detail::matrix_from_json(p.at("x"), d), detail::vec(p.at("alpha").get<std::vector<double>>()),
                          p.at("y_mean").get<double>(), p.at("effective_length_scale").get<double>()};
      break;
  }
  return m;
}

}  // namespace qrc
