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

// 2D projection, median-cut labelling, a soft-margin SVM and binary
// classification metrics.

#pragma once

#include "qrc/common.hpp"

#include <Eigen/Eigenvalues>

#include <fstream>

namespace qrc {

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaModel {
  Vector means;                         // d
  Matrix components;                    // dims x d, orthonormal rows
  std::vector<double> eigenvalues;      // population covariance, descending
  std::vector<double> explained_variance;  // eigenvalue / total variance
};

struct Projection2D {
  Matrix coordinates;  // n x dims
  std::string method = "pca";
  std::vector<double> explained_variance;
};

/// Principal axes of the population covariance, largest first. Each axis is
/// oriented so that its largest-magnitude loading (first one on ties) is positive.
inline PcaModel pca_fit(const Matrix& x, std::size_t dims = 2) {
  require(x.rows() >= 2, ErrorKind::invalid_argument, "pca: need at least 2 rows");
  require(dims >= 1 && dims <= static_cast<std::size_t>(x.cols()), ErrorKind::invalid_argument,
          "pca: dims must lie in [1, n_columns]");
  require(x.allFinite(), ErrorKind::invalid_argument, "pca: non-finite input");
  PcaModel m;
  m.means = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - m.means.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  require(eig.info() == Eigen::Success, ErrorKind::numerical, "pca: eigensolver failed");
  const Vector values = eig.eigenvalues().cwiseMax(0.0);
  const double total = values.sum();
  require(total > 0.0, ErrorKind::numerical, "pca: rank-0 input (all rows identical)");
  const Eigen::Index d = x.cols();
  m.components.resize(static_cast<Eigen::Index>(dims), d);
  for (std::size_t k = 0; k < dims; ++k) {
    const Eigen::Index src = d - 1 - static_cast<Eigen::Index>(k);  // ascending -> descending
    Vector axis = eig.eigenvectors().col(src);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < d; ++i)
      if (std::abs(axis[i]) > std::abs(axis[arg]) + 1e-12) arg = i;
    if (axis[arg] < 0.0) axis = -axis;
    m.components.row(static_cast<Eigen::Index>(k)) = axis.transpose();
    m.eigenvalues.push_back(values[src]);
    m.explained_variance.push_back(values[src] / total);
  }
  return m;
}

inline Matrix pca_transform(const PcaModel& m, const Matrix& x) {
  require(x.cols() == m.means.size(), ErrorKind::dimension_mismatch, "pca: arity mismatch");
  return (x.rowwise() - m.means.transpose()) * m.components.transpose();
}

inline Matrix pca_reconstruct(const PcaModel& m, const Matrix& coords) {
  return (coords * m.components).rowwise() + m.means.transpose();
}

inline Projection2D pca_project(const Matrix& x, std::size_t dims = 2) {
  const PcaModel m = pca_fit(x, dims);
  return {pca_transform(m, x), "pca", m.explained_variance};
}

/// CSV for external projection tools: id column then one column per feature.
inline void export_for_projection(const Matrix& x, const std::vector<std::string>& ids, const std::string& path,
                                  const std::vector<std::string>& column_names = {}) {
  require(ids.size() == static_cast<std::size_t>(x.rows()), ErrorKind::dimension_mismatch,
          "export_for_projection: id count != rows");
  require(column_names.empty() || column_names.size() == static_cast<std::size_t>(x.cols()),
          ErrorKind::dimension_mismatch, "export_for_projection: column name count != columns");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot write " + path);
  out << "# suggested UMAP settings: n_neighbors=200, min_dist=0.9, metric=minkowski\n";
  out << "record_id";
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    out << ',' << (column_names.empty() ? "x" + std::to_string(c) : csv_escape(column_names[static_cast<std::size_t>(c)]));
  out << '\n';
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out << csv_escape(ids[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < x.cols(); ++c) out << ',' << format_double(x(r, c));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Median cut
// ---------------------------------------------------------------------------

struct BinaryLabels {
  std::vector<int> labels;  // 1 iff target > threshold
  double threshold = 0.0;
  bool degenerate = false;  // one class is empty
};

inline double median_of(std::vector<double> v) {
  require(!v.empty(), ErrorKind::invalid_argument, "median of empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Labels against an explicit threshold; ties go to class 0.
inline BinaryLabels binarize(const Vector& target, double threshold) {
  BinaryLabels b;
  b.threshold = threshold;
  std::size_t ones = 0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    b.labels.push_back(target[i] > threshold ? 1 : 0);
    ones += static_cast<std::size_t>(b.labels.back());
  }
  b.degenerate = ones == 0 || ones == b.labels.size();
  return b;
}

inline BinaryLabels median_binarize(const Vector& target) {
  require(target.size() >= 2, ErrorKind::invalid_argument, "median_binarize: need at least 2 values");
  return binarize(target, median_of(std::vector<double>(target.data(), target.data() + target.size())));
}

// ---------------------------------------------------------------------------
// SVM (soft margin, SMO with second-order working-set selection)
// ---------------------------------------------------------------------------

enum class SvmKernel { linear, rbf };

inline const char* to_string(SvmKernel k) { return k == SvmKernel::linear ? "linear" : "rbf"; }

inline SvmKernel svm_kernel_from_string(const std::string& s) {
  if (s == "linear") return SvmKernel::linear;
  if (s == "rbf") return SvmKernel::rbf;
  throw Error(ErrorKind::invalid_argument, "unknown svm kernel '" + s + "' (expected linear|rbf)");
}

struct SvmOptions {
  SvmKernel kernel = SvmKernel::rbf;
  double c = 1.0;
  double gamma = 0.0;  // <= 0: 1 / (2 * median pairwise squared distance)
  double tolerance = 1e-3;
  std::size_t max_iterations = 1000000;
};

struct SvmModel {
  SvmKernel kernel = SvmKernel::rbf;
  double gamma = 0.0;
  double c = 1.0;
  Matrix support_vectors;
  Vector dual_coef;  // alpha_i * y_i for each support vector
  double bias = 0.0;
  Vector alpha;      // full dual vector, kept for diagnostics
  std::size_t iterations = 0;
  bool converged = false;

  double kernel_value(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) const {
    if (kernel == SvmKernel::linear) return a.dot(b);
    return std::exp(-gamma * (a - b).squaredNorm());
  }

  double decision(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    double s = bias;
    for (Eigen::Index i = 0; i < support_vectors.rows(); ++i) s += dual_coef[i] * kernel_value(support_vectors.row(i), x);
    return s;
  }

  std::vector<int> predict(const Matrix& x) const {
    require(x.cols() == support_vectors.cols(), ErrorKind::dimension_mismatch, "svm: arity mismatch");
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) out[static_cast<std::size_t>(r)] = decision(x.row(r)) > 0.0 ? 1 : 0;
    return out;
  }
};

inline double median_pairwise_squared_distance(const Matrix& x) {
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(x.rows() * (x.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) d.push_back((x.row(i) - x.row(j)).squaredNorm());
  return d.empty() ? 0.0 : median_of(std::move(d));
}

/// Solves the C-SVC dual
///   min 1/2 a'Qa - sum(a),  0 <= a_i <= C,  y'a = 0,  Q_ij = y_i y_j K(x_i, x_j)
/// by SMO with maximal-gain second-order pair selection, stopping when the
/// maximal KKT violation drops below `tolerance`. The solver is deterministic,
/// so no seed is involved.
inline SvmModel svm_train(const Matrix& x, const std::vector<int>& labels, const SvmOptions& opt = {}) {
  const Eigen::Index n = x.rows();
  require(n >= 2, ErrorKind::invalid_argument, "svm: need at least 2 rows");
  require(labels.size() == static_cast<std::size_t>(n), ErrorKind::dimension_mismatch, "svm: label count != rows");
  require(opt.c > 0.0 && opt.tolerance > 0.0, ErrorKind::invalid_argument, "svm: C and tolerance must be positive");
  require(x.allFinite(), ErrorKind::invalid_argument, "svm: non-finite input");
  Vector y(n);
  std::size_t positives = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    require(l == 0 || l == 1, ErrorKind::invalid_argument, "svm: labels must be 0 or 1");
    y[i] = l == 1 ? 1.0 : -1.0;
    positives += static_cast<std::size_t>(l);
  }
  require(positives > 0 && positives < static_cast<std::size_t>(n), ErrorKind::invalid_argument,
          "svm: single-class input");

  SvmModel m;
  m.kernel = opt.kernel;
  m.c = opt.c;
  if (opt.kernel == SvmKernel::rbf) {
    const double med = median_pairwise_squared_distance(x);
    m.gamma = opt.gamma > 0.0 ? opt.gamma : (med > 0.0 ? 1.0 / (2.0 * med) : 1.0);
  }
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) k(i, j) = k(j, i) = m.kernel_value(x.row(i), x.row(j));

  const double c = opt.c;
  constexpr double tau = 1e-12;
  Vector alpha = Vector::Zero(n);
  Vector grad = Vector::Constant(n, -1.0);
  const auto in_up = [&](Eigen::Index t) { return (y[t] > 0 && alpha[t] < c) || (y[t] < 0 && alpha[t] > 0); };
  const auto in_low = [&](Eigen::Index t) { return (y[t] > 0 && alpha[t] > 0) || (y[t] < 0 && alpha[t] < c); };

  for (m.iterations = 0; m.iterations < opt.max_iterations; ++m.iterations) {
    Eigen::Index i = -1;
    double gmax = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (in_up(t) && -y[t] * grad[t] > gmax) {
        gmax = -y[t] * grad[t];
        i = t;
      }
    }
    Eigen::Index j = -1;
    double gmin = std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      gmin = std::min(gmin, -y[t] * grad[t]);
      if (i < 0) continue;
      const double b = gmax + y[t] * grad[t];
      if (b <= 0.0) continue;
      double a = k(i, i) + k(t, t) - 2.0 * k(i, t);
      if (a <= 0.0) a = tau;
      const double gain = -(b * b) / a;
      if (gain < best) {
        best = gain;
        j = t;
      }
    }
    if (i < 0 || j < 0 || gmax - gmin < opt.tolerance) {
      m.converged = true;
      break;
    }
    // Two-variable update along y_i a_i + y_j a_j = const, clipped to the box.
    const double old_i = alpha[i];
    const double old_j = alpha[j];
    double a = k(i, i) + k(j, j) - 2.0 * k(i, j);
    if (a <= 0.0) a = tau;
    if (y[i] != y[j]) {
      const double delta = (-grad[i] - grad[j]) / a;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0 && alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = diff;
      } else if (diff <= 0 && alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0 && alpha[i] > c) {
        alpha[i] = c;
        alpha[j] = c - diff;
      } else if (diff <= 0 && alpha[j] > c) {
        alpha[j] = c;
        alpha[i] = c + diff;
      }
    } else {
      const double delta = (grad[i] - grad[j]) / a;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c && alpha[i] > c) {
        alpha[i] = c;
        alpha[j] = sum - c;
      } else if (sum <= c && alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > c && alpha[j] > c) {
        alpha[j] = c;
        alpha[i] = sum - c;
      } else if (sum <= c && alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }
    const double di = alpha[i] - old_i;
    const double dj = alpha[j] - old_j;
    for (Eigen::Index t = 0; t < n; ++t) grad[t] += y[t] * (y[i] * k(t, i) * di + y[j] * k(t, j) * dj);
  }

  // Bias from free vectors; midpoint of the feasible interval otherwise.
  double sum_free = 0.0;
  std::size_t n_free = 0;
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (alpha[t] > 0.0 && alpha[t] < c) {
      sum_free += yg;
      ++n_free;
    } else if ((alpha[t] >= c && y[t] < 0) || (alpha[t] <= 0.0 && y[t] > 0)) {
      ub = std::min(ub, yg);
    } else {
      lb = std::max(lb, yg);
    }
  }
  const double rho = n_free ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);
  m.bias = -rho;
  m.alpha = alpha;

  IndexList sv;
  for (Eigen::Index t = 0; t < n; ++t)
    if (alpha[t] > 0.0) sv.push_back(static_cast<Index>(t));
  m.support_vectors = take_rows(x, sv);
  m.dual_coef.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t s = 0; s < sv.size(); ++s)
    m.dual_coef[static_cast<Eigen::Index>(s)] = alpha[static_cast<Eigen::Index>(sv[s])] * y[static_cast<Eigen::Index>(sv[s])];
  return m;
}

inline SvmModel svm_train(const Matrix& x, const BinaryLabels& labels, const SvmOptions& opt = {}) {
  return svm_train(x, labels.labels, opt);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  bool precision_undefined = false;  // no positive predictions
  bool recall_undefined = false;     // no positive labels
};

/// Positive class is 1. Undefined precision or recall is reported as 0 and flagged.
inline ClassificationMetrics classification_metrics(const std::vector<int>& predicted, const std::vector<int>& actual) {
  require(predicted.size() == actual.size(), ErrorKind::dimension_mismatch, "metrics: length mismatch");
  require(!actual.empty(), ErrorKind::invalid_argument, "metrics: empty input");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool p = predicted[i] == 1;
    const bool a = actual[i] == 1;
    if (p && a) ++m.tp;
    else if (p) ++m.fp;
    else if (a) ++m.fn;
    else ++m.tn;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(actual.size());
  m.precision_undefined = m.tp + m.fp == 0;
  m.recall_undefined = m.tp + m.fn == 0;
  m.precision = m.precision_undefined ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  m.recall = m.recall_undefined ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

}  // namespace qrc
