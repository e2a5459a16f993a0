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

#include "qrc/analysis.hpp"
#include "qrc/dataset.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace {

using namespace qrc;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Pca, CollinearAndCross) {
  Matrix line(5, 2);
  line << 0, 0, 1, 2, 2, 4, 3, 6, -1, -2;
  const auto p = pca_project(line);
  EXPECT_NEAR(p.explained_variance[0], 1.0, 1e-12);
  EXPECT_NEAR(p.explained_variance[1], 0.0, 1e-12);

  Matrix cross(4, 2);
  cross << 1, 0, -1, 0, 0, 1, 0, -1;
  const auto q = pca_project(cross);
  EXPECT_NEAR(q.explained_variance[0], q.explained_variance[1], 1e-10);

  EXPECT_THROW(pca_project(Matrix::Ones(3, 2)), Error);
  EXPECT_THROW(pca_project(Matrix::Ones(1, 2)), Error);
}

TEST(Pca, FullRankRoundTripOrthonormalAndVariance) {
  Rng rng(1);
  Matrix x = random_matrix(50, 10, rng);
  x.col(3) *= 4.0;
  const auto m = pca_fit(x, 10);
  EXPECT_LT((m.components * m.components.transpose() - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-10);
  const Matrix coords = pca_transform(m, x);
  EXPECT_LT((pca_reconstruct(m, coords) - x).cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index k = 0; k < 10; ++k) {
    const double var = coords.col(k).squaredNorm() / 50.0;
    EXPECT_NEAR(var, m.eigenvalues[static_cast<std::size_t>(k)], 1e-8);
    if (k > 0) {
      EXPECT_LE(m.explained_variance[static_cast<std::size_t>(k)], m.explained_variance[static_cast<std::size_t>(k - 1)]);
    }
    Eigen::Index arg = 0;
    m.components.row(k).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(m.components(k, arg), 0.0);
  }
}

TEST(Export, LayoutDeterminismAndRoundTrip) {
  Matrix x(2, 3);
  x << 0.1, 1.0 / 3.0, -2e-7, 4.0, 5.5, 6.25;
  const std::string a = ::testing::TempDir() + "proj_a.csv";
  const std::string b = ::testing::TempDir() + "proj_b.csv";
  export_for_projection(x, {"m1", "m2"}, a);
  export_for_projection(x, {"m1", "m2"}, b);
  const std::string text = slurp(a);
  EXPECT_EQ(text, slurp(b));
  EXPECT_NE(text.find("n_neighbors=200"), std::string::npos);
  std::size_t rows = 0;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line[0] == '#') continue;
    EXPECT_EQ(split_csv_line(line).size(), 4u);
    ++rows;
  }
  EXPECT_EQ(rows, 3u);  // header + 2

  CsvSchema schema;
  schema.id_column = "record_id";
  schema.target_column = "";
  const auto back = load_csv(a, schema);
  EXPECT_EQ(back.record_ids, (std::vector<std::string>{"m1", "m2"}));
  EXPECT_LT((back.features - x).cwiseAbs().maxCoeff(), 1e-12);
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST(MedianCut, HandValuesTiesAndPermutation) {
  Vector t(4);
  t << 1, 2, 3, 4;
  const auto b = median_binarize(t);
  EXPECT_DOUBLE_EQ(b.threshold, 2.5);
  EXPECT_EQ(b.labels, (std::vector<int>{0, 0, 1, 1}));
  EXPECT_FALSE(b.degenerate);

  const auto c = median_binarize(Vector::Constant(5, 3.0));
  EXPECT_EQ(c.labels, std::vector<int>(5, 0));
  EXPECT_TRUE(c.degenerate);

  Vector p(4);
  p << 4, 1, 3, 2;
  const auto q = median_binarize(p);
  EXPECT_EQ(q.threshold, b.threshold);
  EXPECT_EQ(q.labels, (std::vector<int>{1, 0, 1, 0}));
  EXPECT_THROW(median_binarize(Vector::Ones(1)), Error);
}

struct Blobs {
  Matrix x;
  std::vector<int> y;
};

Blobs blobs(Eigen::Index per_class, double gap, Rng& rng) {
  Blobs b;
  b.x.resize(2 * per_class, 2);
  for (Eigen::Index i = 0; i < 2 * per_class; ++i) {
    const bool pos = i >= per_class;
    b.x(i, 0) = (pos ? gap : -gap) + 0.3 * rng.normal();
    b.x(i, 1) = 0.3 * rng.normal();
    b.y.push_back(pos ? 1 : 0);
  }
  return b;
}

TEST(Svm, SeparableLinearIsPerfectAndFeasible) {
  Rng rng(2);
  const auto b = blobs(30, 3.0, rng);
  SvmOptions opt;
  opt.kernel = SvmKernel::linear;
  const auto m = svm_train(b.x, b.y, opt);
  EXPECT_TRUE(m.converged);
  EXPECT_EQ(classification_metrics(m.predict(b.x), b.y).accuracy, 1.0);
  double balance = 0.0;
  for (Eigen::Index i = 0; i < m.alpha.size(); ++i) {
    EXPECT_GE(m.alpha[i], 0.0);
    EXPECT_LE(m.alpha[i], opt.c);
    balance += m.alpha[i] * (b.y[static_cast<std::size_t>(i)] ? 1.0 : -1.0);
  }
  EXPECT_LT(std::abs(balance), 1e-6);
}

TEST(Svm, RbfSeparatesRing) {
  Rng rng(3);
  Matrix x(120, 2);
  std::vector<int> y;
  for (Eigen::Index i = 0; i < 120; ++i) {
    const double r = i < 60 ? 0.5 * rng.uniform() : 2.0 + 0.5 * rng.uniform();
    const double a = 2.0 * 3.14159265358979 * rng.uniform();
    x(i, 0) = r * std::cos(a);
    x(i, 1) = r * std::sin(a);
    y.push_back(i < 60 ? 0 : 1);
  }
  const auto m = svm_train(x, y);
  EXPECT_GT(m.gamma, 0.0);
  EXPECT_GE(classification_metrics(m.predict(x), y).accuracy, 0.98);
}

TEST(Svm, LabelFlipNegatesDecision) {
  Rng rng(4);
  const auto b = blobs(25, 1.0, rng);  // overlapping: bounded multipliers present
  std::vector<int> flipped;
  for (int v : b.y) flipped.push_back(1 - v);
  SvmOptions opt;
  opt.tolerance = 1e-10;
  const auto m = svm_train(b.x, b.y, opt);
  const auto f = svm_train(b.x, flipped, opt);
  const Matrix probe = random_matrix(20, 2, rng);
  for (Eigen::Index i = 0; i < probe.rows(); ++i) EXPECT_NEAR(m.decision(probe.row(i)), -f.decision(probe.row(i)), 1e-6);
}

TEST(Svm, DuplicatedRowsKeepDecision) {
  Rng rng(5);
  const auto b = blobs(20, 3.0, rng);
  Matrix x2(80, 2);
  x2 << b.x, b.x;
  std::vector<int> y2 = b.y;
  y2.insert(y2.end(), b.y.begin(), b.y.end());
  SvmOptions opt;
  opt.kernel = SvmKernel::linear;
  opt.tolerance = 1e-10;
  const auto m1 = svm_train(b.x, b.y, opt);
  const auto m2 = svm_train(x2, y2, opt);
  const Matrix probe = random_matrix(20, 2, rng);
  for (Eigen::Index i = 0; i < probe.rows(); ++i) EXPECT_NEAR(m1.decision(probe.row(i)), m2.decision(probe.row(i)), 1e-6);
}

TEST(Svm, Errors) {
  Matrix x(3, 1);
  x << 0, 1, 2;
  EXPECT_THROW(svm_train(x, std::vector<int>{1, 1, 1}), Error);
  EXPECT_THROW(svm_train(x, std::vector<int>{1, 0}), Error);
}

TEST(Metrics, HandValues) {
  const auto perfect = classification_metrics({1, 0, 1, 0}, {1, 0, 1, 0});
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);

  const auto zeros = classification_metrics({0, 0, 0, 0}, {1, 1, 0, 0});
  EXPECT_EQ(zeros.accuracy, 0.5);
  EXPECT_EQ(zeros.recall, 0.0);
  EXPECT_EQ(zeros.precision, 0.0);
  EXPECT_TRUE(zeros.precision_undefined);
  EXPECT_FALSE(zeros.recall_undefined);

  // tp=2 fp=1 fn=1: precision = recall = 2/3 = f1.
  const auto eq = classification_metrics({1, 1, 1, 0, 0}, {1, 1, 0, 1, 0});
  EXPECT_NEAR(eq.f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(eq.accuracy, static_cast<double>(eq.tp + eq.tn) / 5.0);
  EXPECT_THROW(classification_metrics({1}, {1, 0}), Error);
}

}  // namespace
