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

#include "qrc/feature_select.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace {

using namespace qrc;

BatchModel linear_model(Vector w, double b) {
  return [w, b](const Matrix& x) -> Vector { return (x * w).array() + b; };
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

// Interventional value of a coalition, straight from the definition.
double coalition_value(const BatchModel& f, const Eigen::RowVectorXd& x, const Matrix& bg, unsigned mask) {
  Matrix z = bg;
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    for (Eigen::Index i = 0; i < z.cols(); ++i)
      if (mask >> i & 1u) z(r, i) = x[i];
  return f(z).mean();
}

TEST(KernelShap, LinearModelClosedForm) {
  Rng rng(1);
  for (Eigen::Index d : {2, 3, 5, 8}) {
    const Vector w = random_matrix(d, 1, rng).col(0);
    const auto f = linear_model(w, 0.7);
    ShapConfig cfg;
    cfg.background = random_matrix(1, d, rng);
    cfg.n_coalitions = 2 * static_cast<std::size_t>(d) + 2;
    cfg.seed = 5;
    const Eigen::RowVectorXd x = random_matrix(1, d, rng).row(0);
    const auto a = kernel_shap(f, x, cfg);
    for (Eigen::Index i = 0; i < d; ++i) EXPECT_NEAR(a.phi[i], w[i] * (x[i] - cfg.background(0, i)), 1e-8);
    EXPECT_NEAR(a.base_value + a.phi.sum(), a.prediction, 1e-10);
  }
}

TEST(KernelShap, NullPlayerAndNoDeviation) {
  Rng rng(2);
  Vector w(4);
  w << 1.5, 0.0, -2.0, 0.3;
  const auto f = linear_model(w, 0.0);
  ShapConfig cfg;
  cfg.background = random_matrix(1, 4, rng);
  const Eigen::RowVectorXd x = random_matrix(1, 4, rng).row(0);
  EXPECT_LT(std::abs(kernel_shap(f, x, cfg).phi[1]), 1e-8);
  const auto same = kernel_shap(f, cfg.background.row(0), cfg);
  EXPECT_LT(same.phi.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(KernelShap, MatchesExhaustiveOracleOnNonlinearModel) {
  // With the whole coalition lattice enumerated the estimator is exact for any model.
  Rng rng(3);
  const BatchModel f = [](const Matrix& x) -> Vector {
    Vector out(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      out[r] = std::sin(x(r, 0)) * x(r, 1) + x(r, 2) * x(r, 2) + 0.5 * x(r, 3) * x(r, 4) * x(r, 5);
    return out;
  };
  for (Eigen::Index d : {6, 7, 8}) {
    const BatchModel g = [f, d](const Matrix& x) {
      Matrix padded = Matrix::Zero(x.rows(), 8);
      padded.leftCols(d) = x;
      return f(padded);
    };
    ShapConfig cfg;
    cfg.background = random_matrix(3, d, rng);
    cfg.n_coalitions = 1u << d;
    const Eigen::RowVectorXd x = random_matrix(1, d, rng).row(0);
    const auto a = kernel_shap(g, x, cfg);
    EXPECT_TRUE(a.exact);
    const auto oracle = oracle::shapley_exact(static_cast<std::size_t>(d),
                                              [&](unsigned m) { return coalition_value(g, x, cfg.background, m); });
    for (Eigen::Index i = 0; i < d; ++i) EXPECT_NEAR(a.phi[i], oracle[static_cast<std::size_t>(i)], 1e-9);
  }
}

TEST(KernelShap, SampledEstimateCloseToExact) {
  Rng rng(4);
  const Eigen::Index d = 10;
  const BatchModel f = [](const Matrix& x) -> Vector {
    Vector out(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) out[r] = x(r, 0) * x(r, 1) + std::tanh(x(r, 2)) + 0.2 * x.row(r).sum();
    return out;
  };
  ShapConfig cfg;
  cfg.background = random_matrix(2, d, rng);
  cfg.n_coalitions = 600;
  cfg.seed = 9;
  const Eigen::RowVectorXd x = random_matrix(1, d, rng).row(0);
  const auto a = kernel_shap(f, x, cfg);
  EXPECT_FALSE(a.exact);
  EXPECT_NEAR(a.base_value + a.phi.sum(), a.prediction, 1e-9);
  const auto oracle = oracle::shapley_exact(static_cast<std::size_t>(d),
                                            [&](unsigned m) { return coalition_value(f, x, cfg.background, m); });
  for (Eigen::Index i = 0; i < d; ++i) EXPECT_NEAR(a.phi[i], oracle[static_cast<std::size_t>(i)], 5e-2);
  // Same seed, same answer.
  EXPECT_EQ(kernel_shap(f, x, cfg).phi, a.phi);
}

TEST(KernelShap, DuplicatedFeaturesShareCredit) {
  Rng rng(5);
  const BatchModel f = [](const Matrix& x) -> Vector {
    return (x.col(0) + x.col(1)).array().square() + x.col(2).array();
  };
  ShapConfig cfg;
  cfg.background = random_matrix(5, 3, rng);
  cfg.background.col(1) = cfg.background.col(0);
  double s0 = 0.0, s1 = 0.0;
  for (int r = 0; r < 200; ++r) {
    Eigen::RowVectorXd x = random_matrix(1, 3, rng).row(0);
    x[1] = x[0];
    cfg.seed = static_cast<std::uint64_t>(r);
    const auto a = kernel_shap(f, x, cfg);
    s0 += std::abs(a.phi[0]);
    s1 += std::abs(a.phi[1]);
  }
  EXPECT_LT(std::abs(s0 - s1) / std::max(s0, s1), 0.05);
}

TEST(KernelShap, EfficiencyWithTrainedForest) {
  Rng rng(6);
  const Matrix x = random_matrix(60, 12, rng);
  const Vector y = x.col(0).array().sin() + x.col(3).array() * x.col(4).array();
  auto spec = RegressorSpec::of(RegressorKind::random_forest);
  spec.n_trees = 20;
  const auto model = train(spec, x, y, 1);
  ShapConfig cfg;
  std::tie(cfg.background, cfg.background_weights) = kmeans_background(x, 8, 2);
  cfg.n_coalitions = 300;
  for (const auto& a : explain_rows(as_batch_model(model), x.topRows(5), cfg, 2))
    EXPECT_LT(std::abs(a.base_value + a.phi.sum() - a.prediction), 1e-6);
}

TEST(KernelShap, Errors) {
  ShapConfig cfg;
  cfg.background = Matrix::Zero(1, 3);
  cfg.n_coalitions = 7;
  const auto f = linear_model(Vector::Ones(3), 0.0);
  EXPECT_THROW(kernel_shap(f, Eigen::RowVectorXd::Zero(3), cfg), Error);
  cfg.n_coalitions = 8;
  EXPECT_NO_THROW(kernel_shap(f, Eigen::RowVectorXd::Zero(3), cfg));
  EXPECT_THROW(kernel_shap(f, Eigen::RowVectorXd::Zero(4), cfg), Error);
  cfg.background = Matrix(0, 3);
  EXPECT_THROW(kernel_shap(f, Eigen::RowVectorXd::Zero(3), cfg), Error);
}

Attribution att(std::initializer_list<double> v) {
  Attribution a;
  a.phi = Eigen::Map<const Vector>(v.begin(), static_cast<Eigen::Index>(v.size()));
  return a;
}

TEST(Ranking, OrderScoresAndTies) {
  EXPECT_EQ(rank_features({att({0.5, -2.0})}).order, (IndexList{1, 0}));
  const auto r = rank_features({att({1, 0}), att({-1, 0})});
  EXPECT_EQ(r.order, (IndexList{0, 1}));
  EXPECT_EQ(r.scores, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(rank_features({att({0, 0, 0})}).order, (IndexList{0, 1, 2}));
  EXPECT_THROW(rank_features({att({1, 2}), att({1})}), Error);
  EXPECT_THROW(rank_features({}), Error);
}

TEST(Ranking, SelectTopK) {
  FeatureRanking r{{2, 0, 1}, {3, 2, 1}};
  EXPECT_EQ(select_top_k(r, 2), (IndexList{0, 2}));
  EXPECT_EQ(select_top_k(r, 1), (IndexList{2}));
  EXPECT_EQ(select_top_k(r, 3), (IndexList{0, 1, 2}));
  EXPECT_THROW(select_top_k(r, 0), Error);
  EXPECT_THROW(select_top_k(r, 4), Error);
}

TEST(Ranking, CsvExport) {
  FeatureRanking r{{1, 0}, {2.5, 0.5}};
  const std::string path = ::testing::TempDir() + "ranking.csv";
  write_ranking_csv(r, {"D_a", "D_b"}, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "feature_name,score,rank\nD_b,2.5,1\nD_a,0.5,2\n");
  std::remove(path.c_str());
}

}  // namespace
