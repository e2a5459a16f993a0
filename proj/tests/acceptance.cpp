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

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "oracles.hpp"
#include "qrc/qrc.hpp"

#include <chrono>
#include <cstdio>
#include <set>
#include <sstream>

namespace {

using namespace qrc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

oracle::CMatrix dense_for(const ReservoirConfig& c, const DetuningPattern& p) {
  return oracle::dense_rydberg(c.atom_positions(), c.rabi_amplitude, c.global_detuning, c.local_detuning_amplitude,
                               c.interaction_coefficient, p.f);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome dynamics_oracle() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 1 + rng.below(4);
    auto c = ReservoirConfig::chain(n);
    DetuningPattern p;
    for (std::size_t j = 0; j < n; ++j) p.f.push_back(rng.uniform(-1.0, 1.0));
    const double t = rng.uniform(0.0, 4.3);
    const auto out = evolve(build_hamiltonian(c, p), QuantumState::ground(n), t);
    const Eigen::VectorXcd ref = oracle::propagator(dense_for(c, p), t).col(0);
    worst = std::max(worst, (out.amplitudes - ref).cwiseAbs().maxCoeff());
  }
  const double secs = since(t0);
  return {worst < 1e-6 && secs < 60.0, fmt("max amplitude error %.2e over 200 cases, %.2f s", worst, secs)};
}

Outcome rabi() {
  const auto c = ReservoirConfig::chain(1);
  const auto trace = snapshot_observables(c, {{0.0}});
  double worst = 0.0;
  for (std::size_t t = 0; t < trace.snapshot_times.size(); ++t) {
    const double n = (1.0 - trace.one_body(static_cast<Eigen::Index>(t), 0)) / 2.0;
    const double s = std::sin(c.rabi_amplitude * trace.snapshot_times[t] / 2.0);
    worst = std::max(worst, std::abs(n - s * s));
  }
  return {worst < 1e-6 && trace.snapshot_times.size() == 11,
          fmt("max |<n> - sin^2| %.2e at %.0f snapshots", worst, static_cast<double>(trace.snapshot_times.size()))};
}

Outcome blockade() {
  const auto c = ReservoirConfig::chain(2, 5.0);
  const DetuningPattern p{{0.0, 0.0}};
  const auto trace = snapshot_observables(c, p);
  const auto h = dense_for(c, p);
  Eigen::VectorXcd psi0 = Eigen::VectorXcd::Zero(4);
  psi0[0] = 1.0;
  double peak = 0.0, worst = 0.0;
  for (std::size_t t = 0; t < trace.snapshot_times.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(t);
    const double nn = (1.0 - trace.one_body(r, 0) - trace.one_body(r, 1) + trace.two_body(r, 0)) / 4.0;
    const Eigen::VectorXcd ref = oracle::propagate_eig(h, psi0, trace.snapshot_times[t]);
    peak = std::max(peak, nn);
    worst = std::max(worst, std::abs(nn - std::norm(ref[3])));
  }
  return {peak < 0.01 && worst < 1e-6, fmt("max <n1 n2> %.2e, max deviation from 4x4 oracle %.2e", peak, worst)};
}

Outcome norm_conservation() {
  std::string detail;
  bool ok = true;
  for (std::size_t n : {12u, 18u}) {
    const auto c = ReservoirConfig::chain(n);
    DetuningPattern p;
    Rng rng(n);
    for (std::size_t j = 0; j < n; ++j) p.f.push_back(rng.uniform(-1.0, 1.0));
    const auto t0 = Clock::now();
    const auto h = build_hamiltonian(c, p);
    QuantumState s = QuantumState::ground(n);
    double now = 0.0, worst = 0.0;
    for (double t : c.snapshot_times()) {
      s = evolve(h, s, t - now);
      now = t;
      worst = std::max(worst, std::abs(s.norm() - 1.0));
    }
    const double secs = since(t0);
    const double limit = n == 12 ? 5.0 : 120.0;
    ok = ok && worst < 1e-8 && secs < limit;
    detail += fmt("N=%.0f norm drift %.2e in %.2f s; ", static_cast<double>(n), worst, secs);
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Outcome embedding_widths() {
  const auto c = ReservoirConfig::chain(18);
  const std::size_t t = c.snapshot_times().size();
  const std::size_t one = embedding_width(18, t, EmbeddingMode::one_body);
  const std::size_t two = embedding_width(18, t, EmbeddingMode::two_body);
  const std::size_t labels = embedding_labels(c, EmbeddingMode::two_body).size();
  return {one == 198 && two == 1881 && labels == two,
          fmt("one-body %.0f, two-body %.0f (labels %.0f)", static_cast<double>(one), static_cast<double>(two),
              static_cast<double>(labels))};
}

Outcome shap_exactness() {
  Rng rng(77);
  double worst = 0.0, efficiency = 0.0;
  int runs = 0;
  for (Eigen::Index d = 2; d <= 8; ++d) {
    for (int rep = 0; rep < 5; ++rep) {
      const Vector w = gaussian(d, 1, rng).col(0);
      const double b = rng.normal();
      const BatchModel f = [w, b](const Matrix& x) -> Vector { return (x * w).array() + b; };
      ShapConfig cfg;
      cfg.background = gaussian(1, d, rng);
      cfg.seed = static_cast<std::uint64_t>(100 * d + rep);
      const Eigen::RowVectorXd x = gaussian(1, d, rng).row(0);
      const auto a = kernel_shap(f, x, cfg);
      const auto exact = oracle::shapley_exact(static_cast<std::size_t>(d), [&](unsigned mask) {
        Matrix z = cfg.background;
        for (Eigen::Index i = 0; i < d; ++i)
          if (mask >> i & 1u) z(0, i) = x[i];
        return f(z)[0];
      });
      for (Eigen::Index i = 0; i < d; ++i) worst = std::max(worst, std::abs(a.phi[i] - exact[static_cast<std::size_t>(i)]));
      efficiency = std::max(efficiency, std::abs(a.base_value + a.phi.sum() - a.prediction));
      ++runs;
    }
  }
  return {worst < 1e-3 && efficiency < 1e-6,
          fmt("max |phi - exact| %.2e, max efficiency residual %.2e over %.0f explanations", worst, efficiency, runs)};
}

Outcome subsampling() {
  const auto ds = standardize(generate_synthetic(1000, 8, Relation::nonlinear, 0.1, 7)).first;
  const auto km = kmeans(ds.features, 5, 8);
  const auto plan = make_subsamples(km.assignments, 5, 100, 9);
  std::vector<double> sizes(5, 0.0);
  for (int a : km.assignments) sizes[static_cast<std::size_t>(a)] += 1.0;
  const auto expected = largest_remainder(100, sizes);
  std::set<Index> seen;
  bool ok = plan.subsets.size() == 5 && plan.warnings.empty();
  std::size_t total = 0;
  for (const auto& s : plan.subsets) {
    std::vector<std::size_t> counts(5, 0);
    for (Index i : s) {
      ok = ok && seen.insert(i).second;
      ++counts[static_cast<std::size_t>(km.assignments[i])];
    }
    ok = ok && counts == expected && s.size() == 100;
    total += s.size();
  }
  std::string quota;
  for (auto q : expected) quota += (quota.empty() ? "" : "/") + std::to_string(q);
  return {ok, "5 x 100 disjoint (" + std::to_string(seen.size()) + " unique of " + std::to_string(total) +
                  "), per-cluster quota " + quota + " matched in every subsample"};
}

Outcome regressor_oracles() {
  Rng rng(8);
  int identical = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 8 + static_cast<Eigen::Index>(rng.below(40));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(6));
    const Matrix x = gaussian(n, d, rng);
    const Vector y = gaussian(n, 1, rng).col(0);
    auto forest = RegressorSpec::of(RegressorKind::random_forest);
    forest.n_trees = 1;
    forest.bootstrap = false;
    forest.max_features = static_cast<std::size_t>(d);
    const Matrix probe = gaussian(25, d, rng);
    const auto a = predict(train(forest, x, y, static_cast<std::uint64_t>(trial)), probe);
    const auto b = predict(train(RegressorSpec::of(RegressorKind::cart), x, y, 1), probe);
    identical += a == b;
  }
  const Matrix xg = gaussian(30, 3, rng);
  const Vector yg = xg.col(0).array().sin() + xg.col(1).array() * xg.col(2).array();
  auto gp = RegressorSpec::of(RegressorKind::gp_rbf);
  gp.noise_variance = 1e-10;
  const double gp_err = (predict(train(gp, xg, yg, 0), xg) - yg).cwiseAbs().maxCoeff();
  const Matrix xl = gaussian(80, 6, rng);
  Vector yl(80);
  for (Eigen::Index i = 0; i < 80; ++i) yl[i] = std::cos(xl(i, 0)) + xl(i, 1) * xl(i, 2) + 0.1 * rng.normal();
  const Vector r = predict(train(RegressorSpec::of(RegressorKind::linear), xl, yl, 0), xl) - yl;
  Matrix design(80, 7);
  design << xl, Vector::Ones(80);
  const double ortho = (design.transpose() * r).norm();
  return {identical == 50 && gp_err < 1e-6 && ortho < 1e-6,
          fmt("forest==cart on %.0f/50 datasets, GP interpolation error %.2e, linear X^T r norm %.2e", identical, gp_err,
              ortho)};
}

Outcome end_to_end(const fs::path& scratch) {
  ExperimentConfig c;
  c.dataset.source = "synthetic";
  c.dataset.n_records = 500;
  c.dataset.n_features = 8;
  c.dataset.relation = Relation::nonlinear;
  c.sizes = {100, 200};
  c.n_subsamples = 5;
  c.top_k = 6;
  c.allow_overlap = true;  // 5 x 200 exceeds the 500 records
  c.output_dir = (scratch / "first").string();
  const auto t0 = Clock::now();
  const auto a = run_pipeline(c);
  const double secs = since(t0);
  c.output_dir = (scratch / "second").string();
  const auto b = run_pipeline(c);
  const bool same = slurp(fs::path(a.run_dir) / "report.csv") == slurp(fs::path(b.run_dir) / "report.csv") &&
                    slurp(fs::path(a.run_dir) / "report.json") == slurp(fs::path(b.run_dir) / "report.json");
  bool shaped = a.rows.size() == 2 * 3 * 2;
  for (const auto& row : a.rows) shaped = shaped && row.mses.size() == 5 && std::isfinite(row.mse_std);
  std::fputs(format_report(a).c_str(), stdout);
  return {same && shaped && secs < 900.0,
          fmt("%.0f rows, first run %.1f s, reports byte-identical: ", static_cast<double>(a.rows.size()), secs) +
              (same ? "yes" : "no")};
}

Outcome table1(const fs::path& scratch) {
  MolecularDataset ds;
  Rng rng(31);
  const Eigen::Index n = 600, d = 4;
  ds.features.resize(n, d);
  ds.target.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = rng.uniform() < 0.5 ? -1.0 : 1.0;
    for (Eigen::Index j = 0; j < d; ++j) ds.features(i, j) = 1.5 * s + 0.3 * rng.normal();
    ds.target[i] = s + 0.05 * rng.normal();
    ds.record_ids.push_back("m" + std::to_string(i));
  }
  for (Eigen::Index j = 0; j < d; ++j) ds.feature_names.push_back("D_" + std::to_string(j + 1));
  ExperimentConfig c;
  c.sizes = {100};
  c.output_dir = scratch.string();
  const auto t = run_table1_task(c, {}, &ds);
  bool layout = t.rows.size() == 8;
  const char* metrics[] = {"accuracy", "precision", "recall", "f1"};
  const char* modes[] = {"classical_raw", "qrc_two_body"};
  for (std::size_t i = 0; layout && i < 8; ++i)
    layout = t.rows[i].mode == modes[i / 4] && t.rows[i].metric == metrics[i % 4] && t.rows[i].values.size() == 5;
  const std::string csv = slurp(fs::path(t.run_dir) / "table1.csv");
  layout = layout && std::count(csv.begin(), csv.end(), '\n') == 9;
  const double acc_raw = t.rows[0].mean, acc_qrc = t.rows[4].mean;
  return {layout && acc_raw >= 0.95 && acc_qrc >= 0.95,
          fmt("mean accuracy classical_raw %.3f, qrc_two_body %.3f; 2x4 mean/std layout ", acc_raw, acc_qrc) +
              (layout ? "present" : "missing")};
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "qrc_acceptance";
  fs::remove_all(scratch);
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"quantum dynamics vs dense exponential", dynamics_oracle},
      {"analytic Rabi oscillation", rabi},
      {"Rydberg blockade", blockade},
      {"norm conservation and runtime", norm_conservation},
      {"embedding widths at N=18", embedding_widths},
      {"Kernel SHAP exactness", shap_exactness},
      {"cluster-proportional subsampling", subsampling},
      {"regressor oracles", regressor_oracles},
      {"end-to-end determinism", [&] { return end_to_end(scratch / "pipeline"); }},
      {"median-cut classification table", [&] { return table1(scratch / "table1"); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(scratch);
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
