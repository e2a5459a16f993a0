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

// End-to-end workflow: load, standardize, model tournament, SHAP feature
// selection, cluster-proportional subsampling, embedding, evaluation and
// aggregation, plus the median-cut classification task.
//
// Seeds. Every random component draws from derive_seed(master_seed, label)
// with a fixed label, so changing one component (say the reservoir) never
// moves the plans, splits or models of another:
//   dataset/synthetic                       synthetic data draw
//   tournament/split, tournament/<kind>/<i> tournament split and models
//   shap/background, shap/explain           SHAP background and coalitions
//   subsample/kmeans                        clustering
//   subsample/plan/<size>                   subsample plan per size
//   subsample/split/<size>/<s>              train/test split per subsample
//   model/<mode>/<label>/<size>/<s>         readout model per cell

#pragma once

#include "qrc/analysis.hpp"
#include "qrc/dataset.hpp"
#include "qrc/embedding.hpp"
#include "qrc/feature_select.hpp"
#include "qrc/regressors.hpp"
#include "qrc/reservoir.hpp"
#include "qrc/subsample.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>

namespace qrc {

/// An Error annotated with the workflow stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, ErrorKind kind, const std::string& what)
      : Error(kind, "[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <class Fn>
auto with_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    throw StageError(stage, ErrorKind::parse, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageError(stage, ErrorKind::io, e.what());
  } catch (const std::exception& e) {
    throw StageError(stage, ErrorKind::invalid_argument, e.what());
  }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class FeatureMode { classical_raw, qrc_one_body, qrc_two_body };

inline const char* to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::classical_raw: return "classical_raw";
    case FeatureMode::qrc_one_body: return "qrc_one_body";
    case FeatureMode::qrc_two_body: return "qrc_two_body";
  }
  return "unknown";
}

inline FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "classical_raw") return FeatureMode::classical_raw;
  if (s == "qrc_one_body") return FeatureMode::qrc_one_body;
  if (s == "qrc_two_body") return FeatureMode::qrc_two_body;
  throw Error(ErrorKind::invalid_argument,
              "unknown embedding mode '" + s + "' (expected classical_raw|qrc_one_body|qrc_two_body)");
}

inline const char* to_string(Propagator p) { return p == Propagator::chebyshev ? "chebyshev" : "krylov"; }

inline Propagator propagator_from_string(const std::string& s) {
  if (s == "chebyshev") return Propagator::chebyshev;
  if (s == "krylov") return Propagator::krylov;
  throw Error(ErrorKind::invalid_argument, "unknown propagator '" + s + "' (expected chebyshev|krylov)");
}

inline const char* to_string(Relation r) { return r == Relation::linear ? "linear" : "nonlinear"; }

struct DatasetSource {
  std::string source = "synthetic";  // "synthetic" or "csv"
  std::string path;
  CsvSchema schema;
  std::string tag;  // empty: derived from the source
  std::size_t n_records = 500;
  std::size_t n_features = 8;
  Relation relation = Relation::nonlinear;
  double noise_sd = 0.1;
};

inline constexpr const char* kConfigFormat = "qrc-config/1";

struct ExperimentConfig {
  DatasetSource dataset;
  std::uint64_t master_seed = 2024;
  ReservoirConfig reservoir;  // n_atoms follows the selected feature count
  Propagator propagator = Propagator::chebyshev;
  std::vector<FeatureMode> modes{FeatureMode::classical_raw, FeatureMode::qrc_one_body, FeatureMode::qrc_two_body};
  std::vector<RegressorSpec> models = default_models();
  std::vector<RegressorSpec> candidates = default_candidates();
  double tournament_test_fraction = 0.25;
  std::size_t top_k = 18;
  std::size_t shap_background = 25;
  std::size_t shap_coalitions = 2048;
  double shap_regularization = 1e-8;
  std::size_t explain_limit = 0;  // 0: every training record of the tournament split
  std::vector<std::size_t> sizes{100, 200, 800};
  std::size_t n_subsamples = 5;
  std::size_t n_clusters = 5;
  double test_fraction = 0.25;
  bool allow_overlap = false;  // refill the pool when sizes x count exceed the records
  std::size_t table1_size = 0;  // 0: first entry of `sizes`
  std::vector<FeatureMode> table1_modes{FeatureMode::classical_raw, FeatureMode::qrc_two_body};
  SvmKernel svm_kernel = SvmKernel::rbf;
  double svm_c = 1.0;
  bool write_embeddings = true;
  bool write_models = true;
  std::string output_dir = "runs";
  unsigned workers = 0;

  static std::vector<RegressorSpec> default_models() {
    RegressorSpec gp = RegressorSpec::of(RegressorKind::gp_rbf);
    gp.length_scale = 0.0;  // median heuristic: embedding scales vary with the reservoir
    return {RegressorSpec::of(RegressorKind::random_forest), gp};
  }

  static std::vector<RegressorSpec> default_candidates() {
    return {RegressorSpec::of(RegressorKind::linear), RegressorSpec::of(RegressorKind::knn),
            RegressorSpec::of(RegressorKind::cart), RegressorSpec::of(RegressorKind::random_forest),
            RegressorSpec::of(RegressorKind::gp_rbf)};
  }

  bool needs_embedding() const {
    for (auto m : modes)
      if (m != FeatureMode::classical_raw) return true;
    return false;
  }

  void validate() const {
    const auto fraction_ok = [](double f) { return f > 0.0 && f < 1.0; };
    require(dataset.source == "synthetic" || dataset.source == "csv", ErrorKind::invalid_argument,
            "config: dataset.source must be synthetic or csv");
    require(dataset.source != "csv" || !dataset.path.empty(), ErrorKind::invalid_argument,
            "config: dataset.path required for csv source");
    require(!modes.empty() && !models.empty() && !candidates.empty(), ErrorKind::invalid_argument,
            "config: embedding_modes, models and tournament candidates must be non-empty");
    require(!sizes.empty() && n_subsamples >= 1 && n_clusters >= 1 && top_k >= 1, ErrorKind::invalid_argument,
            "config: sizes, count, n_clusters and top_k must be positive");
    for (auto s : sizes) require(s >= 4, ErrorKind::invalid_argument, "config: subsample sizes must be >= 4");
    require(fraction_ok(test_fraction) && fraction_ok(tournament_test_fraction), ErrorKind::invalid_argument,
            "config: test fractions must lie in (0, 1)");
    require(shap_background >= 1, ErrorKind::invalid_argument, "config: shap.background_size must be >= 1");
    require(svm_c > 0.0, ErrorKind::invalid_argument, "config: table1.svm_c must be > 0");
    require(!table1_modes.empty(), ErrorKind::invalid_argument, "config: table1.modes must be non-empty");
    for (const auto& m : models) m.validate();
    for (const auto& m : candidates) m.validate();
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json modes = json::array();
  for (auto m : c.modes) modes.push_back(to_string(m));
  json t1modes = json::array();
  for (auto m : c.table1_modes) t1modes.push_back(to_string(m));
  json models = json::array();
  for (const auto& m : c.models) models.push_back(to_json(m));
  json cands = json::array();
  for (const auto& m : c.candidates) cands.push_back(to_json(m));
  json reservoir = to_json(c.reservoir);
  reservoir.erase("n_atoms");
  reservoir["propagator"] = to_string(c.propagator);
  return json{
      {"format", kConfigFormat},
      {"dataset",
       {{"source", c.dataset.source},
        {"path", c.dataset.path},
        {"id_column", c.dataset.schema.id_column},
        {"target_column", c.dataset.schema.target_column},
        {"feature_prefix", c.dataset.schema.feature_prefix},
        {"tag", c.dataset.tag},
        {"synthetic",
         {{"n_records", c.dataset.n_records},
          {"n_features", c.dataset.n_features},
          {"relation", to_string(c.dataset.relation)},
          {"noise_sd", c.dataset.noise_sd}}}}},
      {"master_seed", c.master_seed},
      {"reservoir", reservoir},
      {"embedding_modes", modes},
      {"models", models},
      {"tournament", {{"candidates", cands}, {"test_fraction", c.tournament_test_fraction}}},
      {"shap",
       {{"top_k", c.top_k},
        {"background_size", c.shap_background},
        {"n_coalitions", c.shap_coalitions},
        {"regularization", c.shap_regularization},
        {"explain_limit", c.explain_limit}}},
      {"subsample",
       {{"sizes", c.sizes},
        {"count", c.n_subsamples},
        {"n_clusters", c.n_clusters},
        {"test_fraction", c.test_fraction},
        {"allow_overlap", c.allow_overlap}}},
      {"table1",
       {{"subsample_size", c.table1_size},
        {"modes", t1modes},
        {"svm_kernel", to_string(c.svm_kernel)},
        {"svm_c", c.svm_c}}},
      {"artifacts", {{"write_embeddings", c.write_embeddings}, {"write_models", c.write_models}}},
      {"output_dir", c.output_dir},
      {"workers", c.workers}};
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  require(j.is_object(), ErrorKind::parse, "config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok |= it.key() == a;
    require(ok, ErrorKind::parse, "config: unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace detail

/// Reads a "qrc-config/1" document. Missing keys keep their defaults;
/// unknown keys are rejected so that typos do not go unnoticed.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"format", "dataset", "master_seed", "reservoir", "embedding_modes", "models",
                               "tournament", "shap", "subsample", "table1", "artifacts", "output_dir", "workers"},
                              "top level");
  require(j.value("format", std::string(kConfigFormat)) == kConfigFormat, ErrorKind::parse,
          "config: unsupported format tag (expected " + std::string(kConfigFormat) + ")");
  ExperimentConfig c;
  const nlohmann::json empty = nlohmann::json::object();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::reject_unknown_keys(d, {"source", "path", "id_column", "target_column", "feature_prefix", "tag", "synthetic"},
                                "dataset");
    c.dataset.source = d.value("source", c.dataset.source);
    c.dataset.path = d.value("path", c.dataset.path);
    c.dataset.schema.id_column = d.value("id_column", c.dataset.schema.id_column);
    c.dataset.schema.target_column = d.value("target_column", c.dataset.schema.target_column);
    c.dataset.schema.feature_prefix = d.value("feature_prefix", c.dataset.schema.feature_prefix);
    c.dataset.tag = d.value("tag", c.dataset.tag);
    const auto& s = d.contains("synthetic") ? d.at("synthetic") : empty;
    detail::reject_unknown_keys(s, {"n_records", "n_features", "relation", "noise_sd"}, "dataset.synthetic");
    c.dataset.n_records = s.value("n_records", c.dataset.n_records);
    c.dataset.n_features = s.value("n_features", c.dataset.n_features);
    c.dataset.relation = relation_from_string(s.value("relation", std::string(to_string(c.dataset.relation))));
    c.dataset.noise_sd = s.value("noise_sd", c.dataset.noise_sd);
  }
  c.master_seed = j.value("master_seed", c.master_seed);
  if (j.contains("reservoir")) {
    auto r = j.at("reservoir");
    c.propagator = propagator_from_string(r.value("propagator", std::string(to_string(c.propagator))));
    r.erase("propagator");
    detail::reject_unknown_keys(r,
                                {"n_atoms", "positions_um", "chain_spacing_um", "rabi_amplitude", "global_detuning",
                                 "local_detuning_amplitude", "interaction_coefficient", "total_time_us",
                                 "snapshot_step_us"},
                                "reservoir");
    c.reservoir = reservoir_config_from_json(r);
  }
  if (j.contains("embedding_modes")) {
    c.modes.clear();
    for (const auto& m : j.at("embedding_modes")) c.modes.push_back(feature_mode_from_string(m.get<std::string>()));
  }
  if (j.contains("models")) {
    c.models.clear();
    for (const auto& m : j.at("models")) c.models.push_back(regressor_spec_from_json(m));
  }
  if (j.contains("tournament")) {
    const auto& t = j.at("tournament");
    detail::reject_unknown_keys(t, {"candidates", "test_fraction"}, "tournament");
    if (t.contains("candidates")) {
      c.candidates.clear();
      for (const auto& m : t.at("candidates")) c.candidates.push_back(regressor_spec_from_json(m));
    }
    c.tournament_test_fraction = t.value("test_fraction", c.tournament_test_fraction);
  }
  if (j.contains("shap")) {
    const auto& s = j.at("shap");
    detail::reject_unknown_keys(s, {"top_k", "background_size", "n_coalitions", "regularization", "explain_limit"}, "shap");
    c.top_k = s.value("top_k", c.top_k);
    c.shap_background = s.value("background_size", c.shap_background);
    c.shap_coalitions = s.value("n_coalitions", c.shap_coalitions);
    c.shap_regularization = s.value("regularization", c.shap_regularization);
    c.explain_limit = s.value("explain_limit", c.explain_limit);
  }
  if (j.contains("subsample")) {
    const auto& s = j.at("subsample");
    detail::reject_unknown_keys(s, {"sizes", "count", "n_clusters", "test_fraction", "allow_overlap"}, "subsample");
    c.sizes = s.value("sizes", c.sizes);
    c.n_subsamples = s.value("count", c.n_subsamples);
    c.n_clusters = s.value("n_clusters", c.n_clusters);
    c.test_fraction = s.value("test_fraction", c.test_fraction);
    c.allow_overlap = s.value("allow_overlap", c.allow_overlap);
  }
  if (j.contains("table1")) {
    const auto& t = j.at("table1");
    detail::reject_unknown_keys(t, {"subsample_size", "modes", "svm_kernel", "svm_c"}, "table1");
    c.table1_size = t.value("subsample_size", c.table1_size);
    if (t.contains("modes")) {
      c.table1_modes.clear();
      for (const auto& m : t.at("modes")) c.table1_modes.push_back(feature_mode_from_string(m.get<std::string>()));
    }
    c.svm_kernel = svm_kernel_from_string(t.value("svm_kernel", std::string(to_string(c.svm_kernel))));
    c.svm_c = t.value("svm_c", c.svm_c);
  }
  if (j.contains("artifacts")) {
    const auto& a = j.at("artifacts");
    detail::reject_unknown_keys(a, {"write_embeddings", "write_models"}, "artifacts");
    c.write_embeddings = a.value("write_embeddings", c.write_embeddings);
    c.write_models = a.value("write_models", c.write_models);
  }
  c.output_dir = j.value("output_dir", c.output_dir);
  c.workers = j.value("workers", c.workers);
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  return with_stage("config", [&] {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "file-not-found: " + path);
    return config_from_json(nlohmann::json::parse(in));
  });
}

/// Hash of the result-relevant configuration (output_dir and workers excluded).
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  j.erase("workers");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

inline std::string run_directory(const ExperimentConfig& c) {
  return (std::filesystem::path(c.output_dir) / ("run-" + config_hash(c))).string();
}

// ---------------------------------------------------------------------------
// Instrumentation
// ---------------------------------------------------------------------------

/// Reported whenever a data-dependent transform is fitted. `rows` are
/// positions in the loaded dataset.
struct FitEvent {
  std::string what;  // global_standardization | standardization | qrc_scaler
  std::size_t subsample_size = 0;
  std::size_t subsample = 0;
  IndexList rows;
  IndexList held_out;  // test rows of the same subsample
};

struct PipelineHooks {
  std::function<void(const FitEvent&)> on_fit;
};

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline std::string dataset_tag(const ExperimentConfig& c) {
  if (!c.dataset.tag.empty()) return c.dataset.tag;
  if (c.dataset.source == "csv") return std::filesystem::path(c.dataset.path).stem().string();
  return std::string("synthetic-") + to_string(c.dataset.relation);
}

inline MolecularDataset load_experiment_dataset(const ExperimentConfig& c, LoadReport* report = nullptr) {
  return with_stage("load", [&] {
    if (c.dataset.source == "csv") return load_csv(c.dataset.path, c.dataset.schema, report);
    return generate_synthetic(c.dataset.n_records, c.dataset.n_features, c.dataset.relation, c.dataset.noise_sd,
                              derive_seed(c.master_seed, "dataset/synthetic"));
  });
}

/// Display labels for a model list; repeated kinds get an index suffix.
inline std::vector<std::string> model_labels(const std::vector<RegressorSpec>& specs) {
  std::map<RegressorKind, int> count;
  for (const auto& s : specs) ++count[s.kind];
  std::vector<std::string> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::string l = to_string(specs[i].kind);
    if (count[specs[i].kind] > 1) l += "_" + std::to_string(i);
    out.push_back(l);
  }
  return out;
}

struct TournamentResult {
  std::vector<RegressorSpec> specs;
  std::vector<std::string> labels;
  std::vector<double> mses;
  std::size_t winner = 0;
  SplitIndices split;
  std::vector<TrainedModel> models;
};

/// Trains every candidate on one split of the standardized data and keeps the
/// lowest test MSE. Equal MSEs go to the earlier candidate.
inline TournamentResult run_candidate_tournament(const ExperimentConfig& c, const MolecularDataset& standardized) {
  return with_stage("tournament", [&] {
    TournamentResult t;
    t.specs = c.candidates;
    t.labels = model_labels(c.candidates);
    t.split = split_indices(standardized.n_records(), c.tournament_test_fraction, nullptr,
                            derive_seed(c.master_seed, "tournament/split"));
    const auto tr = standardized.subset(t.split.train);
    const auto te = standardized.subset(t.split.test);
    t.models.resize(t.specs.size());
    t.mses.resize(t.specs.size());
    for (std::size_t i = 0; i < t.specs.size(); ++i) {
      const auto seed = derive_seed(c.master_seed, "tournament/" + t.labels[i] + "/" + std::to_string(i));
      t.models[i] = train(t.specs[i], tr.features, tr.target, seed, resolve_workers(c.workers));
      t.mses[i] = mse(predict(t.models[i], te.features), te.target);
      if (t.mses[i] < t.mses[t.winner]) t.winner = i;
    }
    return t;
  });
}

struct FeatureSelection {
  FeatureRanking ranking;  // empty when every feature is kept without attribution
  IndexList selected;      // ascending
  std::size_t explained = 0;
};

/// Kernel SHAP on the tournament winner over its training rows, then top-k.
/// When top_k covers every feature, attribution is skipped.
inline FeatureSelection select_features(const ExperimentConfig& c, const MolecularDataset& standardized,
                                        const TournamentResult& t) {
  return with_stage("select-features", [&] {
    FeatureSelection fs;
    const std::size_t d = standardized.n_features();
    if (c.top_k >= d) {
      fs.selected.resize(d);
      std::iota(fs.selected.begin(), fs.selected.end(), Index{0});
      return fs;
    }
    const Matrix train_x = take_rows(standardized.features, t.split.train);
    ShapConfig shap;
    std::tie(shap.background, shap.background_weights) =
        kmeans_background(train_x, c.shap_background, derive_seed(c.master_seed, "shap/background"));
    shap.n_coalitions = std::max(c.shap_coalitions, 2 * d + 2);
    shap.regularization = c.shap_regularization;
    shap.seed = derive_seed(c.master_seed, "shap/explain");
    const Eigen::Index rows = c.explain_limit > 0 ? std::min<Eigen::Index>(static_cast<Eigen::Index>(c.explain_limit), train_x.rows())
                                                  : train_x.rows();
    const auto attributions =
        explain_rows(as_batch_model(t.models[t.winner]), train_x.topRows(rows), shap, resolve_workers(c.workers));
    fs.explained = static_cast<std::size_t>(rows);
    fs.ranking = rank_features(attributions);
    fs.selected = select_top_k(fs.ranking, c.top_k);
    return fs;
  });
}

struct SubsampleDesign {
  KMeansResult clusters;
  std::map<std::size_t, SubsamplePlan> plans;  // by subsample size
};

/// Clusters the standardized features (target excluded) and draws one plan per size.
inline SubsampleDesign plan_subsamples(const ExperimentConfig& c, const MolecularDataset& standardized,
                                       const std::vector<std::size_t>& sizes) {
  return with_stage("subsample", [&] {
    SubsampleDesign d;
    const std::size_t k = std::min(c.n_clusters, standardized.n_records());
    d.clusters = kmeans(standardized.features, k, derive_seed(c.master_seed, "subsample/kmeans"));
    for (std::size_t size : sizes) {
      if (d.plans.count(size)) continue;
      d.plans.emplace(size, make_subsamples(d.clusters.assignments, c.n_subsamples, size,
                                            derive_seed(c.master_seed, "subsample/plan/" + std::to_string(size)),
                                            c.allow_overlap));
    }
    return d;
  });
}

/// Everything shared by the regression and classification tasks.
struct Preparation {
  MolecularDataset raw;
  LoadReport load_report;
  StandardizationParams global_std;
  MolecularDataset standardized;
  TournamentResult tournament;
  FeatureSelection selection;
  SubsampleDesign design;
  std::string run_dir;
  std::map<std::string, double> seconds;  // stage wall times
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot write " + p.string());
  out << text;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::vector<std::string> ids_of(const MolecularDataset& ds, const IndexList& rows) {
  std::vector<std::string> out;
  for (Index r : rows) out.push_back(ds.record_ids[r]);
  return out;
}

}  // namespace detail

/// Runs load, standardization, tournament, feature selection and subsample
/// planning, writing their artifacts under the run directory.
inline Preparation prepare(const ExperimentConfig& config, const std::vector<std::size_t>& sizes,
                           const PipelineHooks& hooks = {}, const MolecularDataset* dataset = nullptr) {
  with_stage("config", [&] { config.validate(); });
  Preparation p;
  p.run_dir = run_directory(config);
  const std::filesystem::path dir(p.run_dir);
  with_stage("report", [&] {
    std::filesystem::create_directories(dir);
    detail::write_json(dir / "config.json", to_json(config));
  });

  detail::Stopwatch sw;
  p.raw = dataset ? with_stage("load", [&] { dataset->validate(); return *dataset; })
                  : load_experiment_dataset(config, &p.load_report);
  p.seconds["load"] = sw.seconds();

  with_stage("standardize", [&] {
    std::tie(p.standardized, p.global_std) = standardize(p.raw);
    if (hooks.on_fit) {
      FitEvent e{"global_standardization", 0, 0, {}, {}};
      e.rows.resize(p.raw.n_records());
      std::iota(e.rows.begin(), e.rows.end(), Index{0});
      hooks.on_fit(e);
    }
    detail::write_json(dir / "standardization.json", to_json(p.global_std));
  });

  sw = {};
  p.tournament = run_candidate_tournament(config, p.standardized);
  p.seconds["tournament"] = sw.seconds();
  with_stage("tournament", [&] {
    std::string csv = "model,mse,winner\n";
    for (std::size_t i = 0; i < p.tournament.specs.size(); ++i)
      csv += p.tournament.labels[i] + "," + format_double(p.tournament.mses[i]) + "," +
             (i == p.tournament.winner ? "1" : "0") + "\n";
    detail::write_text(dir / "tournament.csv", csv);
  });

  sw = {};
  p.selection = select_features(config, p.standardized, p.tournament);
  p.seconds["select-features"] = sw.seconds();
  with_stage("select-features", [&] {
    if (!p.selection.ranking.order.empty())
      write_ranking_csv(p.selection.ranking, p.standardized.feature_names, (dir / "shap_ranking.csv").string());
    nlohmann::json names = nlohmann::json::array();
    for (Index i : p.selection.selected) names.push_back(p.standardized.feature_names[i]);
    detail::write_json(dir / "selected_features.json",
                       {{"attribution_method", p.selection.ranking.order.empty() ? "none" : "kernel_shap"},
                        {"explained_records", p.selection.explained},
                        {"tournament_winner", p.tournament.labels[p.tournament.winner]},
                        {"selected_indices", p.selection.selected},
                        {"selected_features", names}});
  });

  sw = {};
  const std::size_t n = p.raw.n_records();
  for (std::size_t s : sizes) {
    with_stage("subsample", [&] {
      require(s <= n, ErrorKind::infeasible,
              "subsample size " + std::to_string(s) + " exceeds the " + std::to_string(n) + " available records");
    });
  }
  p.design = plan_subsamples(config, p.standardized, sizes);
  p.seconds["subsample"] = sw.seconds();
  with_stage("subsample", [&] {
    detail::write_json(dir / "clusters.json", {{"k", p.design.clusters.model.centroids.rows()},
                                               {"inertia", p.design.clusters.model.inertia},
                                               {"iterations", p.design.clusters.model.iterations},
                                               {"assignments", p.design.clusters.assignments}});
    for (const auto& [size, plan] : p.design.plans)
      detail::write_json(dir / "plans" / ("plan_size" + std::to_string(size) + ".json"), plan_to_json(plan, p.raw.record_ids));
  });
  return p;
}

/// Train/test features of one subsample, with every transform fitted on train only.
struct SubsampleFeatures {
  SplitIndices split;
  StandardizationParams standardization;
  Matrix classical_train, classical_test;
  Vector y_train, y_test;
  FeatureScaler scaler;
  EmbeddingMatrix two_body_train, two_body_test;  // filled when a qrc mode is needed
  ReservoirConfig reservoir;
};

inline SubsampleFeatures build_subsample_features(const ExperimentConfig& c, const Preparation& p, std::size_t size,
                                                  std::size_t s, bool need_embedding, const PipelineHooks& hooks,
                                                  std::mutex& hook_mutex) {
  SubsampleFeatures f;
  const SubsamplePlan& plan = p.design.plans.at(size);
  const IndexList& members = plan.subsets.at(s);
  f.split = with_stage("subsample", [&] {
    return stratified_split(members, p.design.clusters.assignments, c.test_fraction,
                            derive_seed(c.master_seed, "subsample/split/" + std::to_string(size) + "/" + std::to_string(s)));
  });
  const MolecularDataset selected = p.raw.select_features(p.selection.selected);
  const MolecularDataset train_raw = selected.subset(f.split.train);
  const MolecularDataset test_raw = selected.subset(f.split.test);
  const auto notify = [&](const char* what) {
    if (!hooks.on_fit) return;
    std::lock_guard<std::mutex> lock(hook_mutex);
    hooks.on_fit(FitEvent{what, size, s, f.split.train, f.split.test});
  };
  with_stage("standardize", [&] {
    f.standardization = fit_standardization(train_raw);
    notify("standardization");
    const auto tr = apply_standardization(f.standardization, train_raw);
    const auto te = apply_standardization(f.standardization, test_raw);
    f.classical_train = tr.features;
    f.classical_test = te.features;
    f.y_train = tr.target;
    f.y_test = te.target;
  });
  if (!need_embedding) return f;
  with_stage("embed", [&] {
    f.scaler = fit_scaler(f.classical_train);
    notify("qrc_scaler");
    f.reservoir = c.reservoir;
    f.reservoir.n_atoms = p.selection.selected.size();
    EvolveOptions opt;
    opt.method = c.propagator;
    MolecularDataset tr, te;
    tr.record_ids = detail::ids_of(p.raw, f.split.train);
    tr.features = f.classical_train;
    tr.target = f.y_train;
    tr.feature_names = selected.feature_names;
    te.record_ids = detail::ids_of(p.raw, f.split.test);
    te.features = f.classical_test;
    te.target = f.y_test;
    te.feature_names = selected.feature_names;
    f.two_body_train = embed_dataset(f.reservoir, f.scaler, tr, EmbeddingMode::two_body, 1, opt);
    f.two_body_test = embed_dataset(f.reservoir, f.scaler, te, EmbeddingMode::two_body, 1, opt);
  });
  return f;
}

inline std::pair<const Matrix*, const Matrix*> mode_matrices(const SubsampleFeatures& f, FeatureMode mode,
                                                             Matrix& one_train, Matrix& one_test) {
  switch (mode) {
    case FeatureMode::classical_raw: return {&f.classical_train, &f.classical_test};
    case FeatureMode::qrc_two_body: return {&f.two_body_train.values, &f.two_body_test.values};
    case FeatureMode::qrc_one_body:
      one_train = one_body_part(f.two_body_train).values;
      one_test = one_body_part(f.two_body_test).values;
      return {&one_train, &one_test};
  }
  return {nullptr, nullptr};
}

// ---------------------------------------------------------------------------
// Regression report
// ---------------------------------------------------------------------------

/// Mean and population standard deviation.
inline std::pair<double, double> aggregate(const std::vector<double>& values) {
  require(!values.empty(), ErrorKind::invalid_argument, "aggregate: empty list");
  const double mean = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

struct ReportRow {
  std::string dataset_tag;
  std::string embedding_mode;
  std::string model_kind;
  std::size_t subsample_size = 0;
  std::size_t n_subsamples = 0;
  double mse_mean = 0.0;
  double mse_std = 0.0;
  std::vector<double> mses;
};

struct EvaluationReport {
  std::string dataset_tag;
  std::uint64_t master_seed = 0;
  std::string config_hash;
  std::string run_dir;
  std::string tournament_winner;
  std::vector<std::string> selected_features;
  std::vector<std::string> warnings;
  std::vector<ReportRow> rows;
  std::map<std::string, double> seconds;  // wall time per stage, kept out of the report files
};

inline std::string report_csv(const EvaluationReport& r) {
  std::string out =
      "dataset_tag,embedding_mode,model_kind,subsample_size,n_subsamples,mse_mean,mse_std,per_subsample_mse\n";
  for (const auto& row : r.rows) {
    std::string list;
    for (std::size_t i = 0; i < row.mses.size(); ++i) list += (i ? ";" : "") + format_double(row.mses[i]);
    out += csv_escape(row.dataset_tag) + "," + row.embedding_mode + "," + row.model_kind + "," +
           std::to_string(row.subsample_size) + "," + std::to_string(row.n_subsamples) + "," +
           format_double(row.mse_mean) + "," + format_double(row.mse_std) + "," + list + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"dataset_tag", row.dataset_tag},
                    {"embedding_mode", row.embedding_mode},
                    {"model_kind", row.model_kind},
                    {"subsample_size", row.subsample_size},
                    {"n_subsamples", row.n_subsamples},
                    {"mse_mean", row.mse_mean},
                    {"mse_std", row.mse_std},
                    {"per_subsample_mse", row.mses}});
  }
  return {{"format", "qrc-report/1"},
          {"dataset_tag", r.dataset_tag},
          {"master_seed", r.master_seed},
          {"config_hash", r.config_hash},
          {"attribution_method", "kernel_shap"},
          {"std_convention", "population"},
          {"tournament_winner", r.tournament_winner},
          {"selected_features", r.selected_features},
          {"notes",
           {"tournament and feature attribution are fitted on the full dataset before subsampling, so the "
            "selected features carry information from every subsample's test rows"}},
          {"warnings", r.warnings},
          {"rows", rows}};
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
  require(j.value("format", "") == "qrc-report/1", ErrorKind::parse, "report: unsupported format tag");
  EvaluationReport r;
  r.dataset_tag = j.value("dataset_tag", "");
  r.master_seed = j.value("master_seed", std::uint64_t{0});
  r.config_hash = j.value("config_hash", "");
  r.tournament_winner = j.value("tournament_winner", "");
  r.selected_features = j.value("selected_features", std::vector<std::string>{});
  r.warnings = j.value("warnings", std::vector<std::string>{});
  for (const auto& row : j.at("rows")) {
    ReportRow x;
    x.dataset_tag = row.at("dataset_tag");
    x.embedding_mode = row.at("embedding_mode");
    x.model_kind = row.at("model_kind");
    x.subsample_size = row.at("subsample_size");
    x.n_subsamples = row.at("n_subsamples");
    x.mse_mean = row.at("mse_mean");
    x.mse_std = row.at("mse_std");
    x.mses = row.at("per_subsample_mse").get<std::vector<double>>();
    r.rows.push_back(std::move(x));
  }
  return r;
}

/// Human-readable table: mean +- std per (size, mode, model).
inline std::string format_report(const EvaluationReport& r) {
  std::string out = "dataset " + r.dataset_tag + ", seed " + std::to_string(r.master_seed) + ", tournament winner " +
                    r.tournament_winner + "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-14s %-14s %12s %12s\n", "size", "mode", "model", "mse_mean", "mse_std");
  out += line;
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-6zu %-14s %-14s %12.6g %12.6g\n", row.subsample_size, row.embedding_mode.c_str(),
                  row.model_kind.c_str(), row.mse_mean, row.mse_std);
    out += line;
  }
  return out;
}

/// The full regression workflow. Artifacts land in run_directory(config);
/// report.csv and report.json depend only on the configuration (wall times
/// go to timings.json).
inline EvaluationReport run_pipeline(const ExperimentConfig& config, const PipelineHooks& hooks = {},
                                     const MolecularDataset* dataset = nullptr) {
  Preparation p = prepare(config, config.sizes, hooks, dataset);
  const std::filesystem::path dir(p.run_dir);
  const auto labels = model_labels(config.models);
  const std::size_t n_modes = config.modes.size();
  const std::size_t n_models = config.models.size();

  struct Job {
    std::size_t size, s;
  };
  std::vector<Job> jobs;
  for (std::size_t size : config.sizes)
    for (std::size_t s = 0; s < config.n_subsamples; ++s) jobs.push_back({size, s});
  std::vector<std::vector<double>> results(jobs.size());
  std::mutex hook_mutex;

  detail::Stopwatch sw;
  parallel_for(jobs.size(), resolve_workers(config.workers), [&](std::size_t ji) {
    const auto [size, s] = jobs[ji];
    const auto f = build_subsample_features(config, p, size, s, config.needs_embedding(), hooks, hook_mutex);
    const auto sub_dir = dir / "subsamples" / ("size" + std::to_string(size)) / ("sub" + std::to_string(s));
    with_stage("report", [&] {
      detail::write_json(sub_dir / "split.json", {{"train", detail::ids_of(p.raw, f.split.train)},
                                                  {"test", detail::ids_of(p.raw, f.split.test)},
                                                  {"warnings", f.split.warnings}});
      detail::write_json(sub_dir / "standardization.json", to_json(f.standardization));
      if (config.needs_embedding()) {
        detail::write_json(sub_dir / "scaler.json", to_json(f.scaler));
        if (config.write_embeddings) {
          write_embedding_csv(f.two_body_train, (sub_dir / "embedding_train.csv").string());
          write_embedding_csv(f.two_body_test, (sub_dir / "embedding_test.csv").string());
          write_embedding_sidecar(f.two_body_train, f.reservoir, f.scaler, (sub_dir / "embedding.json").string());
        }
      }
    });
    std::vector<double>& out = results[ji];
    out.assign(n_modes * n_models, 0.0);
    for (std::size_t mi = 0; mi < n_modes; ++mi) {
      Matrix one_tr, one_te;
      const auto [xtr, xte] = mode_matrices(f, config.modes[mi], one_tr, one_te);
      for (std::size_t k = 0; k < n_models; ++k) {
        with_stage("evaluate", [&] {
          const std::string tag = std::string(to_string(config.modes[mi])) + "/" + labels[k] + "/" +
                                  std::to_string(size) + "/" + std::to_string(s);
          const auto model = train(config.models[k], *xtr, f.y_train, derive_seed(config.master_seed, "model/" + tag), 1);
          out[mi * n_models + k] = mse(predict(model, *xte), f.y_test);
          if (config.write_models) {
            detail::write_json(sub_dir / "models" / (std::string(to_string(config.modes[mi])) + "__" + labels[k] + ".json"),
                               to_json(model));
          }
        });
      }
    }
  });
  p.seconds["evaluate"] = sw.seconds();

  EvaluationReport r;
  r.dataset_tag = dataset_tag(config);
  r.master_seed = config.master_seed;
  r.config_hash = config_hash(config);
  r.run_dir = p.run_dir;
  r.tournament_winner = p.tournament.labels[p.tournament.winner];
  for (Index i : p.selection.selected) r.selected_features.push_back(p.standardized.feature_names[i]);
  for (const auto& [size, plan] : p.design.plans)
    for (const auto& w : plan.warnings) r.warnings.push_back("size " + std::to_string(size) + ": " + w);
  with_stage("aggregate", [&] {
    for (std::size_t size : config.sizes) {
      for (std::size_t mi = 0; mi < n_modes; ++mi) {
        for (std::size_t k = 0; k < n_models; ++k) {
          ReportRow row;
          row.dataset_tag = r.dataset_tag;
          row.embedding_mode = to_string(config.modes[mi]);
          row.model_kind = labels[k];
          row.subsample_size = size;
          row.n_subsamples = config.n_subsamples;
          for (std::size_t ji = 0; ji < jobs.size(); ++ji)
            if (jobs[ji].size == size) row.mses.push_back(results[ji][mi * n_models + k]);
          std::tie(row.mse_mean, row.mse_std) = aggregate(row.mses);
          r.rows.push_back(std::move(row));
        }
      }
    }
  });
  r.seconds = p.seconds;
  with_stage("report", [&] {
    detail::write_text(dir / "report.csv", report_csv(r));
    detail::write_json(dir / "report.json", to_json(r));
    detail::write_json(dir / "timings.json", r.seconds);
  });
  return r;
}

// ---------------------------------------------------------------------------
// Median-cut classification
// ---------------------------------------------------------------------------

inline constexpr std::array<const char*, 4> kMetricNames{"accuracy", "precision", "recall", "f1"};

struct Table1Row {
  std::string mode;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> values;  // per subsample
};

struct Table1Report {
  std::string dataset_tag;
  std::size_t subsample_size = 0;
  std::size_t n_subsamples = 0;
  std::string run_dir;
  std::vector<Table1Row> rows;  // mode-major, metrics in accuracy/precision/recall/f1 order
};

inline std::string table1_csv(const Table1Report& t) {
  std::string out = "embedding_mode,metric,mean,std\n";
  for (const auto& r : t.rows) out += r.mode + "," + r.metric + "," + format_double(r.mean) + "," + format_double(r.std) + "\n";
  return out;
}

inline nlohmann::json to_json(const Table1Report& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"embedding_mode", r.mode}, {"metric", r.metric}, {"mean", r.mean}, {"std", r.std}, {"values", r.values}});
  return {{"format", "qrc-table1/1"},
          {"dataset_tag", t.dataset_tag},
          {"subsample_size", t.subsample_size},
          {"n_subsamples", t.n_subsamples},
          {"projection", "pca"},
          {"std_convention", "population"},
          {"rows", rows}};
}

/// Per subsample and mode: 2D PCA fitted on train, labels from the train
/// median, SVM on the projected train rows, metrics on the test rows.
inline Table1Report run_table1_task(const ExperimentConfig& config, const PipelineHooks& hooks = {},
                                    const MolecularDataset* dataset = nullptr) {
  const std::size_t size = config.table1_size ? config.table1_size : config.sizes.front();
  Preparation p = prepare(config, {size}, hooks, dataset);
  bool need_embedding = false;
  for (auto m : config.table1_modes) need_embedding |= m != FeatureMode::classical_raw;
  const std::size_t n_modes = config.table1_modes.size();
  std::vector<std::vector<ClassificationMetrics>> results(config.n_subsamples);
  std::mutex hook_mutex;
  parallel_for(config.n_subsamples, resolve_workers(config.workers), [&](std::size_t s) {
    const auto f = build_subsample_features(config, p, size, s, need_embedding, hooks, hook_mutex);
    results[s].resize(n_modes);
    for (std::size_t mi = 0; mi < n_modes; ++mi) {
      with_stage("table1", [&] {
        Matrix one_tr, one_te;
        const auto [xtr, xte] = mode_matrices(f, config.table1_modes[mi], one_tr, one_te);
        const auto pca = pca_fit(*xtr, std::min<std::size_t>(2, static_cast<std::size_t>(xtr->cols())));
        const Matrix ptr = pca_transform(pca, *xtr);
        const Matrix pte = pca_transform(pca, *xte);
        const double threshold = median_of(std::vector<double>(f.y_train.data(), f.y_train.data() + f.y_train.size()));
        const auto ltr = binarize(f.y_train, threshold);
        const auto lte = binarize(f.y_test, threshold);
        SvmOptions opt;
        opt.kernel = config.svm_kernel;
        opt.c = config.svm_c;
        const auto svm = svm_train(ptr, ltr, opt);
        results[s][mi] = classification_metrics(svm.predict(pte), lte.labels);
      });
    }
  });

  Table1Report t;
  t.dataset_tag = dataset_tag(config);
  t.subsample_size = size;
  t.n_subsamples = config.n_subsamples;
  t.run_dir = p.run_dir;
  for (std::size_t mi = 0; mi < n_modes; ++mi) {
    for (const char* metric : kMetricNames) {
      Table1Row row;
      row.mode = to_string(config.table1_modes[mi]);
      row.metric = metric;
      for (const auto& per : results) {
        const auto& m = per[mi];
        const std::string name = metric;
        row.values.push_back(name == "accuracy" ? m.accuracy : name == "precision" ? m.precision : name == "recall" ? m.recall : m.f1);
      }
      std::tie(row.mean, row.std) = aggregate(row.values);
      t.rows.push_back(std::move(row));
    }
  }
  with_stage("report", [&] {
    const std::filesystem::path dir(p.run_dir);
    detail::write_text(dir / "table1.csv", table1_csv(t));
    detail::write_json(dir / "table1.json", to_json(t));
  });
  return t;
}

}  // namespace qrc
