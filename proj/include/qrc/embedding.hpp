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

#pragma once

#include "qrc/dataset.hpp"
#include "qrc/reservoir.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace qrc {

/// Per-feature min/max learned on training rows; maps features onto [-1, 1].
struct FeatureScaler {
  std::vector<double> mins;
  std::vector<double> maxs;
  std::vector<bool> degenerate;

  std::size_t arity() const { return mins.size(); }
};

inline FeatureScaler fit_scaler(const Matrix& train) {
  require(train.rows() >= 1 && train.cols() >= 1, ErrorKind::invalid_argument, "fit_scaler: empty input");
  FeatureScaler s;
  for (Eigen::Index c = 0; c < train.cols(); ++c) {
    s.mins.push_back(train.col(c).minCoeff());
    s.maxs.push_back(train.col(c).maxCoeff());
    s.degenerate.push_back(s.mins.back() == s.maxs.back());
  }
  return s;
}

/// f_j = clamp(2 (x_j - min_j) / (max_j - min_j) - 1, -1, 1); degenerate features map to 0.
inline DetuningPattern encode(const FeatureScaler& scaler, const Eigen::Ref<const Eigen::RowVectorXd>& record) {
  require(static_cast<std::size_t>(record.size()) == scaler.arity(), ErrorKind::dimension_mismatch,
          "encode: record length " + std::to_string(record.size()) + " != scaler arity " +
              std::to_string(scaler.arity()));
  DetuningPattern p;
  p.f.resize(scaler.arity());
  for (std::size_t j = 0; j < scaler.arity(); ++j) {
    if (scaler.degenerate[j]) {
      p.f[j] = 0.0;
      continue;
    }
    const double x = record[static_cast<Eigen::Index>(j)];
    const double f = 2.0 * (x - scaler.mins[j]) / (scaler.maxs[j] - scaler.mins[j]) - 1.0;
    p.f[j] = std::clamp(f, -1.0, 1.0);
  }
  return p;
}

enum class EmbeddingMode { one_body, two_body };

inline const char* to_string(EmbeddingMode mode) { return mode == EmbeddingMode::one_body ? "one_body" : "two_body"; }

inline EmbeddingMode embedding_mode_from_string(const std::string& s) {
  if (s == "one_body") return EmbeddingMode::one_body;
  if (s == "two_body") return EmbeddingMode::two_body;
  throw Error(ErrorKind::invalid_argument, "unknown embedding mode '" + s + "' (expected one_body|two_body)");
}

struct ColumnLabel {
  enum class Kind { z, zz } kind = Kind::z;
  std::size_t i = 0;
  std::size_t j = 0;  // unused for Z
  double time_us = 0.0;

  /// "Z_3@0.4" or "ZZ_3_7@0.4".
  std::string str() const {
    char t[32];
    std::snprintf(t, sizeof t, "%.10g", time_us);
    if (kind == Kind::z) return "Z_" + std::to_string(i) + "@" + t;
    return "ZZ_" + std::to_string(i) + "_" + std::to_string(j) + "@" + t;
  }
};

/// Embedding width: N*T for one_body, plus N(N-1)/2 * T for two_body.
inline std::size_t embedding_width(std::size_t n_atoms, std::size_t n_snapshots, EmbeddingMode mode) {
  const std::size_t one = n_atoms * n_snapshots;
  return mode == EmbeddingMode::one_body ? one : one + pair_count(n_atoms) * n_snapshots;
}

/// Column order: for each atom i, every snapshot of <Z_i>; then (two_body)
/// for each pair (i, j) in lexicographic order, every snapshot of <Z_i Z_j>.
inline std::vector<ColumnLabel> embedding_labels(const ReservoirConfig& config, EmbeddingMode mode) {
  const auto times = config.snapshot_times();
  const std::size_t n = config.n_atoms;
  std::vector<ColumnLabel> labels;
  labels.reserve(embedding_width(n, times.size(), mode));
  for (std::size_t i = 0; i < n; ++i)
    for (double t : times) labels.push_back({ColumnLabel::Kind::z, i, 0, t});
  if (mode == EmbeddingMode::two_body) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        for (double t : times) labels.push_back({ColumnLabel::Kind::zz, i, j, t});
  }
  return labels;
}

inline Vector flatten_trace(const ObservableTrace& trace, EmbeddingMode mode) {
  const std::size_t n = trace.n_atoms;
  const std::size_t t_count = trace.snapshot_times.size();
  Vector out(static_cast<Eigen::Index>(embedding_width(n, t_count, mode)));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < trace.one_body.cols(); ++i)
    for (Eigen::Index t = 0; t < trace.one_body.rows(); ++t) out[k++] = trace.one_body(t, i);
  if (mode == EmbeddingMode::two_body) {
    for (Eigen::Index p = 0; p < trace.two_body.cols(); ++p)
      for (Eigen::Index t = 0; t < trace.two_body.rows(); ++t) out[k++] = trace.two_body(t, p);
  }
  return out;
}

inline Vector embed_record(const ReservoirConfig& config, const DetuningPattern& pattern, EmbeddingMode mode,
                           const EvolveOptions& options = {}) {
  return flatten_trace(snapshot_observables(config, pattern, options), mode);
}

struct EmbeddingMatrix {
  std::vector<std::string> record_ids;
  Matrix values;  // n_records x D
  std::vector<ColumnLabel> column_labels;
  EmbeddingMode mode = EmbeddingMode::one_body;
};

/// Embeds every record (row order preserved). Records are distributed over
/// `workers` threads (0: automatic); each row is computed independently, so
/// the output does not depend on the worker count.
inline EmbeddingMatrix embed_dataset(const ReservoirConfig& config, const FeatureScaler& scaler,
                                     const MolecularDataset& dataset, EmbeddingMode mode, unsigned workers = 0,
                                     const EvolveOptions& options = {}) {
  dataset.validate();
  config.validate();
  require(dataset.n_features() == config.n_atoms, ErrorKind::dimension_mismatch,
          "embed_dataset: feature count " + std::to_string(dataset.n_features()) + " != n_atoms " +
              std::to_string(config.n_atoms));
  require(scaler.arity() == config.n_atoms, ErrorKind::dimension_mismatch, "embed_dataset: scaler arity != n_atoms");
  EmbeddingMatrix out;
  out.mode = mode;
  out.record_ids = dataset.record_ids;
  out.column_labels = embedding_labels(config, mode);
  out.values.resize(static_cast<Eigen::Index>(dataset.n_records()), static_cast<Eigen::Index>(out.column_labels.size()));
  parallel_for(dataset.n_records(), resolve_workers(workers), [&](std::size_t r) {
    const auto row = static_cast<Eigen::Index>(r);
    const DetuningPattern p = encode(scaler, dataset.features.row(row));
    out.values.row(row) = embed_record(config, p, mode, options).transpose();
  });
  return out;
}

/// The one_body embedding contained in a two_body one (its leading N*T columns).
inline EmbeddingMatrix one_body_part(const EmbeddingMatrix& e) {
  if (e.mode == EmbeddingMode::one_body) return e;
  std::size_t width = 0;
  while (width < e.column_labels.size() && e.column_labels[width].kind == ColumnLabel::Kind::z) ++width;
  EmbeddingMatrix out;
  out.mode = EmbeddingMode::one_body;
  out.record_ids = e.record_ids;
  out.column_labels.assign(e.column_labels.begin(), e.column_labels.begin() + static_cast<std::ptrdiff_t>(width));
  out.values = e.values.leftCols(static_cast<Eigen::Index>(width));
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ReservoirConfig& c) {
  nlohmann::json pos = nlohmann::json::array();
  for (const auto& p : c.positions) pos.push_back({p[0], p[1], p[2]});
  return nlohmann::json{{"n_atoms", c.n_atoms},
                        {"positions_um", pos},
                        {"chain_spacing_um", c.chain_spacing},
                        {"rabi_amplitude", c.rabi_amplitude},
                        {"global_detuning", c.global_detuning},
                        {"local_detuning_amplitude", c.local_detuning_amplitude},
                        {"interaction_coefficient", c.interaction_coefficient},
                        {"total_time_us", c.total_time},
                        {"snapshot_step_us", c.snapshot_step}};
}

/// Missing keys keep their defaults.
inline ReservoirConfig reservoir_config_from_json(const nlohmann::json& j, ReservoirConfig c = {}) {
  c.n_atoms = j.value("n_atoms", c.n_atoms);
  c.chain_spacing = j.value("chain_spacing_um", c.chain_spacing);
  c.rabi_amplitude = j.value("rabi_amplitude", c.rabi_amplitude);
  c.global_detuning = j.value("global_detuning", c.global_detuning);
  c.local_detuning_amplitude = j.value("local_detuning_amplitude", c.local_detuning_amplitude);
  c.interaction_coefficient = j.value("interaction_coefficient", c.interaction_coefficient);
  c.total_time = j.value("total_time_us", c.total_time);
  c.snapshot_step = j.value("snapshot_step_us", c.snapshot_step);
  if (j.contains("positions_um")) {
    c.positions.clear();
    for (const auto& p : j.at("positions_um")) c.positions.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
  }
  return c;
}

inline nlohmann::json to_json(const FeatureScaler& s) {
  return nlohmann::json{{"mins", s.mins}, {"maxs", s.maxs}, {"degenerate", s.degenerate}};
}

inline FeatureScaler scaler_from_json(const nlohmann::json& j) {
  FeatureScaler s;
  s.mins = j.at("mins").get<std::vector<double>>();
  s.maxs = j.at("maxs").get<std::vector<double>>();
  s.degenerate = j.at("degenerate").get<std::vector<bool>>();
  require(s.mins.size() == s.maxs.size() && s.mins.size() == s.degenerate.size(), ErrorKind::parse,
          "scaler: array lengths differ");
  return s;
}

/// CSV: header "record_id,<labels...>", one row per record.
inline void write_embedding_csv(const EmbeddingMatrix& e, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot write " + path);
  out << "record_id";
  for (const auto& l : e.column_labels) out << ',' << l.str();
  out << '\n';
  for (Eigen::Index r = 0; r < e.values.rows(); ++r) {
    out << csv_escape(e.record_ids[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < e.values.cols(); ++c) out << ',' << format_double(e.values(r, c));
    out << '\n';
  }
}

/// Sidecar holding everything needed to reproduce an embedding file.
inline void write_embedding_sidecar(const EmbeddingMatrix& e, const ReservoirConfig& config,
                                    const FeatureScaler& scaler, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot write " + path);
  nlohmann::json j{{"format", "qrc-embedding/1"},
                   {"mode", to_string(e.mode)},
                   {"n_records", e.values.rows()},
                   {"n_columns", e.values.cols()},
                   {"reservoir", to_json(config)},
                   {"scaler", to_json(scaler)},
                   {"snapshot_times_us", config.snapshot_times()}};
  out << j.dump(2) << '\n';
}

}  // namespace qrc
