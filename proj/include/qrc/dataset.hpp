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

#include "qrc/common.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace qrc {

/// Molecular descriptor table: one row per molecule, one activity target.
struct MolecularDataset {
  std::vector<std::string> record_ids;
  Matrix features;  // n_records x n_features
  std::vector<std::string> feature_names;
  Vector target;

  std::size_t n_records() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(features.cols()); }

  void validate() const {
    require(record_ids.size() == n_records() && static_cast<std::size_t>(target.size()) == n_records(),
            ErrorKind::dimension_mismatch, "dataset: record_ids/features/target row counts differ");
    require(feature_names.size() == n_features(), ErrorKind::dimension_mismatch,
            "dataset: feature_names length differs from feature column count");
  }

  MolecularDataset subset(const IndexList& rows) const {
    MolecularDataset out;
    out.features = take_rows(features, rows);
    out.target = take(target, rows);
    out.feature_names = feature_names;
    out.record_ids.reserve(rows.size());
    for (Index r : rows) out.record_ids.push_back(record_ids[r]);
    return out;
  }

  MolecularDataset select_features(const IndexList& cols) const {
    MolecularDataset out;
    out.record_ids = record_ids;
    out.target = target;
    out.features = take_cols(features, cols);
    for (Index c : cols) out.feature_names.push_back(feature_names.at(c));
    return out;
  }
};

struct CsvSchema {
  std::string id_column = "MOLECULE";
  std::string target_column = "Act";  // empty: no target, loaded as zeros
  std::string feature_prefix;  // empty: every other named column is a feature
};

/// Side information gathered while loading; useful for the EDA summary.
struct LoadReport {
  std::vector<std::string> dropped_columns;   // unnamed or entirely missing
  std::vector<std::size_t> missing_counts;    // per kept feature, before imputation
  std::size_t dropped_rows = 0;               // rows with missing target
};

namespace detail {

inline bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "N/A" || s == "NaN" || s == "nan" || s == "?" || s == "null";
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline bool is_unnamed(std::string_view header) {
  return header.empty() || header.rfind("Unnamed:", 0) == 0;
}

}  // namespace detail

/// Loads a comma-separated descriptor table.
///
/// Unnamed columns (empty header, or the "Unnamed: k" artefact of index
/// exports) are dropped. Rows whose target is missing are dropped. Missing
/// or non-finite feature cells are imputed with the mean of the observed
/// cells of that column; a column with no observed cell is dropped.
inline MolecularDataset load_csv(const std::string& path, const CsvSchema& schema = {},
                                 LoadReport* report = nullptr) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "file-not-found: " + path);

  std::string line;
  // Lines starting with '#' are comments (exports carry metadata this way).
  const auto next_line = [&](std::string& l) {
    while (std::getline(in, l)) {
      if (l.empty() || l[0] != '#') return true;
    }
    return false;
  };
  require(next_line(line), ErrorKind::parse, "malformed-row: missing header in " + path);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  std::optional<std::size_t> id_col;
  std::optional<std::size_t> target_col;
  std::vector<std::size_t> feature_cols;
  LoadReport local;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.id_column && !id_col) {
      id_col = c;
    } else if (!schema.target_column.empty() && header[c] == schema.target_column && !target_col) {
      target_col = c;
    } else if (detail::is_unnamed(header[c])) {
      local.dropped_columns.push_back(header[c]);
    } else if (schema.feature_prefix.empty() || header[c].rfind(schema.feature_prefix, 0) == 0) {
      feature_cols.push_back(c);
    }
  }
  require(target_col.has_value() || schema.target_column.empty(), ErrorKind::parse,
          "target column '" + schema.target_column + "' not found in " + path);
  require(!feature_cols.empty(), ErrorKind::parse, "no-feature-columns in " + path);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> rows;
  std::vector<double> targets;
  std::vector<std::string> ids;
  std::size_t row_index = 0;
  while (next_line(line)) {
    ++row_index;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::parse, "malformed-row " + std::to_string(row_index) + ": expected " +
                                        std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    const std::string target_text = target_col ? trim(fields[*target_col]) : std::string("0");
    if (detail::is_missing_token(target_text)) {
      ++local.dropped_rows;
      continue;
    }
    const auto target = detail::parse_double(target_text);
    if (!target || !std::isfinite(*target)) {
      throw Error(ErrorKind::parse, "malformed-row " + std::to_string(row_index) + ": target '" + target_text + "'");
    }
    std::vector<double> values(feature_cols.size(), nan);
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      const std::string cell = trim(fields[feature_cols[k]]);
      if (detail::is_missing_token(cell)) continue;
      const auto v = detail::parse_double(cell);
      if (!v) {
        throw Error(ErrorKind::parse, "malformed-row " + std::to_string(row_index) + ": column '" +
                                          header[feature_cols[k]] + "' value '" + cell + "'");
      }
      if (std::isfinite(*v)) values[k] = *v;
    }
    rows.push_back(std::move(values));
    targets.push_back(*target);
    ids.push_back(id_col ? trim(fields[*id_col]) : std::to_string(row_index - 1));
  }

  // Column means over observed cells; drop columns that were never observed.
  std::vector<std::size_t> kept;
  std::vector<double> means;
  std::vector<std::size_t> missing;
  for (std::size_t k = 0; k < feature_cols.size(); ++k) {
    double sum = 0.0;
    std::size_t seen = 0;
    for (const auto& r : rows) {
      if (!std::isnan(r[k])) {
        sum += r[k];
        ++seen;
      }
    }
    if (seen == 0 && !rows.empty()) {
      local.dropped_columns.push_back(header[feature_cols[k]]);
      continue;
    }
    kept.push_back(k);
    means.push_back(seen ? sum / static_cast<double>(seen) : 0.0);
    missing.push_back(rows.size() - seen);
  }
  require(!kept.empty(), ErrorKind::parse, "no-feature-columns with observed values in " + path);

  MolecularDataset ds;
  ds.record_ids = std::move(ids);
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kept.size()));
  ds.target.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ds.target[static_cast<Eigen::Index>(r)] = targets[r];
    for (std::size_t c = 0; c < kept.size(); ++c) {
      const double v = rows[r][kept[c]];
      ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::isnan(v) ? means[c] : v;
    }
  }
  for (std::size_t c : kept) ds.feature_names.push_back(header[feature_cols[c]]);
  local.missing_counts = std::move(missing);
  if (report) *report = std::move(local);
  return ds;
}

/// Writes the dataset back as CSV in the default schema layout.
inline void save_csv(const MolecularDataset& ds, const std::string& path, const CsvSchema& schema = {}) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot write " + path);
  out << csv_escape(schema.id_column) << ',' << csv_escape(schema.target_column);
  for (const auto& n : ds.feature_names) out << ',' << csv_escape(n);
  out << '\n';
  for (std::size_t r = 0; r < ds.n_records(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    out << csv_escape(ds.record_ids[r]) << ',' << format_double(ds.target[row]);
    for (Eigen::Index c = 0; c < ds.features.cols(); ++c) out << ',' << format_double(ds.features(row, c));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Exploratory summary
// ---------------------------------------------------------------------------

struct FeatureSummary {
  std::string name;
  std::size_t missing_count = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double skew = 0.0;
  double kurtosis = 0.0;  // excess kurtosis; NaN when constant
  bool constant = false;
};

struct DataSummary {
  std::size_t n_records = 0;
  std::size_t n_features = 0;
  std::vector<FeatureSummary> features;
};

/// Moment-based skewness g1 = m3 / m2^1.5 and excess kurtosis g2 = m4 / m2^2 - 3.
inline FeatureSummary describe_column(const Eigen::Ref<const Vector>& x) {
  FeatureSummary s;
  const double n = static_cast<double>(x.size());
  s.min = x.minCoeff();
  s.max = x.maxCoeff();
  s.mean = x.mean();
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d = x[i] - s.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const double scale = std::max(1.0, std::abs(s.mean));
  if (s.max == s.min || m2 <= 1e-24 * scale * scale) {
    s.constant = true;
    s.skew = 0.0;
    s.kurtosis = std::numeric_limits<double>::quiet_NaN();
  } else {
    s.skew = m3 / std::pow(m2, 1.5);
    s.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return s;
}

inline DataSummary summarize(const MolecularDataset& ds, const LoadReport* load = nullptr) {
  ds.validate();
  require(ds.n_records() > 0, ErrorKind::invalid_argument, "summarize: empty dataset");
  DataSummary out;
  out.n_records = ds.n_records();
  out.n_features = ds.n_features();
  for (std::size_t c = 0; c < ds.n_features(); ++c) {
    FeatureSummary s = describe_column(ds.features.col(static_cast<Eigen::Index>(c)));
    s.name = ds.feature_names[c];
    if (load && c < load->missing_counts.size()) s.missing_count = load->missing_counts[c];
    out.features.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardization (population standard deviation)
// ---------------------------------------------------------------------------

struct StandardizationParams {
  std::vector<std::string> feature_names;
  std::vector<double> means;
  std::vector<double> stddevs;
  std::vector<bool> constant_mask;
};

inline MolecularDataset apply_standardization(const StandardizationParams& params, const MolecularDataset& ds) {
  require(params.feature_names == ds.feature_names, ErrorKind::dimension_mismatch,
          "apply_standardization: feature-name mismatch");
  MolecularDataset out = ds;
  for (std::size_t c = 0; c < ds.n_features(); ++c) {
    auto col = out.features.col(static_cast<Eigen::Index>(c));
    if (params.constant_mask[c]) {
      col.setZero();
    } else {
      col = ((col.array() - params.means[c]) / params.stddevs[c]).matrix();
    }
  }
  return out;
}

inline StandardizationParams fit_standardization(const MolecularDataset& ds) {
  ds.validate();
  require(ds.n_records() >= 2, ErrorKind::invalid_argument, "standardize: too-few-records (need at least 2)");
  StandardizationParams p;
  p.feature_names = ds.feature_names;
  const double n = static_cast<double>(ds.n_records());
  for (std::size_t c = 0; c < ds.n_features(); ++c) {
    const auto col = ds.features.col(static_cast<Eigen::Index>(c));
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    const double scale = std::max(1.0, std::abs(mean));
    const bool constant = col.maxCoeff() == col.minCoeff() || sd <= 1e-12 * scale;
    p.means.push_back(mean);
    p.stddevs.push_back(constant ? 1.0 : sd);
    p.constant_mask.push_back(constant);
  }
  return p;
}

inline std::pair<MolecularDataset, StandardizationParams> standardize(const MolecularDataset& ds) {
  StandardizationParams p = fit_standardization(ds);
  MolecularDataset out = apply_standardization(p, ds);
  return {std::move(out), std::move(p)};
}

inline nlohmann::json to_json(const StandardizationParams& p) {
  return nlohmann::json{{"feature_names", p.feature_names},
                        {"means", p.means},
                        {"stddevs", p.stddevs},
                        {"constant_mask", p.constant_mask}};
}

inline StandardizationParams standardization_from_json(const nlohmann::json& j) {
  StandardizationParams p;
  p.means = j.at("means").get<std::vector<double>>();
  p.stddevs = j.at("stddevs").get<std::vector<double>>();
  p.constant_mask = j.at("constant_mask").get<std::vector<bool>>();
  if (j.contains("feature_names")) p.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  require(p.means.size() == p.stddevs.size() && p.means.size() == p.constant_mask.size(), ErrorKind::parse,
          "standardization params: array lengths differ");
  return p;
}

// ---------------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------------

struct SplitIndices {
  IndexList train;  // ascending positions into the split input
  IndexList test;   // ascending
  std::vector<std::string> warnings;
};

/// Partitions positions 0..n-1. The test set holds round(test_fraction * n)
/// records (kept within [1, n-1]); with strata, each stratum contributes its
/// largest-remainder share. Strata with a single record cannot be split and
/// are pooled together before allocation.
inline SplitIndices split_indices(std::size_t n, double test_fraction, const std::vector<int>* strata,
                                  std::uint64_t seed) {
  require(n >= 2, ErrorKind::invalid_argument, "train_test_split: need at least 2 records");
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorKind::invalid_argument,
          "train_test_split: test_fraction must lie in (0, 1)");
  if (strata) {
    require(strata->size() == n, ErrorKind::dimension_mismatch, "train_test_split: strata length != n_records");
  }
  std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  SplitIndices out;
  Rng rng(seed);
  std::vector<char> is_test(n, 0);
  if (!strata) {
    IndexList perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    for (std::size_t i = 0; i < n_test; ++i) is_test[perm[i]] = 1;
  } else {
    std::map<int, IndexList> groups;
    for (std::size_t i = 0; i < n; ++i) groups[(*strata)[i]].push_back(i);
    std::vector<IndexList> buckets;
    IndexList pooled;
    for (auto& [label, members] : groups) {
      if (members.size() < 2) {
        out.warnings.push_back("stratum " + std::to_string(label) + " has a single record; pooled");
        pooled.insert(pooled.end(), members.begin(), members.end());
      } else {
        buckets.push_back(members);
      }
    }
    if (!pooled.empty()) {
      std::sort(pooled.begin(), pooled.end());
      buckets.push_back(pooled);
    }
    std::vector<double> weights;
    for (const auto& b : buckets) weights.push_back(static_cast<double>(b.size()));
    const auto quota = largest_remainder(n_test, weights);
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      IndexList members = buckets[b];
      rng.shuffle(members);
      for (std::size_t i = 0; i < quota[b] && i < members.size(); ++i) is_test[members[i]] = 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? out.test : out.train).push_back(i);
  return out;
}

inline std::pair<MolecularDataset, MolecularDataset> train_test_split(const MolecularDataset& ds, double test_fraction,
                                                                      const std::vector<int>* strata,
                                                                      std::uint64_t seed) {
  ds.validate();
  const SplitIndices s = split_indices(ds.n_records(), test_fraction, strata, seed);
  return {ds.subset(s.train), ds.subset(s.test)};
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

enum class Relation { linear, nonlinear };

/// Generating weights of the linear relation: w_j = (-1)^j (1 + j / 2).
inline Vector synthetic_linear_weights(std::size_t n_features) {
  Vector w(static_cast<Eigen::Index>(n_features));
  for (std::size_t j = 0; j < n_features; ++j) w[static_cast<Eigen::Index>(j)] = (j % 2 ? -1.0 : 1.0) * (1.0 + 0.5 * static_cast<double>(j));
  return w;
}

inline constexpr double kSyntheticIntercept = 0.5;

/// Noise-free response of the synthetic generator for one feature row.
///   linear:    y = 0.5 + sum_j w_j x_j
///   nonlinear: y = 2 sin(2 x_0) + 1.5 x_1 x_{2 mod d} + |x_{d-1}| + 0.5 x_0^2
/// Indices wrap modulo d so every d >= 1 is valid.
inline double synthetic_response(const Eigen::Ref<const Eigen::RowVectorXd>& x, Relation relation) {
  const Eigen::Index d = x.size();
  if (relation == Relation::linear) {
    return kSyntheticIntercept + x.dot(synthetic_linear_weights(static_cast<std::size_t>(d)).transpose());
  }
  const double x0 = x[0];
  const double x1 = x[1 % d];
  const double x2 = x[2 % d];
  const double xl = x[d - 1];
  return 2.0 * std::sin(2.0 * x0) + 1.5 * x1 * x2 + std::abs(xl) + 0.5 * x0 * x0;
}

/// Features are i.i.d. standard normal; target = synthetic_response + N(0, noise_sd^2).
/// Record ids are "S0000", "S0001", ...; feature names "D_1".."D_d".
inline MolecularDataset generate_synthetic(std::size_t n_records, std::size_t n_features, Relation relation,
                                           double noise_sd, std::uint64_t seed) {
  require(n_records >= 4 && n_features >= 1, ErrorKind::invalid_argument,
          "generate_synthetic: invalid sizes (need n_records >= 4, n_features >= 1)");
  require(noise_sd >= 0.0 && std::isfinite(noise_sd), ErrorKind::invalid_argument, "generate_synthetic: noise_sd < 0");
  Rng feature_rng(derive_seed(seed, "synthetic/features"));
  Rng noise_rng(derive_seed(seed, "synthetic/noise"));
  MolecularDataset ds;
  ds.features.resize(static_cast<Eigen::Index>(n_records), static_cast<Eigen::Index>(n_features));
  ds.target.resize(static_cast<Eigen::Index>(n_records));
  for (std::size_t r = 0; r < n_records; ++r) {
    for (std::size_t c = 0; c < n_features; ++c) ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = feature_rng.normal();
  }
  for (std::size_t r = 0; r < n_records; ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    const double noise = noise_sd > 0.0 ? noise_sd * noise_rng.normal() : 0.0;
    ds.target[row] = synthetic_response(ds.features.row(row), relation) + noise;
    char id[32];
    std::snprintf(id, sizeof id, "S%04zu", r);
    ds.record_ids.emplace_back(id);
  }
  for (std::size_t c = 0; c < n_features; ++c) ds.feature_names.push_back("D_" + std::to_string(c + 1));
  return ds;
}

inline Relation relation_from_string(const std::string& s) {
  if (s == "linear") return Relation::linear;
  if (s == "nonlinear") return Relation::nonlinear;
  throw Error(ErrorKind::invalid_argument, "unknown relation '" + s + "' (expected linear|nonlinear)");
}

}  // namespace qrc
