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

// Command-line front end. Every subcommand reads the same config document;
// results go under <output_dir>/run-<config hash>/.

#include "qrc/qrc.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

using namespace qrc;
namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  std::string output_dir;
  unsigned workers = 0;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "Config document (qrc-config/1); defaults apply when omitted");
  cmd->add_option("-o,--output-dir", c.output_dir, "Override output_dir");
  cmd->add_option("-w,--workers", c.workers, "Worker threads (overrides QRC_WORKERS and the config)");
  cmd->add_option("-s,--seed", c.seed, "Override master_seed");
}

// Precedence for workers: flag, then QRC_WORKERS, then the config file.
ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  if (c.seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(c.seed);
  if (const char* env = std::getenv("QRC_WORKERS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) cfg.workers = static_cast<unsigned>(v);
  }
  if (c.workers > 0) cfg.workers = c.workers;
  with_stage("config", [&] { cfg.validate(); });
  return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
  with_stage("report", [&] {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    require(out.good(), ErrorKind::io, "cannot write " + p.string());
    out << text;
  });
}

std::string summary_csv(const DataSummary& s) {
  std::string out = "feature,missing,min,max,mean,skew,excess_kurtosis,constant\n";
  for (const auto& f : s.features) {
    out += csv_escape(f.name) + "," + std::to_string(f.missing_count) + "," + format_double(f.min) + "," +
           format_double(f.max) + "," + format_double(f.mean) + "," + format_double(f.skew) + "," +
           format_double(f.kurtosis) + "," + (f.constant ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantum reservoir embeddings for molecular property prediction"};
  app.require_subcommand(1);
  Common common;

  auto* config_cmd = app.add_subcommand("config", "Print the default configuration document");

  auto* synth = app.add_subcommand("synth", "Write a synthetic descriptor table as CSV");
  std::string synth_out;
  std::size_t synth_n = 500, synth_d = 8;
  std::string synth_relation = "nonlinear";
  double synth_noise = 0.1;
  std::uint64_t synth_seed = 2024;
  synth->add_option("--out", synth_out, "Output CSV")->required();
  synth->add_option("-n,--records", synth_n, "Number of records");
  synth->add_option("-d,--features", synth_d, "Number of descriptors");
  synth->add_option("--relation", synth_relation, "linear or nonlinear")->check(CLI::IsMember({"linear", "nonlinear"}));
  synth->add_option("--noise", synth_noise, "Target noise standard deviation");
  synth->add_option("--seed", synth_seed, "Generator seed");

  auto* ingest = app.add_subcommand("ingest", "Load and clean the dataset; write the cleaned table");
  add_common(ingest, common);
  auto* summarize_cmd = app.add_subcommand("summarize", "Per-descriptor summary statistics");
  add_common(summarize_cmd, common);
  auto* tournament = app.add_subcommand("tournament", "Train the candidate regressors and pick the best");
  add_common(tournament, common);
  auto* select = app.add_subcommand("select-features", "Tournament, then Kernel SHAP top-k selection");
  add_common(select, common);
  auto* subsample_cmd = app.add_subcommand("subsample", "Tournament, selection and cluster-proportional plans");
  add_common(subsample_cmd, common);

  auto* embed = app.add_subcommand("embed", "Embed a table through the reservoir");
  add_common(embed, common);
  std::string embed_out, embed_scaler, embed_mode = "two_body";
  embed->add_option("--out", embed_out, "Output CSV (a .json sidecar is written next to it)")->required();
  embed->add_option("--scaler", embed_scaler, "Fitted scaler JSON; when omitted the scaler is fitted on the table");
  embed->add_option("--mode", embed_mode, "one_body or two_body")->check(CLI::IsMember({"one_body", "two_body"}));

  auto* evaluate = app.add_subcommand("evaluate", "Run the full regression workflow");
  add_common(evaluate, common);
  auto* table1 = app.add_subcommand("table1", "2D projection, median cut and SVM classification");
  add_common(table1, common);

  auto* report = app.add_subcommand("report", "Print a finished report");
  std::string report_dir;
  report->add_option("run_dir", report_dir, "Run directory holding report.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (config_cmd->parsed()) {
      std::cout << to_json(ExperimentConfig{}).dump(2) << "\n";
    } else if (synth->parsed()) {
      const auto ds = with_stage("synth", [&] {
        return generate_synthetic(synth_n, synth_d, relation_from_string(synth_relation), synth_noise, synth_seed);
      });
      with_stage("synth", [&] { save_csv(ds, synth_out); });
      std::cout << "wrote " << ds.n_records() << " records x " << ds.n_features() << " descriptors to " << synth_out << "\n";
    } else if (ingest->parsed() || summarize_cmd->parsed()) {
      const auto cfg = resolve(common);
      LoadReport lr;
      const auto ds = load_experiment_dataset(cfg, &lr);
      const fs::path dir = run_directory(cfg);
      if (ingest->parsed()) {
        with_stage("ingest", [&] {
          fs::create_directories(dir);
          save_csv(ds, (dir / "dataset.csv").string());
        });
        write_file(dir / "load_report.json", nlohmann::json{{"n_records", ds.n_records()},
                                                            {"n_features", ds.n_features()},
                                                            {"dropped_columns", lr.dropped_columns},
                                                            {"dropped_rows", lr.dropped_rows},
                                                            {"missing_counts", lr.missing_counts}}
                                                                 .dump(2) + "\n");
        std::cout << ds.n_records() << " records, " << ds.n_features() << " descriptors, " << lr.dropped_columns.size()
                  << " columns and " << lr.dropped_rows << " rows dropped\n"
                  << (dir / "dataset.csv").string() << "\n";
      } else {
        const auto s = with_stage("summarize", [&] { return summarize(ds, &lr); });
        write_file(dir / "summary.csv", summary_csv(s));
        std::cout << summary_csv(s);
      }
    } else if (tournament->parsed() || select->parsed() || subsample_cmd->parsed()) {
      const auto cfg = resolve(common);
      const Preparation p = prepare(cfg, cfg.sizes);
      for (std::size_t i = 0; i < p.tournament.specs.size(); ++i)
        std::printf("%-16s mse %.6g%s\n", p.tournament.labels[i].c_str(), p.tournament.mses[i],
                    i == p.tournament.winner ? "  (winner)" : "");
      if (!tournament->parsed()) {
        std::cout << "selected:";
        for (Index i : p.selection.selected) std::cout << " " << p.standardized.feature_names[i];
        std::cout << "\n";
      }
      if (subsample_cmd->parsed()) {
        for (const auto& [size, plan] : p.design.plans) {
          std::cout << "size " << size << ": " << plan.subsets.size() << " subsamples";
          for (const auto& w : plan.warnings) std::cout << "\n  warning: " << w;
          std::cout << "\n";
        }
      }
      std::cout << p.run_dir << "\n";
    } else if (embed->parsed()) {
      const auto cfg = resolve(common);
      const auto ds = load_experiment_dataset(cfg);
      with_stage("embed", [&] {
        const auto st = standardize(ds).first;
        FeatureScaler scaler;
        if (embed_scaler.empty()) {
          scaler = fit_scaler(st.features);
        } else {
          std::ifstream in(embed_scaler);
          require(in.good(), ErrorKind::io, "file-not-found: " + embed_scaler);
          scaler = scaler_from_json(nlohmann::json::parse(in));
        }
        ReservoirConfig rc = cfg.reservoir;
        rc.n_atoms = ds.n_features();
        EvolveOptions opt;
        opt.method = cfg.propagator;
        const auto mode = embed_mode == "one_body" ? EmbeddingMode::one_body : EmbeddingMode::two_body;
        const auto e = embed_dataset(rc, scaler, st, mode, resolve_workers(cfg.workers), opt);
        const fs::path out(embed_out);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        write_embedding_csv(e, out.string());
        fs::path sidecar = out;
        sidecar.replace_extension(".json");
        write_embedding_sidecar(e, rc, scaler, sidecar.string());
        std::cout << e.values.rows() << " x " << e.values.cols() << " embedding written to " << out.string() << "\n";
      });
    } else if (evaluate->parsed()) {
      const auto r = run_pipeline(resolve(common));
      std::cout << format_report(r);
      for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
      std::cout << r.run_dir << "\n";
    } else if (table1->parsed()) {
      const auto t = run_table1_task(resolve(common));
      std::printf("%-14s %-10s %10s %10s\n", "mode", "metric", "mean", "std");
      for (const auto& row : t.rows)
        std::printf("%-14s %-10s %10.4f %10.4f\n", row.mode.c_str(), row.metric.c_str(), row.mean, row.std);
      std::cout << t.run_dir << "\n";
    } else if (report->parsed()) {
      const auto r = with_stage("report", [&] {
        std::ifstream in(fs::path(report_dir) / "report.json");
        require(in.good(), ErrorKind::io, "file-not-found: " + (fs::path(report_dir) / "report.json").string());
        return report_from_json(nlohmann::json::parse(in));
      });
      std::cout << format_report(r);
    }
  } catch (const StageError& e) {
    std::cerr << "qrc: error " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "qrc: error [internal] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
