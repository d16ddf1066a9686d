// Copyright 2026 The mavqa Authors. All Rights Reserved.
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

/// Experiment grid: component ablation and the slot / timestep / missing
/// ratio sweeps, plus report emission.
///
/// Reports hold only deterministic quantities. Wall-clock timings go to a
/// separate sidecar so reruns produce byte-identical reports.

#pragma once

#include "mavqa/config.hpp"
#include "mavqa/trainer.hpp"
#include "mavqa/world.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace mavqa {

/// Seed `s` drives both the world and the training stream.
inline RunConfig with_seed(RunConfig rc, std::uint64_t seed) {
  rc.world.seed = seed;
  rc.train.seed = seed;
  return rc;
}

/// Evaluation masks come from their own stream so every arm of a cell sees
/// the same masks and evaluation never perturbs training.
inline Rng eval_rng(std::uint64_t seed) { return Rng(seed ^ 0xe7a1c0de5eedULL); }

struct TrainedRun {
  RunConfig config;
  Dataset data;
  TrainerState state;
  double wall_seconds = 0.0;
};

using EpochHook = std::function<void(const TrainerState&, const EpochStats&)>;

/// Continues `st` until `rc.train.epochs` epochs are done.
inline void train_to(TrainerState& st, const Dataset& data, const RunConfig& rc, const EpochHook& hook = {}) {
  const auto train = data.split(Dataset::Split::Train);
  while (st.epochs_done < rc.train.epochs) {
    const EpochStats e = train_epoch(st, train, rc.train);
    if (hook) hook(st, e);
  }
}

inline TrainedRun train_run(const RunConfig& rc, const EpochHook& hook = {}) {
  rc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainedRun run{rc, make_dataset(rc.n_samples, rc.world), TrainerState::fresh(rc), 0.0};
  train_to(run.state, run.data, rc, hook);
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

/// Held-out error of predicting every sample's audio / visual feature by
/// the training-split mean (same mean squared L2 norm as the recall error).
struct MeanBaseline {
  double mse_a = 0.0;
  double mse_v = 0.0;
};

inline MeanBaseline mean_feature_baseline(const std::vector<TrimodalSample>& train,
                                          const std::vector<TrimodalSample>& heldout) {
  if (train.empty() || heldout.empty()) throw ValidationError("mean_feature_baseline: empty split");
  Vec ma = Vec::Zero(train.front().audio.dim());
  Vec mv = Vec::Zero(train.front().visual.size());
  for (const auto& s : train) {
    ma += s.audio.values();
    mv += s.visual.flat();
  }
  ma /= static_cast<double>(train.size());
  mv /= static_cast<double>(train.size());
  MeanBaseline b;
  for (const auto& s : heldout) {
    b.mse_a += (s.audio.values() - ma).squaredNorm();
    b.mse_v += (s.visual.flat() - mv).squaredNorm();
  }
  b.mse_a /= static_cast<double>(heldout.size());
  b.mse_v /= static_cast<double>(heldout.size());
  return b;
}

// ---------------------------------------------------------------------------
// Report rows.

struct ReportRow {
  std::string experiment;
  std::string axis;        // components | slots | timesteps | ratio
  std::string axis_value;  // sweep value or arm name, as text
  std::uint64_t seed = 0;
  std::string scenario;
  std::string arm;         // neither | rmm | avr | both
  double ratio = 1.0;
  double accuracy = 0.0;
  double baseline_accuracy = 0.0;  // zero-fill arm, same model and masks
  std::vector<double> per_class_accuracy;
  double pseudo_mse_a = 0.0;
  double pseudo_mse_v = 0.0;
  double mean_mse_a = 0.0;
  double mean_mse_v = 0.0;
  std::string config_hash;
  double wall_seconds = 0.0;  // not part of the report bytes; see timing sidecar

  bool operator==(const ReportRow& o) const {
    return experiment == o.experiment && axis == o.axis && axis_value == o.axis_value && seed == o.seed &&
           scenario == o.scenario && arm == o.arm && ratio == o.ratio && accuracy == o.accuracy &&
           baseline_accuracy == o.baseline_accuracy && per_class_accuracy == o.per_class_accuracy &&
           pseudo_mse_a == o.pseudo_mse_a && pseudo_mse_v == o.pseudo_mse_v && mean_mse_a == o.mean_mse_a &&
           mean_mse_v == o.mean_mse_v && config_hash == o.config_hash;
  }
};

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols = {
      "experiment", "axis",       "axis_value", "seed",       "scenario",   "arm",
      "ratio",      "accuracy",   "baseline_accuracy",        "per_class_accuracy",
      "pseudo_mse_a", "pseudo_mse_v", "mean_mse_a", "mean_mse_v", "config_hash"};
  return cols;
}

namespace detail {

inline std::string join_doubles(const std::vector<double>& xs, char sep) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += sep;
    s += format_double(xs[i]);
  }
  return s;
}

inline std::vector<std::string> row_fields(const ReportRow& r) {
  return {r.experiment,
          r.axis,
          r.axis_value,
          std::to_string(r.seed),
          r.scenario,
          r.arm,
          format_double(r.ratio),
          format_double(r.accuracy),
          format_double(r.baseline_accuracy),
          join_doubles(r.per_class_accuracy, ';'),
          format_double(r.pseudo_mse_a),
          format_double(r.pseudo_mse_v),
          format_double(r.mean_mse_a),
          format_double(r.mean_mse_v),
          r.config_hash};
}

inline void check_field(const std::string& f) {
  if (f.find_first_of(",\n\"") != std::string::npos) throw ValidationError("report field contains a separator: " + f);
}

}  // namespace detail

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ValidationError("emit_report: no rows");
  std::string out;
  const auto line = [&](const std::vector<std::string>& fs) {
    for (std::size_t i = 0; i < fs.size(); ++i) {
      detail::check_field(fs[i]);
      if (i) out += ',';
      out += fs[i];
    }
    out += '\n';
  };
  line(report_columns());
  for (const auto& r : rows) line(detail::row_fields(r));
  return out;
}

inline nlohmann::ordered_json row_json(const ReportRow& r) {
  nlohmann::ordered_json j;
  j["experiment"] = r.experiment;
  j["axis"] = r.axis;
  j["axis_value"] = r.axis_value;
  j["seed"] = r.seed;
  j["scenario"] = r.scenario;
  j["arm"] = r.arm;
  j["ratio"] = r.ratio;
  j["accuracy"] = r.accuracy;
  j["baseline_accuracy"] = r.baseline_accuracy;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["pseudo_mse_a"] = r.pseudo_mse_a;
  j["pseudo_mse_v"] = r.pseudo_mse_v;
  j["mean_mse_a"] = r.mean_mse_a;
  j["mean_mse_v"] = r.mean_mse_v;
  j["config_hash"] = r.config_hash;
  return j;
}

inline std::string report_json(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ValidationError("emit_report: no rows");
  nlohmann::ordered_json doc;
  doc["config_hash"] = rows.front().config_hash;
  doc["experiment"] = rows.front().experiment;
  doc["arms"] = {{"neither", "missing modality replaced by zeros"},
                 {"rmm", "missing modality replaced by slot-bank recall"},
                 {"avr", "missing modality replaced by zeros, then the reverse diffusion chain"},
                 {"both", "missing modality replaced by slot-bank recall, then the reverse diffusion chain"}};
  doc["columns"] = report_columns();
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) doc["rows"].push_back(row_json(r));
  return doc.dump(2) + "\n";
}

inline std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || detail::split(line, ',') != report_columns()) {
    throw ValidationError("report: unexpected header");
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != report_columns().size()) throw ValidationError("report: wrong field count");
    ReportRow r;
    r.experiment = f[0];
    r.axis = f[1];
    r.axis_value = f[2];
    r.seed = detail::parse_number<std::uint64_t>("seed", f[3]);
    r.scenario = f[4];
    r.arm = f[5];
    r.ratio = detail::parse_number<double>("ratio", f[6]);
    r.accuracy = detail::parse_number<double>("accuracy", f[7]);
    r.baseline_accuracy = detail::parse_number<double>("baseline_accuracy", f[8]);
    if (!f[9].empty()) {
      for (const auto& x : detail::split(f[9], ';')) {
        r.per_class_accuracy.push_back(detail::parse_number<double>("per_class_accuracy", x));
      }
    }
    r.pseudo_mse_a = detail::parse_number<double>("pseudo_mse_a", f[10]);
    r.pseudo_mse_v = detail::parse_number<double>("pseudo_mse_v", f[11]);
    r.mean_mse_a = detail::parse_number<double>("mean_mse_a", f[12]);
    r.mean_mse_v = detail::parse_number<double>("mean_mse_v", f[13]);
    r.config_hash = f[14];
    rows.push_back(std::move(r));
  }
  return rows;
}

enum class ReportFormat { Csv, Json };

inline ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw ValidationError("unknown format '" + s + "'");
}

inline void emit_report(const std::vector<ReportRow>& rows, ReportFormat fmt, const std::string& path) {
  write_file(path, fmt == ReportFormat::Csv ? report_csv(rows) : report_json(rows));
}

/// Per-cell wall time, keyed like the report rows.
inline std::string timing_json(const std::vector<ReportRow>& rows) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  std::string last;
  for (const auto& r : rows) {
    const std::string key = r.axis_value + "/" + std::to_string(r.seed);
    if (key == last) continue;
    last = key;
    doc.push_back({{"axis", r.axis}, {"axis_value", r.axis_value}, {"seed", r.seed}, {"wall_seconds", r.wall_seconds}});
  }
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Per-epoch training metrics.

struct TrainMetricsRow {
  std::string run_id;
  int epoch = 0;
  std::string scenario;
  double ratio = 0.0;
  double accuracy = 0.0;
  double l_avqa = 0.0, l_rmmr = 0.0, l_ave = 0.0;
  double pseudo_mse_a = 0.0, pseudo_mse_v = 0.0;
};

inline std::string metrics_csv(const std::vector<TrainMetricsRow>& rows) {
  std::string out = "run_id,epoch,scenario,ratio,accuracy,l_avqa,l_rmmr,l_ave,pseudo_mse_a,pseudo_mse_v\n";
  for (const auto& r : rows) {
    out += r.run_id + "," + std::to_string(r.epoch) + "," + r.scenario + "," + format_double(r.ratio) + "," +
           format_double(r.accuracy) + "," + format_double(r.l_avqa) + "," + format_double(r.l_rmmr) + "," +
           format_double(r.l_ave) + "," + format_double(r.pseudo_mse_a) + "," + format_double(r.pseudo_mse_v) + "\n";
  }
  return out;
}

inline std::string metrics_json(const std::vector<TrainMetricsRow>& rows) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    doc.push_back({{"run_id", r.run_id},
                   {"epoch", r.epoch},
                   {"scenario", r.scenario},
                   {"ratio", r.ratio},
                   {"accuracy", r.accuracy},
                   {"l_avqa", r.l_avqa},
                   {"l_rmmr", r.l_rmmr},
                   {"l_ave", r.l_ave},
                   {"pseudo_mse_a", r.pseudo_mse_a},
                   {"pseudo_mse_v", r.pseudo_mse_v}});
  }
  return doc.dump(2) + "\n";
}

inline std::string run_id(const RunConfig& rc) { return config_hash(rc).substr(0, 12); }

/// Evaluation rows for one epoch: complete data, then each modality fully
/// missing, all with the full method.
inline std::vector<TrainMetricsRow> epoch_metrics(const TrainerState& st, const EpochStats& e,
                                                  const std::vector<TrimodalSample>& split, const RunConfig& rc) {
  std::vector<TrainMetricsRow> rows;
  const std::pair<Scenario, double> cells[] = {
      {Scenario::None, 0.0}, {Scenario::AudioMissing, 1.0}, {Scenario::VisualMissing, 1.0}};
  for (const auto& [sc, ratio] : cells) {
    Rng rng = eval_rng(rc.train.seed);
    const EvalMetrics m = evaluate(st.models, split, sc, ratio, rng, Arm::Both);
    rows.push_back({run_id(rc), e.epoch, to_string(sc), ratio, m.accuracy, e.l_avqa, e.l_rmmr, e.l_ave,
                    m.pseudo_mse_a, m.pseudo_mse_v});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Experiments.

using Progress = std::function<void(const std::string&)>;

inline const std::vector<Arm>& all_arms() {
  static const std::vector<Arm> arms = {Arm::Neither, Arm::RmmOnly, Arm::AvrOnly, Arm::Both};
  return arms;
}

inline const std::vector<Scenario>& missing_scenarios() {
  static const std::vector<Scenario> s = {Scenario::AudioMissing, Scenario::VisualMissing};
  return s;
}

/// Evaluates `arm` and the zero-fill arm of one trained model on the test
/// split and fills a row.
inline ReportRow eval_row(const TrainedRun& run, const std::string& experiment, const std::string& axis,
                          const std::string& axis_value, std::uint64_t seed, Scenario sc, double ratio, Arm arm,
                          const std::string& hash) {
  const auto test = run.data.split(Dataset::Split::Test);
  Rng r1 = eval_rng(seed);
  const EvalMetrics m = evaluate(run.state.models, test, sc, ratio, r1, arm);
  Rng r0 = eval_rng(seed);
  const double base = arm == Arm::Neither ? m.accuracy
                                          : evaluate(run.state.models, test, sc, ratio, r0, Arm::Neither).accuracy;
  const MeanBaseline mb = mean_feature_baseline(run.data.split(Dataset::Split::Train), test);
  ReportRow row;
  row.experiment = experiment;
  row.axis = axis;
  row.axis_value = axis_value;
  row.seed = seed;
  row.scenario = to_string(sc);
  row.arm = to_string(arm);
  row.ratio = ratio;
  row.accuracy = m.accuracy;
  row.baseline_accuracy = base;
  row.per_class_accuracy = m.per_class_accuracy;
  row.pseudo_mse_a = m.pseudo_mse_a;
  row.pseudo_mse_v = m.pseudo_mse_v;
  row.mean_mse_a = mb.mse_a;
  row.mean_mse_v = mb.mse_v;
  row.config_hash = hash;
  row.wall_seconds = run.wall_seconds;
  return row;
}

/// Trains one model per seed and evaluates all four arms with the missing
/// modality fully absent. A supplied set of trained runs (one per seed, in
/// seed order) is reused instead of retraining.
inline std::vector<ReportRow> run_ablation(const RunConfig& rc, const Progress& progress = {},
                                           const std::vector<TrainedRun>* trained = nullptr) {
  rc.validate();
  const std::string hash = config_hash(rc);
  std::vector<TrainedRun> local;
  if (!trained) {
    for (std::uint64_t seed : rc.seeds) {
      local.push_back(train_run(with_seed(rc, seed)));
      if (progress) progress("ablation seed " + std::to_string(seed) + " trained");
    }
    trained = &local;
  }
  std::vector<ReportRow> rows;
  for (Arm arm : all_arms()) {
    for (std::size_t i = 0; i < rc.seeds.size(); ++i) {
      for (Scenario sc : missing_scenarios()) {
        rows.push_back(eval_row(trained->at(i), "ablation", "components", to_string(arm), rc.seeds[i], sc, 1.0, arm,
                                hash));
      }
    }
  }
  return rows;
}

/// One model per (axis value, seed); rows hold the full method and carry
/// the zero-fill accuracy of the same model as the baseline.
inline std::vector<ReportRow> run_model_sweep(const RunConfig& rc, const std::string& axis,
                                              const std::vector<int>& values,
                                              const std::function<void(RunConfig&, int)>& apply,
                                              const Progress& progress = {}) {
  rc.validate();
  if (values.empty()) throw ValidationError("sweep: empty axis");
  const std::string hash = config_hash(rc);
  std::vector<int> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::uint64_t> seeds = rc.seeds;
  std::sort(seeds.begin(), seeds.end());
  std::vector<ReportRow> rows;
  for (int v : sorted) {
    for (std::uint64_t seed : seeds) {
      RunConfig cell = with_seed(rc, seed);
      apply(cell, v);
      const TrainedRun run = train_run(cell);
      if (progress) progress(axis + "=" + std::to_string(v) + " seed " + std::to_string(seed) + " trained");
      for (Scenario sc : missing_scenarios()) {
        rows.push_back(eval_row(run, "sweep-" + axis, axis, std::to_string(v), seed, sc, 1.0, Arm::Both, hash));
      }
    }
  }
  return rows;
}

inline std::vector<ReportRow> run_slot_sweep(const RunConfig& rc, const Progress& progress = {}) {
  return run_model_sweep(rc, "slots", rc.slot_axis, [](RunConfig& c, int v) { c.model.slots = v; }, progress);
}

inline std::vector<ReportRow> run_timestep_sweep(const RunConfig& rc, const Progress& progress = {}) {
  return run_model_sweep(
      rc, "timesteps", rc.timestep_axis,
      [](RunConfig& c, int v) {
        c.model.timesteps = v;
        c.model.enhance_entry_t = 0;
      },
      progress);
}

/// One model per seed; every ratio is evaluated with the full method and
/// with zero-fill (as its own rows, `arm` = neither).
inline std::vector<ReportRow> run_missing_ratio_sweep(const RunConfig& rc, const Progress& progress = {},
                                                      const std::vector<TrainedRun>* trained = nullptr) {
  rc.validate();
  const std::string hash = config_hash(rc);
  std::vector<double> ratios = rc.ratio_axis;
  std::sort(ratios.begin(), ratios.end());
  std::vector<TrainedRun> local;
  if (!trained) {
    for (std::uint64_t seed : rc.seeds) {
      local.push_back(train_run(with_seed(rc, seed)));
      if (progress) progress("ratio sweep seed " + std::to_string(seed) + " trained");
    }
    trained = &local;
  }
  std::vector<ReportRow> rows;
  for (double ratio : ratios) {
    for (std::size_t i = 0; i < rc.seeds.size(); ++i) {
      for (Scenario sc : missing_scenarios()) {
        for (Arm arm : {Arm::Neither, Arm::Both}) {
          rows.push_back(eval_row(trained->at(i), "sweep-ratio", "ratio", format_double(ratio), rc.seeds[i], sc,
                                  ratio, arm, hash));
        }
      }
    }
  }
  return rows;
}

/// Mean and sample standard deviation of accuracy over seeds for each
/// (axis value, scenario, arm), in first-seen order.
struct SummaryRow {
  std::string axis_value, scenario, arm;
  double mean = 0.0, stddev = 0.0;
  int n = 0;
};

inline std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<double>> vals;
  for (const auto& r : rows) {
    std::size_t k = 0;
    while (k < out.size() && !(out[k].axis_value == r.axis_value && out[k].scenario == r.scenario && out[k].arm == r.arm)) ++k;
    if (k == out.size()) {
      out.push_back({r.axis_value, r.scenario, r.arm, 0.0, 0.0, 0});
      vals.emplace_back();
    }
    vals[k].push_back(r.accuracy);
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto& v = vals[k];
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    out[k].mean = mean;
    out[k].stddev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    out[k].n = static_cast<int>(v.size());
  }
  return out;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "axis_value,scenario,arm,mean_accuracy,std_accuracy,n_seeds\n";
  for (const auto& r : rows) {
    out += r.axis_value + "," + r.scenario + "," + r.arm + "," + format_double(r.mean) + "," +
           format_double(r.stddev) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

}  // namespace mavqa
