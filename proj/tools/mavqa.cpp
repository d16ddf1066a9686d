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

// mavqa: train, evaluate and sweep the missing-modality QA pipeline.
//
// Exit codes: 0 success, 1 validation error (bad flags, config or input),
// 2 runtime or numeric failure.

#include "mavqa/mavqa.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace mavqa;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string format = "csv";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file (defaults apply to absent keys)");
  cmd->add_option("--seed", c.seed, "override world, training and experiment seeds");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--format", c.format, "report format")->check(CLI::IsMember({"csv", "json"}));
}

RunConfig load_config(const Common& c) {
  RunConfig rc;
  if (!c.config_path.empty()) {
    std::string text;
    try {
      text = read_file(c.config_path);
    } catch (const std::runtime_error& e) {
      throw ValidationError(e.what());
    }
    rc = parse_config_text(text);
  }
  if (c.seed) {
    rc = with_seed(rc, *c.seed);
    rc.seeds = {*c.seed};
  }
  rc.validate();
  return rc;
}

fs::path prepare_out(const Common& c) {
  fs::path dir(c.out);
  fs::create_directories(dir);
  return dir;
}

std::string ext(const Common& c) { return c.format == "json" ? ".json" : ".csv"; }

void log(const std::string& msg) { std::cerr << "[mavqa] " << msg << "\n"; }

void write_report(const Common& c, const std::string& stem, const std::vector<ReportRow>& rows) {
  const fs::path dir = prepare_out(c);
  const fs::path report = dir / (stem + ext(c));
  emit_report(rows, parse_format(c.format), report.string());
  write_file((dir / (stem + "_summary.csv")).string(), summary_csv(summarize(rows)));
  write_file((dir / (stem + ".timing.json")).string(), timing_json(rows));
  log("wrote " + report.string());
}

// --- subcommands -----------------------------------------------------------

struct TrainOpts {
  std::string resume;
  int stop_after = -1;
};

int cmd_train(const Common& c, const TrainOpts& o) {
  RunConfig rc = load_config(c);
  const fs::path dir = prepare_out(c);
  Dataset data = make_dataset(rc.n_samples, rc.world);
  TrainerState st;
  std::vector<TrainMetricsRow> rows;
  const fs::path metrics_path = dir / ("metrics" + ext(c));
  if (!o.resume.empty()) {
    Checkpoint ck = load_checkpoint(o.resume);
    if (to_config_text(ck.config) != to_config_text(rc)) {
      throw ValidationError("checkpoint config does not match the requested config");
    }
    st = std::move(ck.state);
    log("resuming after epoch " + std::to_string(st.epochs_done));
  } else {
    st = TrainerState::fresh(rc);
  }
  // Only epochs run by this invocation produce metrics rows.
  const auto val = data.split(Dataset::Split::Val);
  const int target = o.stop_after >= 0 ? std::min(o.stop_after, rc.train.epochs) : rc.train.epochs;
  RunConfig upto = rc;
  upto.train.epochs = target;
  train_to(st, data, upto, [&](const TrainerState& s, const EpochStats& e) {
    auto r = epoch_metrics(s, e, val, rc);
    rows.insert(rows.end(), r.begin(), r.end());
    log("epoch " + std::to_string(e.epoch) + " l_avqa=" + format_double(e.l_avqa) +
        " l_rmmr=" + format_double(e.l_rmmr) + " l_ave=" + format_double(e.l_ave));
  });
  save_checkpoint((dir / "model.ckpt").string(), Checkpoint{rc, st});
  if (!rows.empty()) {
    write_file(metrics_path.string(), c.format == "json" ? metrics_json(rows) : metrics_csv(rows));
  }
  log("wrote " + (dir / "model.ckpt").string());
  return 0;
}

struct EvalOpts {
  std::string checkpoint;
  std::string scenario = "audio-missing";
  double ratio = 1.0;
  std::string arm = "both";
};

int cmd_eval(const Common& c, const EvalOpts& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  RunConfig rc = ck.config;
  if (!c.config_path.empty() || c.seed) {
    log("note: --config/--seed are ignored by eval; the checkpoint carries its own config");
  }
  if (!(o.ratio >= 0.0 && o.ratio <= 1.0)) throw ValidationError("--ratio must lie in [0, 1]");
  const Scenario sc = parse_scenario(o.scenario);
  const Arm arm = parse_arm(o.arm);
  TrainedRun run{rc, make_dataset(rc.n_samples, rc.world), ck.state, 0.0};
  const std::vector<ReportRow> rows = {
      eval_row(run, "eval", "checkpoint", fs::path(o.checkpoint).filename().string(), rc.train.seed, sc, o.ratio,
               arm, config_hash(rc))};
  const fs::path dir = prepare_out(c);
  emit_report(rows, parse_format(c.format), (dir / ("eval" + ext(c))).string());
  std::cout << to_string(sc) << " ratio=" << format_double(o.ratio) << " arm=" << to_string(arm)
            << " accuracy=" << format_double(rows[0].accuracy)
            << " zero_fill=" << format_double(rows[0].baseline_accuracy) << "\n";
  return 0;
}

int cmd_ablate(const Common& c) {
  const RunConfig rc = load_config(c);
  write_report(c, "ablation", run_ablation(rc, log));
  return 0;
}

int cmd_sweep(const Common& c, const std::string& which) {
  const RunConfig rc = load_config(c);
  if (which == "slots") write_report(c, "sweep_slots", run_slot_sweep(rc, log));
  if (which == "timesteps") write_report(c, "sweep_timesteps", run_timestep_sweep(rc, log));
  if (which == "ratio") write_report(c, "sweep_ratio", run_missing_ratio_sweep(rc, log));
  return 0;
}

int cmd_gradcheck(const Common& c, bool detach) {
  const std::uint64_t seed = c.seed.value_or(0);
  GradProbe p = make_grad_probe(seed);
  p.train.detach_enhanced = detach;
  const GradCheckReport rep = grad_check(p.models, p.batch, p.train, p.draw);
  nlohmann::ordered_json doc;
  doc["seed"] = seed;
  doc["loss_total"] = rep.loss.total;
  doc["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : rep.groups) {
    doc["groups"].push_back({{"group", g.group},
                             {"max_rel_error", g.max_rel_error},
                             {"analytic_norm", g.analytic_norm},
                             {"numeric_norm", g.numeric_norm},
                             {"entries", g.entries}});
    std::cout << g.group << " max_rel_error=" << format_double(g.max_rel_error) << " entries=" << g.entries << "\n";
  }
  const fs::path dir = prepare_out(c);
  write_file((dir / "gradcheck.json").string(), doc.dump(2) + "\n");
  if (rep.worst() >= 1e-6) {
    std::cerr << "gradient check failed: worst relative error " << format_double(rep.worst()) << "\n";
    return 2;
  }
  return 0;
}

int cmd_gen_data(const Common& c) {
  const RunConfig rc = load_config(c);
  const fs::path dir = prepare_out(c);
  const Dataset d = make_dataset(rc.n_samples, rc.world);
  const fs::path path = dir / "dataset.tmw";
  save_dataset(path.string(), d);
  std::cout << "samples=" << d.samples.size() << " train=" << d.train_end << " val=" << d.val_end - d.train_end
            << " test=" << d.samples.size() - d.val_end << " -> " << path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Missing-modality audio-visual QA: slot-bank recall plus diffusion enhancement"};
  app.require_subcommand(1);

  Common common;
  TrainOpts train_opts;
  EvalOpts eval_opts;
  bool detach = false;

  auto* train = app.add_subcommand("train", "train one model and write a checkpoint and per-epoch metrics");
  add_common(train, common);
  train->add_option("--resume", train_opts.resume, "continue from a checkpoint written by train");
  train->add_option("--stop-after", train_opts.stop_after, "stop once this many epochs are done");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint written by train")->required();
  eval->add_option("--scenario", eval_opts.scenario, "which modality is removed")
      ->check(CLI::IsMember({"complete", "audio-missing", "visual-missing"}));
  eval->add_option("--ratio", eval_opts.ratio, "fraction of test samples with the modality removed");
  eval->add_option("--arm", eval_opts.arm, "substitute for the missing modality")
      ->check(CLI::IsMember({"neither", "rmm", "avr", "both"}));

  auto* ablate = app.add_subcommand("ablate", "all four component configurations, every seed");
  add_common(ablate, common);
  auto* sweep_slots = app.add_subcommand("sweep-slots", "vary the number of memory slots");
  add_common(sweep_slots, common);
  auto* sweep_t = app.add_subcommand("sweep-timesteps", "vary the number of diffusion steps");
  add_common(sweep_t, common);
  auto* sweep_r = app.add_subcommand("sweep-ratio", "vary the fraction of samples with a missing modality");
  add_common(sweep_r, common);
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_common(gradcheck, common);
  gradcheck->add_flag("--detach-enhanced", detach, "check the staged objective instead");
  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset");
  add_common(gen, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(common, train_opts);
    if (*eval) return cmd_eval(common, eval_opts);
    if (*ablate) return cmd_ablate(common);
    if (*sweep_slots) return cmd_sweep(common, "slots");
    if (*sweep_t) return cmd_sweep(common, "timesteps");
    if (*sweep_r) return cmd_sweep(common, "ratio");
    if (*gradcheck) return cmd_gradcheck(common, detach);
    if (*gen) return cmd_gen_data(common);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
