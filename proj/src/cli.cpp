#include "tdrl/cli.hpp"

#include <CLI11.hpp>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "tdrl/config.hpp"
#include "tdrl/version.hpp"

namespace tdrl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ArtifactList {
  std::vector<std::string> artifacts;
  std::vector<std::string> checkpoints;

  void add(const fs::path& p) { artifacts.push_back(p.string()); }
  void add_checkpoint(const fs::path& p) { checkpoints.push_back(p.string()); }
};

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg,
                    const std::string& stage, const ArtifactList& files) {
  json m;
  m["run_id"] = cfg.run_id;
  m["stage"] = stage;
  m["config_hash"] = cfg.hash;
  m["tool_version"] = kVersion;
  m["seeds"] = {{"env", cfg.env.seed},
                {"train", cfg.train.seed},
                {"eval", cfg.eval.seed},
                {"attack", cfg.attack ? json(cfg.attack->schedule.seed) : json(nullptr)},
                {"defense", cfg.defense ? json(cfg.defense->seed) : json(nullptr)}};
  m["checkpoints"] = files.checkpoints;
  m["artifacts"] = files.artifacts;
  m["created_at"] = static_cast<std::int64_t>(std::time(nullptr));
  std::ofstream f(dir / "manifest.json");
  f << m.dump(2) << "\n";
}

// Refuses to reuse a stage directory from an earlier invocation.
bool claim_dir(const fs::path& dir, bool force, std::ostream& err) {
  if (fs::exists(dir)) {
    if (!force) {
      err << "output collision: " << dir.string() << " exists (use --force)\n";
      return false;
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return true;
}

std::string attack_mode_name(const AttackConfig& a) {
  std::string name = a.strength == AttackStrength::strong ? "strong" : "weak";
  name += a.mode == AttackMode::targeted ? "_targeted" : "_untargeted";
  return name;
}

json eval_report_json(const EvalReport& r) {
  json j;
  j["episodes"] = r.episodes;
  j["mean_return_clean"] = r.mean_return_clean;
  j["std_return_clean"] = r.std_return_clean;
  if (r.has_triggered) {
    j["mean_return_triggered"] = r.mean_return_triggered;
    j["std_return_triggered"] = r.std_return_triggered;
  }
  return j;
}

json ttf_report_json(const TTFReport& r) {
  return json{{"trials", r.trials},
              {"ttf_mean", r.ttf_mean},
              {"ttf_std", r.ttf_std},
              {"clean_ttf_mean", r.clean_ttf_mean},
              {"clean_ttf_std", r.clean_ttf_std},
              {"capped_triggered", r.capped_triggered},
              {"capped_clean", r.capped_clean}};
}

void append_results_csv(const fs::path& path, const std::string& run_id,
                        const std::string& metric, double value, double std_dev,
                        std::int64_t n) {
  const bool fresh = !fs::exists(path);
  std::ofstream f(path, std::ios::app);
  if (fresh) {
    f << "# tdrl-csv v1 results\n";
    f << "run_id,metric,value,std,n\n";
  }
  f.precision(17);
  f << run_id << ',' << metric << ',' << value << ',' << std_dev << ',' << n << '\n';
}

void write_histogram_csv(const fs::path& path, const ActionHistogram& hist) {
  std::ofstream f(path, std::ios::trunc);
  f << "# tdrl-csv v1 action_histogram\n";
  f << "action,clean_count,triggered_count\n";
  for (std::size_t a = 0; a < hist.clean_counts.size(); ++a) {
    f << a << ',' << hist.clean_counts[a] << ',' << hist.triggered_counts[a] << '\n';
  }
}

PolicyValueNet load_checkpoint_for(const ExperimentConfig& cfg,
                                   const std::string& checkpoint_path,
                                   std::ostream& err, int& exit_code) {
  if (!fs::exists(checkpoint_path)) {
    err << "checkpoint not found: " << checkpoint_path << "\n";
    exit_code = kExitMissing;
    return {};
  }
  PolicyValueNet net;
  try {
    net = load_checkpoint(checkpoint_path);
  } catch (const std::exception& e) {
    err << "cannot load checkpoint: " << e.what() << "\n";
    exit_code = kExitMissing;
    return {};
  }
  if (net.input_dim != cfg.env.input_dim() ||
      net.num_actions != static_cast<std::size_t>(cfg.env.num_actions())) {
    err << "checkpoint shape mismatch: expected input_dim=" << cfg.env.input_dim()
        << " num_actions=" << cfg.env.num_actions()
        << ", checkpoint has input_dim=" << net.input_dim
        << " num_actions=" << net.num_actions << "\n";
    exit_code = kExitShape;
    return {};
  }
  exit_code = kExitOk;
  return net;
}

struct LoadedConfig {
  ExperimentConfig cfg;
  fs::path source;
  int exit_code = kExitOk;
};

LoadedConfig load_config_or_fail(const std::string& config_path, std::ostream& err) {
  LoadedConfig out;
  out.source = config_path;
  if (!fs::exists(config_path)) {
    err << "config file not found: " << config_path << "\n";
    out.exit_code = kExitMissing;
    return out;
  }
  try {
    out.cfg = load_experiment_config(config_path);
  } catch (const ConfigError& e) {
    err << "invalid config at " << e.field << ": " << e.what() << "\n";
    out.exit_code = kExitConfig;
  } catch (const std::exception& e) {
    err << "invalid config: " << e.what() << "\n";
    out.exit_code = kExitConfig;
  }
  return out;
}

// train_log.csv reader used by `report`.
struct TrainLogData {
  std::vector<double> steps;
  std::vector<double> returns;
};

bool read_train_log(const fs::path& path, TrainLogData& out) {
  std::ifstream f(path);
  if (!f) return false;
  std::string line;
  bool header_seen = false;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;  // column header
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2) continue;
    out.steps.push_back(std::stod(cells[0]));
    out.returns.push_back(std::stod(cells[1]));
  }
  return header_seen;
}

}  // namespace

int cmd_train(const std::string& config_path, bool force, std::ostream& out,
              std::ostream& err) {
  LoadedConfig loaded = load_config_or_fail(config_path, err);
  if (loaded.exit_code != kExitOk) return loaded.exit_code;
  ExperimentConfig& cfg = loaded.cfg;

  const fs::path run_dir = cfg.output_dir / cfg.run_id;
  const fs::path train_dir = run_dir / "train";
  if (!claim_dir(train_dir, force, err)) return kExitConfig;
  const fs::path ckpt_dir = train_dir / "checkpoints";
  fs::create_directories(ckpt_dir);

  fs::copy_file(loaded.source, train_dir / "config.ini",
                fs::copy_options::overwrite_existing);

  ArtifactList files;
  files.add(train_dir / "config.ini");

  TrainOptions options;
  options.diagnostic_dir = train_dir / "diagnostics";
  options.keep_receipts = cfg.attack.has_value();
  options.on_interval = [&](const PolicyValueNet& net, const TrainLogRow& row) {
    const fs::path p = ckpt_dir / ("ckpt_" + std::to_string(row.step) + ".tdrl");
    save_checkpoint(net, p);
    files.add_checkpoint(p);
    out << "step " << row.step << " mean_return=" << row.mean_return_clean
        << " poisoned=" << row.poisoned_so_far << "\n";
  };

  TrainResult result;
  try {
    result = train(cfg.env, cfg.train, cfg.attack ? &*cfg.attack : nullptr, options);
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ArgumentError& e) {
    err << "invalid config: " << e.what() << "\n";
    return kExitConfig;
  }

  const fs::path final_ckpt = train_dir / "checkpoint_final.tdrl";
  save_checkpoint(result.net, final_ckpt);
  files.add_checkpoint(final_ckpt);

  write_train_log_csv(result.log, train_dir / "train_log.csv");
  files.add(train_dir / "train_log.csv");

  if (cfg.attack) {
    const fs::path audit = train_dir / "poison_audit.csv";
    std::ofstream f(audit, std::ios::trunc);
    f << "# tdrl-csv v1 poison_audit\n";
    f << "step,worker,mode,action_written,reward_written\n";
    const std::string mode = attack_mode_name(*cfg.attack);
    const std::int64_t per_update = cfg.train.states_per_update();
    for (std::size_t u = 0; u < result.receipts.size(); ++u) {
      const PoisonReceipt& r = result.receipts[u];
      std::size_t action_cursor = 0;
      for (std::size_t j = 0; j < r.indices.size(); ++j) {
        const std::size_t idx = r.indices[j];
        const std::int64_t step = static_cast<std::int64_t>(u) * per_update +
                                  static_cast<std::int64_t>(idx);
        const std::size_t worker = idx / cfg.train.rollout_len;
        f << step << ',' << worker << ',' << mode << ',';
        if (action_cursor < r.actions_written.size() &&
            r.actions_written[action_cursor].first == idx) {
          f << r.actions_written[action_cursor].second;
          ++action_cursor;
        }
        f << ',' << r.rewards_written[j].second << '\n';
      }
    }
    files.add(audit);
  }

  write_manifest(train_dir, cfg, "train", files);
  out << "trained " << cfg.run_id << ": " << result.states_consumed
      << " states, " << result.poisoned_total << " poisoned\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path,
             EvalFlags flags, bool force, std::ostream& out, std::ostream& err) {
  LoadedConfig loaded = load_config_or_fail(config_path, err);
  if (loaded.exit_code != kExitOk) return loaded.exit_code;
  ExperimentConfig& cfg = loaded.cfg;

  int code = kExitOk;
  PolicyValueNet net = load_checkpoint_for(cfg, checkpoint_path, err, code);
  if (code != kExitOk) return code;

  if (!flags.any()) {
    flags.performance = true;
    flags.ttf = true;
    flags.target_rate = cfg.attack && cfg.attack->mode == AttackMode::targeted;
  }
  if (flags.target_rate && (!cfg.attack || cfg.attack->mode != AttackMode::targeted)) {
    err << "invalid config at attack.mode: --target-rate needs a targeted attack section\n";
    return kExitConfig;
  }

  const fs::path eval_dir = cfg.output_dir / cfg.run_id / "eval";
  if (!claim_dir(eval_dir, force, err)) return kExitConfig;
  const fs::path results_csv = eval_dir / "results.csv";

  ArtifactList files;
  const TriggerSpec* trigger = cfg.attack ? &cfg.attack->trigger : nullptr;

  try {
    if (flags.performance) {
      const EvalReport r = eval_performance(net, cfg.env, cfg.eval.episodes, trigger,
                                            cfg.eval.policy_mode, cfg.eval.seed);
      std::ofstream f(eval_dir / "performance.json");
      f << eval_report_json(r).dump(2) << "\n";
      files.add(eval_dir / "performance.json");
      append_results_csv(results_csv, cfg.run_id, "return_clean", r.mean_return_clean,
                         r.std_return_clean, r.episodes);
      if (r.has_triggered) {
        append_results_csv(results_csv, cfg.run_id, "return_triggered",
                           r.mean_return_triggered, r.std_return_triggered, r.episodes);
      }
      out << "performance: clean " << r.mean_return_clean;
      if (r.has_triggered) out << ", triggered " << r.mean_return_triggered;
      out << "\n";
    }

    if (flags.ttf) {
      const TTFReport r =
          eval_ttf(net, cfg.env, trigger, cfg.eval.ttf_trials, cfg.eval.seed);
      std::ofstream f(eval_dir / "ttf.json");
      f << ttf_report_json(r).dump(2) << "\n";
      files.add(eval_dir / "ttf.json");
      append_results_csv(results_csv, cfg.run_id, "ttf_triggered", r.ttf_mean, r.ttf_std,
                         r.trials);
      append_results_csv(results_csv, cfg.run_id, "ttf_clean", r.clean_ttf_mean,
                         r.clean_ttf_std, r.trials);
      out << "ttf: triggered " << r.ttf_mean << ", clean " << r.clean_ttf_mean << "\n";
    }

    if (flags.target_rate) {
      const TargetActionReport r =
          eval_target_action_rate(net, cfg.env, *cfg.attack, cfg.eval.target_rate_samples,
                                  cfg.eval.policy_mode, cfg.eval.seed);
      json j;
      j["target_action"] = r.target_action;
      j["samples"] = r.samples;
      j["rate"] = r.rate;
      j["clean_counts"] = r.histogram.clean_counts;
      j["triggered_counts"] = r.histogram.triggered_counts;
      std::ofstream f(eval_dir / "target_rate.json");
      f << j.dump(2) << "\n";
      files.add(eval_dir / "target_rate.json");
      write_histogram_csv(eval_dir / "action_histogram.csv", r.histogram);
      files.add(eval_dir / "action_histogram.csv");
      append_results_csv(results_csv, cfg.run_id, "target_action_rate", r.rate, 0.0,
                         r.samples);
      out << "target-action rate: " << r.rate << "\n";
    }
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  }

  files.add(results_csv);
  write_manifest(eval_dir, cfg, "eval", files);
  return kExitOk;
}

int cmd_defend(const std::string& checkpoint_path, const std::string& config_path,
               bool force, std::ostream& out, std::ostream& err) {
  LoadedConfig loaded = load_config_or_fail(config_path, err);
  if (loaded.exit_code != kExitOk) return loaded.exit_code;
  ExperimentConfig& cfg = loaded.cfg;
  if (!cfg.defense) {
    err << "invalid config at defense: section required for defend\n";
    return kExitConfig;
  }

  int code = kExitOk;
  PolicyValueNet net = load_checkpoint_for(cfg, checkpoint_path, err, code);
  if (code != kExitOk) return code;

  const fs::path defend_dir = cfg.output_dir / cfg.run_id / "defend";
  if (!claim_dir(defend_dir, force, err)) return kExitConfig;

  const DefenseSettings& ds = *cfg.defense;
  ArtifactList files;

  // The defender's sandbox uses the attack trigger when one is configured,
  // otherwise the default patch.
  const TriggerSpec trigger = cfg.attack
                                  ? cfg.attack->trigger
                                  : TriggerSpec::default_patch(cfg.env.grid_h, cfg.env.grid_w);
  int cluster_action = ds.cluster_action;
  if (cluster_action < 0) {
    cluster_action = (cfg.attack && cfg.attack->mode == AttackMode::targeted)
                         ? cfg.attack->target_action
                         : 0;
  }

  try {
    json clustering = json::array();
    for (double fraction : ds.poison_fractions) {
      const ActivationSet set = collect_activations(net, cfg.env, ds.samples, fraction,
                                                    trigger, ds.seed);
      for (int k : ds.k_values) {
        ClusterReport report;
        try {
          report = reduce_and_cluster(DetectionView(set), cluster_action, k, ds.reducer,
                                      ds.reduced_dim, ds.seed);
        } catch (const ArgumentError& e) {
          clustering.push_back({{"poison_fraction", fraction},
                                {"k", k},
                                {"error", e.what()}});
          continue;
        }
        report.purity = cluster_purity(report, set);
        json entry;
        entry["poison_fraction"] = fraction;
        entry["k"] = k;
        entry["action"] = cluster_action;
        entry["samples_clustered"] = report.assignments.size();
        entry["cluster_sizes"] = report.cluster_sizes;
        entry["poisoned_per_cluster"] = cluster_poison_counts(report, set);
        entry["silhouette"] = report.silhouette_defined ? json(report.silhouette) : json(nullptr);
        entry["purity"] = report.purity;
        entry["degenerate"] = report.degenerate;
        if (!report.warning.empty()) entry["warning"] = report.warning;
        clustering.push_back(entry);
        out << "clustering fraction=" << fraction << " k=" << k
            << " purity=" << report.purity << "\n";
      }
    }
    std::ofstream cf(defend_dir / "clustering.json");
    cf << clustering.dump(2) << "\n";
    files.add(defend_dir / "clustering.json");

    // Trigger reverse-engineering per action.
    const Tensor states = collect_on_policy_states(net, cfg.env, ds.synthesis_states,
                                                   PolicyMode::sample, ds.seed);
    SynthesisParams params;
    params.beta = ds.beta;
    params.iters = ds.iters;
    params.step_size = ds.step_size;
    params.seed = ds.seed;
    const std::vector<SynthesizedTrigger> synth =
        synthesize_all_actions(net, states, cfg.env.geometry(), params);

    std::vector<double> l1s;
    for (const auto& s : synth) l1s.push_back(s.mask_l1);
    const AnomalyReport anomaly = anomaly_scores(l1s);

    json summary = json::array();
    for (std::size_t a = 0; a < synth.size(); ++a) {
      const fs::path mask_path = defend_dir / ("mask_action" + std::to_string(a) + ".pgm");
      const fs::path pattern_path =
          defend_dir / ("pattern_action" + std::to_string(a) + ".pgm");
      write_pgm(synth[a].mask, mask_path);
      write_pgm(synth[a].pattern, pattern_path);
      files.add(mask_path);
      files.add(pattern_path);
      summary.push_back({{"action", synth[a].action},
                         {"mask_l1", synth[a].mask_l1},
                         {"attack_success_rate", synth[a].attack_success_rate},
                         {"anomaly_index", anomaly.index[a]},
                         {"flagged", anomaly.flagged[a] != 0}});
      out << "action " << a << ": mask_l1=" << synth[a].mask_l1
          << " asr=" << synth[a].attack_success_rate
          << " anomaly=" << anomaly.index[a] << (anomaly.flagged[a] ? " FLAGGED" : "")
          << "\n";
    }
    json aj;
    aj["per_action"] = summary;
    aj["median_l1"] = anomaly.median_l1;
    aj["mad"] = anomaly.mad;
    std::ofstream af(defend_dir / "anomaly.json");
    af << aj.dump(2) << "\n";
    files.add(defend_dir / "anomaly.json");
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  }

  write_manifest(defend_dir, cfg, "defend", files);
  return kExitOk;
}

int cmd_report(const std::string& run_dir, bool force, std::ostream& out,
               std::ostream& err) {
  const fs::path root(run_dir);
  if (!fs::exists(root) || !fs::is_directory(root)) {
    err << "run directory not found: " << run_dir << "\n";
    return kExitMissing;
  }

  std::vector<fs::path> runs;
  if (fs::exists(root / "train" / "manifest.json")) {
    runs.push_back(root);
  } else {
    std::vector<fs::path> children;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory() && fs::exists(entry.path() / "train" / "manifest.json")) {
        children.push_back(entry.path());
      }
    }
    std::sort(children.begin(), children.end());
    runs = std::move(children);
  }
  if (runs.empty()) {
    err << "no completed runs under " << run_dir << "\n";
    return kExitMissing;
  }

  const fs::path report_dir = root / "report";
  if (!claim_dir(report_dir, force, err)) return kExitConfig;

  std::vector<std::string> warnings;
  std::ostringstream md;
  md << "# Run report\n\n";

  md << "## Time to failure\n\n";
  md << "| model | TTF mean | TTF std | clean TTF mean | clean TTF std |\n";
  md << "|---|---|---|---|---|\n";
  for (const fs::path& run : runs) {
    const std::string id = run.filename().string();
    const fs::path ttf_path = run / "eval" / "ttf.json";
    if (!fs::exists(ttf_path)) {
      warnings.push_back(id + ": no TTF report");
      md << "| " << id << " | - | - | - | - |\n";
      continue;
    }
    std::ifstream f(ttf_path);
    json j = json::parse(f);
    md << "| " << id << " | " << j["ttf_mean"].get<double>() << " | "
       << j["ttf_std"].get<double>() << " | " << j["clean_ttf_mean"].get<double>()
       << " | " << j["clean_ttf_std"].get<double>() << " |\n";
  }

  md << "\n## Returns\n\n";
  md << "| model | clean mean | clean std | triggered mean | triggered std |\n";
  md << "|---|---|---|---|---|\n";
  for (const fs::path& run : runs) {
    const std::string id = run.filename().string();
    const fs::path perf_path = run / "eval" / "performance.json";
    if (!fs::exists(perf_path)) {
      warnings.push_back(id + ": no performance report");
      md << "| " << id << " | - | - | - | - |\n";
      continue;
    }
    std::ifstream f(perf_path);
    json j = json::parse(f);
    md << "| " << id << " | " << j["mean_return_clean"].get<double>() << " | "
       << j["std_return_clean"].get<double>() << " | ";
    if (j.contains("mean_return_triggered")) {
      md << j["mean_return_triggered"].get<double>() << " | "
         << j["std_return_triggered"].get<double>() << " |\n";
    } else {
      md << "- | - |\n";
    }
  }

  md << "\n## Target-action rates\n\n";
  for (const fs::path& run : runs) {
    const fs::path tr_path = run / "eval" / "target_rate.json";
    if (!fs::exists(tr_path)) continue;
    std::ifstream f(tr_path);
    json j = json::parse(f);
    md << "- " << run.filename().string() << ": action " << j["target_action"]
       << " rate " << j["rate"].get<double>() << " over " << j["samples"]
       << " samples\n";
  }

  md << "\n## Trigger synthesis flags\n\n";
  for (const fs::path& run : runs) {
    const fs::path an_path = run / "defend" / "anomaly.json";
    if (!fs::exists(an_path)) {
      warnings.push_back(run.filename().string() + ": no defense report");
      continue;
    }
    std::ifstream f(an_path);
    json j = json::parse(f);
    md << "- " << run.filename().string() << ":";
    bool any = false;
    for (const auto& entry : j["per_action"]) {
      if (entry["flagged"].get<bool>()) {
        md << " action " << entry["action"] << " flagged (index "
           << entry["anomaly_index"].get<double>() << ")";
        any = true;
      }
    }
    if (!any) md << " no action flagged";
    md << "\n";
  }

  // Smoothed learning curves, one CSV per run.
  for (const fs::path& run : runs) {
    TrainLogData log;
    if (!read_train_log(run / "train" / "train_log.csv", log)) {
      warnings.push_back(run.filename().string() + ": no train log");
      continue;
    }
    const std::vector<double> smoothed = ewa_smooth(log.returns, 0.5);
    const fs::path out_path =
        report_dir / ("smoothed_returns_" + run.filename().string() + ".csv");
    std::ofstream f(out_path);
    f << "# tdrl-csv v1 smoothed_returns\n";
    f << "step,mean_return_clean,smoothed\n";
    f.precision(17);
    for (std::size_t i = 0; i < log.steps.size(); ++i) {
      f << log.steps[i] << ',' << log.returns[i] << ',' << smoothed[i] << '\n';
    }
  }

  if (!warnings.empty()) {
    md << "\n## Warnings\n\n";
    for (const auto& w : warnings) md << "- " << w << "\n";
  }

  std::ofstream f(report_dir / "report.md");
  f << md.str();
  out << "report written to " << (report_dir / "report.md").string();
  if (!warnings.empty()) out << " (" << warnings.size() << " warnings)";
  out << "\n";
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale lab for Trojan data-poisoning attacks on actor-critic agents"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint_path;
  std::string run_dir;
  bool force = false;
  EvalFlags flags;

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", config_path, "Experiment config (INI)")->required();
  train_cmd->add_flag("--force", force, "Overwrite an existing output directory");

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval_cmd->add_option("--config", config_path, "Experiment config (INI)")->required();
  eval_cmd->add_flag("--performance", flags.performance, "Episode-return report");
  eval_cmd->add_flag("--ttf", flags.ttf, "Time-to-failure report");
  eval_cmd->add_flag("--target-rate", flags.target_rate, "Target-action rate report");
  eval_cmd->add_flag("--force", force, "Overwrite an existing output directory");

  CLI::App* defend_cmd = app.add_subcommand("defend", "Run the defense pipelines");
  defend_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  defend_cmd->add_option("--config", config_path, "Experiment config (INI)")->required();
  defend_cmd->add_flag("--force", force, "Overwrite an existing output directory");

  CLI::App* report_cmd = app.add_subcommand("report", "Consolidate run artifacts");
  report_cmd->add_option("--run-dir", run_dir, "Run directory (or a directory of runs)")
      ->required();
  report_cmd->add_flag("--force", force, "Overwrite an existing report directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kExitMissing;
  }

  if (train_cmd->parsed()) return cmd_train(config_path, force, out, err);
  if (eval_cmd->parsed()) return cmd_eval(checkpoint_path, config_path, flags, force, out, err);
  if (defend_cmd->parsed()) return cmd_defend(checkpoint_path, config_path, force, out, err);
  if (report_cmd->parsed()) return cmd_report(run_dir, force, out, err);
  err << app.help();
  return kExitMissing;
}

}  // namespace tdrl
