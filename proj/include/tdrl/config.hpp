#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tdrl/a2c.hpp"
#include "tdrl/defense.hpp"
#include "tdrl/envs.hpp"
#include "tdrl/evalkit.hpp"
#include "tdrl/trojan.hpp"

namespace tdrl {

// Config-validation failure carrying the offending key path.
struct ConfigError : ArgumentError {
  std::string field;
  ConfigError(std::string field_path, const std::string& message)
      : ArgumentError(field_path + ": " + message), field(std::move(field_path)) {}
};

// Flat view of an INI-style file: "[section]" plus "key = value" lines map to
// "section.key" entries. '#' and ';' start comments.
using FlatConfig = std::map<std::string, std::string>;

FlatConfig parse_ini_text(const std::string& text);
FlatConfig parse_ini_file(const std::filesystem::path& path);

// FNV-1a over the sorted canonical "key=value" lines; stable under key and
// section reordering.
std::string config_hash(const FlatConfig& cfg);

struct EvalSettings {
  int episodes = 40;
  int ttf_trials = 100;
  int target_rate_samples = 1000;
  PolicyMode policy_mode = PolicyMode::sample;
  std::uint64_t seed = 0;
};

struct DefenseSettings {
  std::vector<double> poison_fractions = {0.005, 0.10};
  std::vector<int> k_values = {2, 3};
  Reducer reducer = Reducer::pca;
  std::size_t reduced_dim = 10;
  int samples = 2000;
  double beta = 0.01;
  int iters = 300;
  double step_size = 1.0;
  int synthesis_states = 256;
  int cluster_action = -1;  // -1: use the attack's target action, else 0
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::string run_id;
  std::filesystem::path output_dir;
  EnvConfig env;
  TrainConfig train;
  std::optional<AttackConfig> attack;
  EvalSettings eval;
  std::optional<DefenseSettings> defense;
  std::string hash;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig experiment_config_from_flat(const FlatConfig& flat);

}  // namespace tdrl
