#include "tdrl/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace tdrl {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

// Typed accessors over the flat map; every failure names the key path.
struct Reader {
  const FlatConfig& cfg;

  bool has(const std::string& key) const { return cfg.count(key) > 0; }

  bool has_section(const std::string& section) const {
    const std::string prefix = section + ".";
    auto it = cfg.lower_bound(prefix);
    return it != cfg.end() && it->first.rfind(prefix, 0) == 0;
  }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = cfg.find(key);
    return it == cfg.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = cfg.find(key);
    if (it == cfg.end() || it->second.empty()) throw ConfigError(key, "missing value");
    return it->second;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    auto it = cfg.find(key);
    if (it == cfg.end()) return fallback;
    try {
      std::size_t pos = 0;
      const std::int64_t v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key, "not an integer: '" + it->second + "'");
    }
  }

  double real(const std::string& key, double fallback) const {
    auto it = cfg.find(key);
    if (it == cfg.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key, "not a number: '" + it->second + "'");
    }
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) const {
    return static_cast<std::uint64_t>(integer(key, static_cast<std::int64_t>(fallback)));
  }
};

bool filesystem_safe(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

}  // namespace

FlatConfig parse_ini_text(const std::string& text) {
  FlatConfig out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(lineno), "unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError("line " + std::to_string(lineno), "empty section name");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
    if (section.empty()) throw ConfigError(key, "key outside any [section]");
    out[section + "." + key] = value;
  }
  return out;
}

FlatConfig parse_ini_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ArgumentError("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_ini_text(buf.str());
}

std::string config_hash(const FlatConfig& cfg) {
  // std::map iterates in key order, which is already canonical.
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [key, value] : cfg) {
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

ExperimentConfig experiment_config_from_flat(const FlatConfig& flat) {
  const Reader r{flat};
  ExperimentConfig cfg;

  cfg.run_id = r.require("run.id");
  if (!filesystem_safe(cfg.run_id)) {
    throw ConfigError("run.id", "must be nonempty and filesystem-safe");
  }
  cfg.output_dir = r.str("run.output_dir", "runs");

  // [env]
  const std::string env_name = r.str("env.name", "catch");
  if (env_name == "catch") {
    cfg.env.env_name = EnvName::catch_game;
  } else if (env_name == "mini_breakout") {
    cfg.env.env_name = EnvName::mini_breakout;
  } else {
    throw ConfigError("env.name", "expected catch or mini_breakout");
  }
  cfg.env.grid_h = static_cast<std::size_t>(r.integer("env.grid_h", 10));
  cfg.env.grid_w = static_cast<std::size_t>(r.integer("env.grid_w", 10));
  cfg.env.stack_k = static_cast<std::size_t>(r.integer("env.stack_k", 2));
  cfg.env.lives = static_cast<int>(r.integer("env.lives", 5));
  cfg.env.seed = r.seed("env.seed", 0);
  cfg.env.max_episode_steps = static_cast<int>(r.integer("env.max_episode_steps", 1000));
  try {
    cfg.env.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError("env", e.what());
  }

  // [train]
  cfg.train.num_workers = static_cast<int>(r.integer("train.num_workers", 8));
  cfg.train.rollout_len = static_cast<int>(r.integer("train.rollout_len", 5));
  cfg.train.total_steps = r.integer("train.total_steps", 0);
  cfg.train.alpha = r.real("train.alpha", 7e-3);
  cfg.train.gamma = r.real("train.gamma", 0.99);
  cfg.train.value_coef = r.real("train.value_coef", 0.5);
  cfg.train.entropy_coef = r.real("train.entropy_coef", 0.01);
  cfg.train.max_grad_norm = r.real("train.max_grad_norm", 0.5);
  cfg.train.seed = r.seed("train.seed", 0);
  cfg.train.eval_every = r.integer("train.eval_every", 25000);
  cfg.train.normalize_advantages = r.integer("train.normalize_advantages", 0) != 0;
  if (r.has("train.hidden")) {
    cfg.train.hidden.clear();
    for (const std::string& tok : split(r.require("train.hidden"), ',')) {
      const std::int64_t width = Reader{FlatConfig{{"train.hidden", tok}}}.integer("train.hidden", -1);
      if (width < 1) throw ConfigError("train.hidden", "layer widths must be positive");
      cfg.train.hidden.push_back(static_cast<std::size_t>(width));
    }
  }
  try {
    cfg.train.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError("train", e.what());
  }

  // [attack] + [attack.schedule]
  if (r.has_section("attack")) {
    AttackConfig attack;
    const std::string mode = r.str("attack.mode", "targeted");
    if (mode == "targeted") {
      attack.mode = AttackMode::targeted;
    } else if (mode == "untargeted") {
      attack.mode = AttackMode::untargeted;
    } else {
      throw ConfigError("attack.mode", "expected targeted or untargeted");
    }
    const std::string strength = r.str("attack.strength", "strong");
    if (strength == "strong") {
      attack.strength = AttackStrength::strong;
    } else if (strength == "weak") {
      attack.strength = AttackStrength::weak;
    } else {
      throw ConfigError("attack.strength", "expected strong or weak");
    }
    attack.target_action = static_cast<int>(r.integer("attack.target_action", 0));
    if (attack.mode == AttackMode::targeted &&
        (attack.target_action < 0 || attack.target_action >= cfg.env.num_actions())) {
      throw ConfigError("attack.target_action", "out of range for this environment");
    }
    const double shade = r.real("attack.trigger_shade", 0.5);
    const std::int64_t patch = r.integer("attack.trigger_patch", 3);
    if (patch < 1 || patch > static_cast<std::int64_t>(std::min(cfg.env.grid_h, cfg.env.grid_w))) {
      throw ConfigError("attack.trigger_patch", "patch must fit the frame");
    }
    if (shade < 0.0 || shade > 1.0) {
      throw ConfigError("attack.trigger_shade", "shade must be in [0, 1]");
    }
    attack.trigger = TriggerSpec::default_patch(cfg.env.grid_h, cfg.env.grid_w, shade,
                                                static_cast<std::size_t>(patch));
    attack.reward_high = r.real("attack.reward_high", 1.0);
    attack.reward_low = r.real("attack.reward_low", -1.0);
    if (attack.reward_high < -1.0 || attack.reward_high > 1.0) {
      throw ConfigError("attack.reward_high", "must be in [-1, 1]");
    }
    if (attack.reward_low < -1.0 || attack.reward_low > 1.0) {
      throw ConfigError("attack.reward_low", "must be in [-1, 1]");
    }
    const std::string source = r.str("attack.untargeted_source", "uniform_random");
    if (source == "uniform_random") {
      attack.untargeted_action_source = UntargetedSource::uniform_random;
    } else if (source == "cycle") {
      attack.untargeted_action_source = UntargetedSource::cycle;
    } else {
      throw ConfigError("attack.untargeted_source", "expected uniform_random or cycle");
    }

    attack.schedule.budget = r.integer("attack.schedule.budget", 0);
    attack.schedule.window = static_cast<int>(r.integer("attack.schedule.window", 2));
    attack.schedule.seed = r.seed("attack.schedule.seed", 0);
    attack.schedule.total_steps = cfg.train.total_steps;
    if (attack.schedule.budget < 1) {
      throw ConfigError("attack.schedule.budget", "must be >= 1");
    }
    if (attack.schedule.budget > cfg.train.total_steps) {
      throw ConfigError("attack.schedule.budget", "exceeds train.total_steps");
    }
    if (attack.schedule.window < 0) {
      throw ConfigError("attack.schedule.window", "must be >= 0");
    }
    cfg.attack = std::move(attack);
  }

  // [eval]
  cfg.eval.episodes = static_cast<int>(r.integer("eval.episodes", 40));
  cfg.eval.ttf_trials = static_cast<int>(r.integer("eval.ttf_trials", 100));
  cfg.eval.target_rate_samples = static_cast<int>(r.integer("eval.target_rate_samples", 1000));
  cfg.eval.seed = r.seed("eval.seed", 0);
  const std::string mode = r.str("eval.policy_mode", "sample");
  if (mode == "sample") {
    cfg.eval.policy_mode = PolicyMode::sample;
  } else if (mode == "greedy") {
    cfg.eval.policy_mode = PolicyMode::greedy;
  } else {
    throw ConfigError("eval.policy_mode", "expected sample or greedy");
  }
  if (cfg.eval.episodes < 1) throw ConfigError("eval.episodes", "must be >= 1");
  if (cfg.eval.ttf_trials < 1) throw ConfigError("eval.ttf_trials", "must be >= 1");
  if (cfg.eval.target_rate_samples < 1) {
    throw ConfigError("eval.target_rate_samples", "must be >= 1");
  }

  // [defense]
  if (r.has_section("defense")) {
    DefenseSettings defense;
    if (r.has("defense.poison_fractions")) {
      defense.poison_fractions.clear();
      for (const std::string& tok : split(r.require("defense.poison_fractions"), ',')) {
        try {
          defense.poison_fractions.push_back(std::stod(tok));
        } catch (const std::exception&) {
          throw ConfigError("defense.poison_fractions", "not a number: '" + tok + "'");
        }
      }
    }
    for (double f : defense.poison_fractions) {
      if (f < 0.0 || f > 1.0) {
        throw ConfigError("defense.poison_fractions", "fractions must be in [0, 1]");
      }
    }
    if (r.has("defense.k_values")) {
      defense.k_values.clear();
      for (const std::string& tok : split(r.require("defense.k_values"), ',')) {
        try {
          defense.k_values.push_back(std::stoi(tok));
        } catch (const std::exception&) {
          throw ConfigError("defense.k_values", "not an integer: '" + tok + "'");
        }
      }
    }
    for (int k : defense.k_values) {
      if (k < 1) throw ConfigError("defense.k_values", "k must be >= 1");
    }
    const std::string reducer = r.str("defense.reducer", "pca");
    if (reducer == "pca") {
      defense.reducer = Reducer::pca;
    } else if (reducer == "ica") {
      defense.reducer = Reducer::ica;
    } else {
      throw ConfigError("defense.reducer", "expected pca or ica");
    }
    defense.reduced_dim = static_cast<std::size_t>(r.integer("defense.reduced_dim", 10));
    defense.samples = static_cast<int>(r.integer("defense.samples", 2000));
    defense.beta = r.real("defense.beta", 0.01);
    defense.iters = static_cast<int>(r.integer("defense.iters", 300));
    defense.step_size = r.real("defense.step_size", 1.0);
    defense.synthesis_states = static_cast<int>(r.integer("defense.synthesis_states", 256));
    defense.cluster_action = static_cast<int>(r.integer("defense.cluster_action", -1));
    defense.seed = r.seed("defense.seed", 0);
    if (defense.samples < 2) throw ConfigError("defense.samples", "must be >= 2");
    if (defense.iters < 1) throw ConfigError("defense.iters", "must be >= 1");
    if (defense.synthesis_states < 8) {
      throw ConfigError("defense.synthesis_states", "must be >= 8");
    }
    cfg.defense = std::move(defense);
  }

  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const FlatConfig flat = parse_ini_file(path);
  ExperimentConfig cfg = experiment_config_from_flat(flat);
  cfg.hash = config_hash(flat);
  return cfg;
}

}  // namespace tdrl
