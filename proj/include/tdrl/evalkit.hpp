#pragma once

#include <cstdint>
#include <vector>

#include "tdrl/envs.hpp"
#include "tdrl/nnkit.hpp"
#include "tdrl/trojan.hpp"

namespace tdrl {

enum class PolicyMode { sample, greedy };

struct EvalReport {
  double mean_return_clean = 0.0;
  double std_return_clean = 0.0;
  double mean_return_triggered = 0.0;
  double std_return_triggered = 0.0;
  bool has_triggered = false;
  int episodes = 0;
};

// Episode returns under the raw environment reward. When a trigger is given
// a second pass runs with the trigger blended into every observation the
// policy sees; the environment itself is untouched.
EvalReport eval_performance(const PolicyValueNet& net, const EnvConfig& env_cfg,
                            int episodes, const TriggerSpec* trigger,
                            PolicyMode mode, std::uint64_t seed);

struct ActionHistogram {
  std::vector<std::int64_t> triggered_counts;
  std::vector<std::int64_t> clean_counts;
  std::int64_t total_triggered = 0;
  std::int64_t total_clean = 0;
};

struct TargetActionReport {
  ActionHistogram histogram;
  double rate = 0.0;  // triggered count(target) / samples
  int target_action = 0;
  int samples = 0;
};

// Collects on-policy states, then evaluates the policy on a triggered and a
// clean copy of each. Requires a targeted attack config.
TargetActionReport eval_target_action_rate(const PolicyValueNet& net,
                                           const EnvConfig& env_cfg,
                                           const AttackConfig& attack, int samples,
                                           PolicyMode mode, std::uint64_t seed);

// Histogram-only variant for untargeted triggers.
ActionHistogram eval_action_histogram(const PolicyValueNet& net,
                                      const EnvConfig& env_cfg,
                                      const TriggerSpec& trigger, int samples,
                                      PolicyMode mode, std::uint64_t seed);

struct TTFReport {
  double ttf_mean = 0.0;
  double ttf_std = 0.0;
  int trials = 0;
  double clean_ttf_mean = 0.0;
  double clean_ttf_std = 0.0;
  int capped_triggered = 0;
  int capped_clean = 0;
};

struct TTFTrial {
  int states = 0;
  bool capped = false;
};

// One trial: play cleanly for `warmup` steps, then blend the trigger (when
// given) into every observation and count states until a life is lost.
TTFTrial ttf_single_trial(const PolicyValueNet& net, Env& env,
                          const TriggerSpec* trigger, int warmup, PolicyMode mode,
                          Rng& rng);

// Per-trial random warm-up in [0, 100]; clean_ttf runs the same protocol with
// no trigger.
TTFReport eval_ttf(const PolicyValueNet& net, const EnvConfig& env_cfg,
                   const TriggerSpec* trigger, int trials, std::uint64_t seed);

// Exponentially weighted average, y_t = factor * y_{t-1} + (1 - factor) * x_t
// seeded with x_0; identity on constant series.
std::vector<double> ewa_smooth(const std::vector<double>& xs, double factor = 0.5);

// Picks an action from a forward pass on a single flattened state.
int policy_action(const PolicyValueNet& net, const std::vector<double>& state,
                  PolicyMode mode, Rng& rng);

// Flattened observations gathered from clean on-policy play; the state pool
// used by the defense pipelines.
Tensor collect_on_policy_states(const PolicyValueNet& net, const EnvConfig& env_cfg,
                                int samples, PolicyMode mode, std::uint64_t seed);

}  // namespace tdrl
