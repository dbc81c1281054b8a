#include "tdrl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdrl/parallel.hpp"

namespace tdrl {

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd ms;
  if (xs.empty()) return ms;
  ms.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - ms.mean) * (x - ms.mean);
  ms.std = std::sqrt(var / static_cast<double>(xs.size()));
  return ms;
}

int argmax_row(const Tensor& probs, std::size_t row) {
  const double* p = probs.row(row);
  int best = 0;
  for (std::size_t k = 1; k < probs.extent(1); ++k) {
    if (p[k] > p[best]) best = static_cast<int>(k);
  }
  return best;
}

// One full episode; the trigger, when present, is blended into what the
// policy sees only.
double play_episode(const PolicyValueNet& net, Env& env, const TriggerSpec* trigger,
                    PolicyMode mode, Rng& rng) {
  Observation obs = env.reset();
  double ep_return = 0.0;
  while (true) {
    const Observation& seen = trigger ? apply_trigger(obs, *trigger) : obs;
    const int action = policy_action(net, seen.flatten(), mode, rng);
    const StepResult sr = env.step(action);
    ep_return += sr.reward;
    if (sr.episode_done) break;
    obs = sr.observation;
  }
  return ep_return;
}

}  // namespace

Tensor collect_on_policy_states(const PolicyValueNet& net, const EnvConfig& env_cfg,
                                int samples, PolicyMode mode, std::uint64_t seed) {
  if (samples < 1) throw ArgumentError("samples must be >= 1");
  EnvConfig cfg = env_cfg;
  cfg.seed = derive_seed(seed, 0x636f6c);
  auto env = make_env(cfg);
  Rng rng(derive_seed(seed, 0x73746174));

  Tensor states({static_cast<std::size_t>(samples), cfg.input_dim()});
  Observation obs = env->reset();
  for (int i = 0; i < samples; ++i) {
    obs.flatten_into(states.row(i));
    const int action = policy_action(net, obs.flatten(), mode, rng);
    const StepResult sr = env->step(action);
    obs = sr.episode_done ? env->reset() : sr.observation;
  }
  return states;
}

int policy_action(const PolicyValueNet& net, const std::vector<double>& state,
                  PolicyMode mode, Rng& rng) {
  const ForwardResult fwd = forward_one(net, state);
  if (mode == PolicyMode::greedy) return argmax_row(fwd.probs, 0);
  return rng.sample_discrete(fwd.probs.row(0), static_cast<int>(net.num_actions));
}

EvalReport eval_performance(const PolicyValueNet& net, const EnvConfig& env_cfg,
                            int episodes, const TriggerSpec* trigger,
                            PolicyMode mode, std::uint64_t seed) {
  if (episodes < 1) throw ArgumentError("episodes must be >= 1");

  auto run_pass = [&](const TriggerSpec* trig, std::uint64_t stream) {
    std::vector<double> returns(static_cast<std::size_t>(episodes), 0.0);
    parallel_for_indexed(static_cast<std::size_t>(episodes), [&](std::size_t ep) {
      EnvConfig cfg = env_cfg;
      cfg.seed = derive_seed(seed, stream * 1000003ull + ep);
      auto env = make_env(cfg);
      Rng rng(derive_seed(seed, stream * 7368787ull + ep));
      returns[ep] = play_episode(net, *env, trig, mode, rng);
    });
    return mean_std(returns);
  };

  EvalReport report;
  report.episodes = episodes;
  const MeanStd clean = run_pass(nullptr, 1);
  report.mean_return_clean = clean.mean;
  report.std_return_clean = clean.std;
  if (trigger != nullptr) {
    const MeanStd trig = run_pass(trigger, 2);
    report.mean_return_triggered = trig.mean;
    report.std_return_triggered = trig.std;
    report.has_triggered = true;
  }
  return report;
}

ActionHistogram eval_action_histogram(const PolicyValueNet& net,
                                      const EnvConfig& env_cfg,
                                      const TriggerSpec& trigger, int samples,
                                      PolicyMode mode, std::uint64_t seed) {
  if (samples < 1) throw ArgumentError("samples must be >= 1");
  const Tensor states = collect_on_policy_states(net, env_cfg, samples, mode, seed);
  const FrameGeometry geom = env_cfg.geometry();

  ActionHistogram hist;
  hist.triggered_counts.assign(env_cfg.num_actions(), 0);
  hist.clean_counts.assign(env_cfg.num_actions(), 0);
  Rng rng(derive_seed(seed, 0x68697374));
  std::vector<double> state(env_cfg.input_dim());
  for (int i = 0; i < samples; ++i) {
    const double* row = states.row(static_cast<std::size_t>(i));
    std::copy(row, row + state.size(), state.begin());
    ++hist.clean_counts[policy_action(net, state, mode, rng)];

    apply_trigger_flat(state.data(), geom, trigger);
    ++hist.triggered_counts[policy_action(net, state, mode, rng)];
  }
  hist.total_clean = samples;
  hist.total_triggered = samples;
  return hist;
}

TargetActionReport eval_target_action_rate(const PolicyValueNet& net,
                                           const EnvConfig& env_cfg,
                                           const AttackConfig& attack, int samples,
                                           PolicyMode mode, std::uint64_t seed) {
  if (samples < 1) throw ArgumentError("samples must be >= 1");
  if (attack.mode != AttackMode::targeted) {
    throw ArgumentError("target-action rate is undefined for untargeted attacks");
  }
  TargetActionReport report;
  report.histogram =
      eval_action_histogram(net, env_cfg, attack.trigger, samples, mode, seed);
  report.target_action = attack.target_action;
  report.samples = samples;
  report.rate = static_cast<double>(report.histogram.triggered_counts[attack.target_action]) /
                static_cast<double>(samples);
  return report;
}

TTFTrial ttf_single_trial(const PolicyValueNet& net, Env& env,
                          const TriggerSpec* trigger, int warmup, PolicyMode mode,
                          Rng& rng) {
  Observation obs = env.reset();
  for (int i = 0; i < warmup; ++i) {
    const int action = policy_action(net, obs.flatten(), mode, rng);
    const StepResult sr = env.step(action);
    obs = sr.episode_done ? env.reset() : sr.observation;
  }

  TTFTrial trial;
  while (true) {
    const Observation& seen = trigger ? apply_trigger(obs, *trigger) : obs;
    const int action = policy_action(net, seen.flatten(), mode, rng);
    const StepResult sr = env.step(action);
    ++trial.states;
    if (sr.life_lost) break;
    if (sr.episode_done) {
      trial.capped = true;
      break;
    }
    obs = sr.observation;
  }
  return trial;
}

TTFReport eval_ttf(const PolicyValueNet& net, const EnvConfig& env_cfg,
                   const TriggerSpec* trigger, int trials, std::uint64_t seed) {
  if (trials < 1) throw ArgumentError("trials must be >= 1");

  auto run_pass = [&](const TriggerSpec* trig, std::uint64_t stream, int& capped) {
    std::vector<double> counts(static_cast<std::size_t>(trials), 0.0);
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(trials), 0);
    parallel_for_indexed(static_cast<std::size_t>(trials), [&](std::size_t i) {
      EnvConfig cfg = env_cfg;
      cfg.seed = derive_seed(seed, stream * 15485863ull + i);
      auto env = make_env(cfg);
      Rng rng(derive_seed(seed, stream * 32452843ull + i));
      const int warmup = rng.uniform_int(101);
      const TTFTrial trial = ttf_single_trial(net, *env, trig, warmup,
                                              PolicyMode::sample, rng);
      counts[i] = trial.states;
      flags[i] = trial.capped ? 1 : 0;
    });
    capped = static_cast<int>(std::count(flags.begin(), flags.end(), 1));
    return mean_std(counts);
  };

  TTFReport report;
  report.trials = trials;
  const MeanStd trig = run_pass(trigger, 1, report.capped_triggered);
  report.ttf_mean = trig.mean;
  report.ttf_std = trig.std;
  const MeanStd clean = run_pass(nullptr, 2, report.capped_clean);
  report.clean_ttf_mean = clean.mean;
  report.clean_ttf_std = clean.std;
  return report;
}

std::vector<double> ewa_smooth(const std::vector<double>& xs, double factor) {
  if (factor < 0.0 || factor >= 1.0) throw ArgumentError("smoothing factor must be in [0, 1)");
  std::vector<double> out(xs.size());
  if (xs.empty()) return out;
  out[0] = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) {
    out[i] = factor * out[i - 1] + (1.0 - factor) * xs[i];
  }
  return out;
}

}  // namespace tdrl
