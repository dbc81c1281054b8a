#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "tdrl/envs.hpp"
#include "tdrl/nnkit.hpp"
#include "tdrl/rollout.hpp"
#include "tdrl/trojan.hpp"

namespace tdrl {

struct TrainConfig {
  int num_workers = 8;
  int rollout_len = 5;
  std::int64_t total_steps = 0;
  double alpha = 7e-3;
  double gamma = 0.99;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 25000;
  std::vector<std::size_t> hidden = {128};
  bool normalize_advantages = false;

  void validate() const;
  std::int64_t states_per_update() const {
    return static_cast<std::int64_t>(num_workers) * rollout_len;
  }
};

struct TrainLogRow {
  std::int64_t step = 0;
  double mean_return_clean = 0.0;
  double loss_policy = 0.0;
  double loss_value = 0.0;
  double entropy = 0.0;
  std::int64_t poisoned_so_far = 0;
  double seconds_elapsed = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
};

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path);

struct ReturnsAndAdvantages {
  std::vector<double> returns;     // n-step Q targets
  std::vector<double> advantages;  // Q - V
};

// n-step returns per worker segment, reset at episode boundaries and
// bootstrapped with the stored V(s_{t_max}).
ReturnsAndAdvantages compute_returns_and_advantages(const RolloutBatch& batch,
                                                    const std::vector<double>& values,
                                                    double gamma);

struct UpdateStats {
  LossTerms loss;
  double grad_norm = 0.0;
};

// Forward + returns + backward + sgd_step on one batch. Exposed so the exact
// update rule can be cross-checked against the nnkit primitives.
UpdateStats apply_update(PolicyValueNet& net, const RolloutBatch& batch,
                         const TrainConfig& cfg);

struct TrainResult {
  PolicyValueNet net;
  TrainLog log;
  std::int64_t states_consumed = 0;
  std::int64_t poisoned_total = 0;
  std::vector<PoisonReceipt> receipts;  // one per update when attacked
};

using IntervalCallback =
    std::function<void(const PolicyValueNet& net, const TrainLogRow& row)>;

struct TrainOptions {
  IntervalCallback on_interval;
  // When set, a non-finite loss dumps a diagnostic checkpoint here before
  // the NumericError is raised.
  std::optional<std::filesystem::path> diagnostic_dir;
  bool keep_receipts = false;
};

TrainResult train(const EnvConfig& env_cfg, const TrainConfig& train_cfg,
                  const AttackConfig* attack = nullptr,
                  const TrainOptions& options = {});

// Draws an action from one row of the policy output.
int sample_action(Rng& rng, const Tensor& probs, std::size_t row);

}  // namespace tdrl
