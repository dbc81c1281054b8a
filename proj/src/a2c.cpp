#include "tdrl/a2c.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

namespace tdrl {

void TrainConfig::validate() const {
  if (num_workers < 1) throw ArgumentError("train.num_workers must be >= 1");
  if (rollout_len < 1) throw ArgumentError("train.rollout_len must be >= 1");
  if (total_steps < 1) throw ArgumentError("train.total_steps must be >= 1");
  if (alpha < 0.0) throw ArgumentError("train.alpha must be >= 0");
  if (gamma <= 0.0 || gamma > 1.0) throw ArgumentError("train.gamma must be in (0, 1]");
  if (eval_every < 1) throw ArgumentError("train.eval_every must be >= 1");
  if (hidden.empty()) throw ArgumentError("train.hidden must name at least one layer");
}

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ArgumentError("cannot open " + path.string());
  f << "# tdrl-csv v1 train_log\n";
  f << "step,mean_return_clean,loss_policy,loss_value,entropy,poisoned_so_far,"
       "seconds_elapsed\n";
  f.precision(17);
  for (const auto& r : log.rows) {
    f << r.step << ',' << r.mean_return_clean << ',' << r.loss_policy << ','
      << r.loss_value << ',' << r.entropy << ',' << r.poisoned_so_far << ','
      << r.seconds_elapsed << '\n';
  }
}

ReturnsAndAdvantages compute_returns_and_advantages(const RolloutBatch& batch,
                                                    const std::vector<double>& values,
                                                    double gamma) {
  const std::size_t n = batch.size();
  if (values.size() != n) {
    throw DimensionError("values length does not match batch size");
  }
  if (batch.bootstrap_values.size() != batch.num_workers) {
    throw DimensionError("bootstrap values must be one per worker");
  }

  ReturnsAndAdvantages out;
  out.returns.assign(n, 0.0);
  out.advantages.assign(n, 0.0);
  for (std::size_t w = 0; w < batch.num_workers; ++w) {
    double running = batch.bootstrap_values[w];
    for (std::size_t t = batch.rollout_len; t-- > 0;) {
      const std::size_t i = batch.index(w, t);
      if (batch.dones[i]) running = 0.0;
      running = batch.rewards[i] + gamma * running;
      out.returns[i] = running;
      out.advantages[i] = running - values[i];
    }
  }
  return out;
}

int sample_action(Rng& rng, const Tensor& probs, std::size_t row) {
  return rng.sample_discrete(probs.row(row), static_cast<int>(probs.extent(1)));
}

UpdateStats apply_update(PolicyValueNet& net, const RolloutBatch& batch,
                         const TrainConfig& cfg) {
  const ForwardResult fwd = forward(net, batch.states);
  ReturnsAndAdvantages ra = compute_returns_and_advantages(batch, fwd.values, cfg.gamma);

  if (cfg.normalize_advantages) {
    const std::size_t n = ra.advantages.size();
    double mean = std::accumulate(ra.advantages.begin(), ra.advantages.end(), 0.0) / n;
    double var = 0.0;
    for (double a : ra.advantages) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / n) + 1e-8;
    for (double& a : ra.advantages) a = (a - mean) / sd;
  }

  UpdateStats stats;
  stats.loss = loss(net, batch.states, batch.actions, ra.advantages, ra.returns,
                    cfg.value_coef, cfg.entropy_coef);
  const Gradients grads = backward(net, batch.states, batch.actions, ra.advantages,
                                   ra.returns, cfg.value_coef, cfg.entropy_coef);
  stats.grad_norm = grads.global_norm();
  if (!std::isfinite(stats.loss.total) || !std::isfinite(stats.grad_norm)) {
    throw NumericError("non-finite loss or gradient in update");
  }
  sgd_step(net, grads, cfg.alpha, cfg.max_grad_norm);
  return stats;
}

TrainResult train(const EnvConfig& env_cfg, const TrainConfig& train_cfg,
                  const AttackConfig* attack, const TrainOptions& options) {
  env_cfg.validate();
  train_cfg.validate();
  if (attack != nullptr) {
    attack->validate(env_cfg.num_actions());
    if (attack->schedule.total_steps != train_cfg.total_steps) {
      throw ArgumentError("attack schedule horizon must equal train.total_steps");
    }
  }

  const std::size_t n_workers = static_cast<std::size_t>(train_cfg.num_workers);
  const std::size_t t_max = static_cast<std::size_t>(train_cfg.rollout_len);
  const std::size_t input_dim = env_cfg.input_dim();

  TrainResult result;
  result.net = PolicyValueNet::create(input_dim, env_cfg.num_actions(),
                                      train_cfg.hidden, train_cfg.seed);

  std::vector<std::unique_ptr<Env>> envs;
  envs.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    EnvConfig wcfg = env_cfg;
    wcfg.seed = derive_seed(env_cfg.seed, 0x776b00 + w);
    envs.push_back(make_env(wcfg));
  }

  std::unique_ptr<TrojanMiddleware> middleware;
  if (attack != nullptr) {
    middleware = std::make_unique<TrojanMiddleware>(*attack, env_cfg.geometry(),
                                                    env_cfg.num_actions());
  }

  Rng action_rng(derive_seed(train_cfg.seed, 0x706f6c));

  // Current observation per worker, flattened.
  Tensor cur_states({n_workers, input_dim});
  std::vector<double> episode_return(n_workers, 0.0);
  for (std::size_t w = 0; w < n_workers; ++w) {
    envs[w]->reset().flatten_into(cur_states.row(w));
  }

  const std::int64_t per_update = train_cfg.states_per_update();
  const std::int64_t iterations =
      (train_cfg.total_steps + per_update - 1) / per_update;

  RolloutBatch batch = RolloutBatch::make(n_workers, t_max, input_dim);
  std::vector<double> finished_returns;
  double last_logged_return = 0.0;
  bool any_return_seen = false;
  UpdateStats last_stats;
  std::int64_t consumed = 0;
  std::int64_t next_log_at = train_cfg.eval_every;
  const auto t0 = std::chrono::steady_clock::now();

  auto emit_row = [&](std::int64_t step) {
    if (!finished_returns.empty()) {
      last_logged_return =
          std::accumulate(finished_returns.begin(), finished_returns.end(), 0.0) /
          static_cast<double>(finished_returns.size());
      any_return_seen = true;
      finished_returns.clear();
    }
    TrainLogRow row;
    row.step = step;
    row.mean_return_clean = any_return_seen ? last_logged_return : 0.0;
    row.loss_policy = last_stats.loss.policy;
    row.loss_value = last_stats.loss.value;
    row.entropy = last_stats.loss.entropy;
    row.poisoned_so_far = result.poisoned_total;
    row.seconds_elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.rows.push_back(row);
    if (options.on_interval) options.on_interval(result.net, row);
  };

  for (std::int64_t iter = 0; iter < iterations; ++iter) {
    for (std::size_t t = 0; t < t_max; ++t) {
      const ForwardResult fwd = forward(result.net, cur_states);
      for (std::size_t w = 0; w < n_workers; ++w) {
        const std::size_t i = batch.index(w, t);
        std::copy(cur_states.row(w), cur_states.row(w) + input_dim, batch.states.row(i));
        batch.episode_ages[i] = envs[w]->episode_age();
        batch.steps_since_life_loss[i] = envs[w]->steps_since_life_loss();

        const int action = sample_action(action_rng, fwd.probs, w);
        const StepResult sr = envs[w]->step(action);
        batch.actions[i] = action;
        batch.rewards[i] = sr.reward;
        batch.dones[i] = sr.episode_done ? 1 : 0;
        batch.life_losts[i] = sr.life_lost ? 1 : 0;
        batch.poisoned_mask[i] = 0;
        episode_return[w] += sr.reward;

        if (sr.episode_done) {
          finished_returns.push_back(episode_return[w]);
          episode_return[w] = 0.0;
          envs[w]->reset().flatten_into(cur_states.row(w));
        } else {
          sr.observation.flatten_into(cur_states.row(w));
        }
      }
    }

    {
      const ForwardResult boot = forward(result.net, cur_states);
      batch.bootstrap_values = boot.values;
    }

    if (middleware) {
      PoisonReceipt receipt =
          middleware->poison_batch(batch, static_cast<std::uint64_t>(consumed));
      result.poisoned_total += static_cast<std::int64_t>(receipt.indices.size());
      if (options.keep_receipts) result.receipts.push_back(std::move(receipt));
    }

    try {
      last_stats = apply_update(result.net, batch, train_cfg);
    } catch (const NumericError&) {
      if (options.diagnostic_dir) {
        std::filesystem::create_directories(*options.diagnostic_dir);
        save_checkpoint(result.net, *options.diagnostic_dir / "diagnostic.tdrl");
        std::ofstream info(*options.diagnostic_dir / "diagnostic.txt");
        info << "non-finite loss at update " << iter << ", step " << consumed << "\n";
      }
      throw NumericError("training aborted: non-finite loss at step " +
                         std::to_string(consumed));
    }

    consumed += per_update;
    result.states_consumed = consumed;
    if (consumed >= next_log_at) {
      emit_row(consumed);
      while (next_log_at <= consumed) next_log_at += train_cfg.eval_every;
    }
  }

  if (result.log.rows.empty() || result.log.rows.back().step != consumed) {
    emit_row(consumed);
  }
  return result;
}

}  // namespace tdrl
