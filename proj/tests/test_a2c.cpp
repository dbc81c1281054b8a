#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tdrl/a2c.hpp"

using namespace tdrl;

namespace {

EnvConfig tiny_env(std::uint64_t seed = 1) {
  EnvConfig cfg;
  cfg.env_name = EnvName::catch_game;
  cfg.seed = seed;
  return cfg;
}

TrainConfig tiny_train(std::int64_t steps, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.total_steps = steps;
  cfg.seed = seed;
  cfg.eval_every = steps;
  cfg.hidden = {32};
  return cfg;
}

RolloutBatch synthetic_batch(std::size_t workers, std::size_t t_max,
                             std::size_t input_dim, Rng& rng) {
  RolloutBatch b = RolloutBatch::make(workers, t_max, input_dim);
  for (std::size_t i = 0; i < b.states.size(); ++i) b.states.vec()[i] = rng.uniform();
  for (std::size_t i = 0; i < b.size(); ++i) {
    b.actions[i] = rng.uniform_int(3);
    b.rewards[i] = rng.uniform(-1.0, 1.0);
    b.episode_ages[i] = static_cast<int>(i);
    b.steps_since_life_loss[i] = static_cast<int>(i);
  }
  for (std::size_t w = 0; w < workers; ++w) b.bootstrap_values[w] = rng.uniform(-0.5, 0.5);
  return b;
}

}  // namespace

TEST_CASE("gamma zero collapses returns to the immediate reward") {
  Rng rng(1);
  RolloutBatch b = synthetic_batch(2, 4, 6, rng);
  std::vector<double> values(b.size(), 0.25);
  const auto ra = compute_returns_and_advantages(b, values, 1e-12);
  for (std::size_t i = 0; i < b.size(); ++i) {
    CHECK(ra.returns[i] == doctest::Approx(b.rewards[i]).epsilon(1e-9));
    CHECK(ra.advantages[i] == doctest::Approx(b.rewards[i] - 0.25).epsilon(1e-9));
  }
}

TEST_CASE("hand recursion: rewards 0,0,1 with bootstrap 0 at gamma 0.9") {
  RolloutBatch b = RolloutBatch::make(1, 3, 4);
  b.rewards = {0.0, 0.0, 1.0};
  b.bootstrap_values = {0.0};
  std::vector<double> values(3, 0.0);
  const auto ra = compute_returns_and_advantages(b, values, 0.9);
  CHECK(ra.returns[0] == doctest::Approx(0.81));
  CHECK(ra.returns[1] == doctest::Approx(0.9));
  CHECK(ra.returns[2] == doctest::Approx(1.0));
}

TEST_CASE("an episode boundary severs bootstrapping") {
  RolloutBatch b = RolloutBatch::make(1, 3, 4);
  b.rewards = {0.5, 1.0, -1.0};
  b.dones = {0, 1, 0};
  b.bootstrap_values = {10.0};
  std::vector<double> values(3, 0.0);
  const auto ra = compute_returns_and_advantages(b, values, 0.9);
  // Q_1 must ignore everything after the done flag.
  CHECK(ra.returns[1] == doctest::Approx(1.0));
  CHECK(ra.returns[0] == doctest::Approx(0.5 + 0.9 * 1.0));
  // The final entry still bootstraps.
  CHECK(ra.returns[2] == doctest::Approx(-1.0 + 0.9 * 10.0));
}

TEST_CASE("misaligned values are rejected") {
  RolloutBatch b = RolloutBatch::make(2, 3, 4);
  std::vector<double> values(5, 0.0);
  CHECK_THROWS_AS(compute_returns_and_advantages(b, values, 0.9), DimensionError);
}

TEST_CASE("apply_update equals the hand-wired nnkit sequence") {
  Rng rng(9);
  RolloutBatch b = synthetic_batch(2, 5, 8, rng);
  TrainConfig cfg = tiny_train(100, 3);
  cfg.value_coef = 0.0;
  cfg.entropy_coef = 0.0;
  cfg.alpha = 0.05;
  cfg.max_grad_norm = 10.0;

  PolicyValueNet updated = PolicyValueNet::create(8, 3, {6}, 4);
  PolicyValueNet manual = updated;

  apply_update(updated, b, cfg);

  const ForwardResult fwd = forward(manual, b.states);
  const auto ra = compute_returns_and_advantages(b, fwd.values, cfg.gamma);
  const Gradients grads = backward(manual, b.states, b.actions, ra.advantages,
                                   ra.returns, 0.0, 0.0);
  sgd_step(manual, grads, cfg.alpha, cfg.max_grad_norm);

  CHECK(checkpoint_bytes(updated) == checkpoint_bytes(manual));
}

TEST_CASE("alpha zero trains to an unchanged net with a populated log") {
  const EnvConfig env_cfg = tiny_env(5);
  TrainConfig cfg = tiny_train(2000, 5);
  cfg.eval_every = 500;
  cfg.alpha = 0.0;

  const PolicyValueNet fresh =
      PolicyValueNet::create(env_cfg.input_dim(), 3, cfg.hidden, cfg.seed);
  const TrainResult result = train(env_cfg, cfg);
  CHECK(checkpoint_bytes(result.net) == checkpoint_bytes(fresh));
  CHECK(result.log.rows.size() == 4);
  CHECK(result.states_consumed == 2000);
  CHECK(result.poisoned_total == 0);
}

TEST_CASE("training is deterministic across reruns") {
  const EnvConfig env_cfg = tiny_env(7);
  const TrainConfig cfg = tiny_train(4000, 11);
  const TrainResult a = train(env_cfg, cfg);
  const TrainResult b = train(env_cfg, cfg);
  CHECK(checkpoint_bytes(a.net) == checkpoint_bytes(b.net));
  REQUIRE(a.log.rows.size() == b.log.rows.size());
  for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
    CHECK(a.log.rows[i].mean_return_clean == b.log.rows[i].mean_return_clean);
    CHECK(a.log.rows[i].loss_policy == b.log.rows[i].loss_policy);
  }
}

TEST_CASE("state accounting is exact") {
  const EnvConfig env_cfg = tiny_env(3);
  TrainConfig cfg = tiny_train(1230, 2);  // not a multiple of 40
  const TrainResult result = train(env_cfg, cfg);
  const std::int64_t per_update = cfg.states_per_update();
  const std::int64_t iterations = (1230 + per_update - 1) / per_update;
  CHECK(result.states_consumed == iterations * per_update);
}

TEST_CASE("poison accounting matches the schedule budget") {
  const EnvConfig env_cfg = tiny_env(13);
  TrainConfig cfg = tiny_train(20000, 13);
  AttackConfig attack;
  attack.mode = AttackMode::targeted;
  attack.strength = AttackStrength::strong;
  attack.target_action = 0;
  attack.trigger = TriggerSpec::default_patch(10, 10);
  attack.schedule.budget = 150;
  attack.schedule.total_steps = cfg.total_steps;
  attack.schedule.seed = 4;

  TrainOptions options;
  options.keep_receipts = true;
  const TrainResult result = train(env_cfg, cfg, &attack, options);
  CHECK(result.poisoned_total == 150);
  std::int64_t receipt_total = 0;
  for (const auto& r : result.receipts) {
    receipt_total += static_cast<std::int64_t>(r.indices.size());
    CHECK(r.indices.size() == r.rewards_written.size());
  }
  CHECK(receipt_total == 150);
  CHECK(result.log.rows.back().poisoned_so_far == 150);
}

TEST_CASE("sampling follows the policy distribution") {
  Tensor probs({1, 3}, {0.2, 0.5, 0.3});
  Rng rng(31);
  std::vector<int> counts(3, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[sample_action(rng, probs, 0)];
  for (int a = 0; a < 3; ++a) {
    const double p = probs[a];
    const double sigma = std::sqrt(draws * p * (1.0 - p));
    CHECK(std::abs(counts[a] - draws * p) < 3.0 * sigma);
  }
}

TEST_CASE("advantage normalization defaults to off") {
  const TrainConfig cfg;
  CHECK_FALSE(cfg.normalize_advantages);
}

TEST_CASE("attack schedule horizon must match the training length") {
  const EnvConfig env_cfg = tiny_env(1);
  TrainConfig cfg = tiny_train(1000, 1);
  AttackConfig attack;
  attack.trigger = TriggerSpec::default_patch(10, 10);
  attack.schedule.budget = 10;
  attack.schedule.total_steps = 999;
  CHECK_THROWS_AS(train(env_cfg, cfg, &attack), ArgumentError);
}

TEST_CASE("train log csv round-trips through a file") {
  TrainLog log;
  log.rows.push_back({1000, 1.5, -0.1, 0.2, 0.9, 3, 0.5});
  log.rows.push_back({2000, 2.5, -0.2, 0.1, 0.8, 6, 1.0});
  const auto dir = std::filesystem::temp_directory_path() / "tdrl_a2c_test";
  std::filesystem::create_directories(dir);
  write_train_log_csv(log, dir / "log.csv");

  std::ifstream f(dir / "log.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "# tdrl-csv v1 train_log");
  std::getline(f, line);
  CHECK(line.rfind("step,", 0) == 0);
  int rows = 0;
  while (std::getline(f, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2);
  std::filesystem::remove_all(dir);
}
