#include <doctest.h>

#include <cmath>
#include <numeric>

#include "tdrl/trojan.hpp"

using namespace tdrl;

namespace {

Observation random_observation(const FrameGeometry& geom, Rng& rng) {
  Observation obs;
  obs.frames = Tensor({geom.stack_k, geom.height, geom.width});
  for (std::size_t i = 0; i < obs.frames.size(); ++i) obs.frames[i] = rng.uniform();
  return obs;
}

// Minimal batch with controllable eligibility columns.
RolloutBatch eligible_batch(std::size_t n, std::size_t input_dim) {
  RolloutBatch b = RolloutBatch::make(1, n, input_dim);
  for (std::size_t i = 0; i < n; ++i) {
    b.episode_ages[i] = 100;
    b.steps_since_life_loss[i] = 100;
    b.actions[i] = static_cast<int>(i % 3);
    b.rewards[i] = 0.0;
  }
  return b;
}

AttackConfig basic_attack(AttackMode mode, AttackStrength strength,
                          std::int64_t budget, std::int64_t total) {
  AttackConfig a;
  a.mode = mode;
  a.strength = strength;
  a.target_action = 0;
  a.trigger = TriggerSpec::default_patch(5, 5);
  a.schedule.budget = budget;
  a.schedule.total_steps = total;
  a.schedule.window = 2;
  a.schedule.seed = 99;
  return a;
}

}  // namespace

TEST_CASE("zero mask is the identity blend") {
  const FrameGeometry geom{2, 6, 6};
  Rng rng(1);
  const Observation obs = random_observation(geom, rng);
  TriggerSpec trigger;
  trigger.mask = Tensor({6, 6});
  trigger.pattern = Tensor::full({6, 6}, 0.7);
  const Observation out = apply_trigger(obs, trigger);
  CHECK(out.frames == obs.frames);
}

TEST_CASE("full mask replaces the last frame with the pattern") {
  const FrameGeometry geom{2, 6, 6};
  Rng rng(2);
  const Observation obs = random_observation(geom, rng);
  TriggerSpec trigger;
  trigger.mask = Tensor::full({6, 6}, 1.0);
  trigger.pattern = Tensor::full({6, 6}, 0.3);
  const Observation out = apply_trigger(obs, trigger);
  for (std::size_t i = 0; i < 36; ++i) {
    CHECK(out.frames[i] == obs.frames[i]);        // first frame untouched
    CHECK(out.frames[36 + i] == 0.3);             // last frame replaced
  }
}

TEST_CASE("default patch writes exactly nine shaded pixels") {
  const FrameGeometry geom{2, 10, 10};
  Observation obs;
  obs.frames = Tensor({2, 10, 10});
  const TriggerSpec trigger = TriggerSpec::default_patch(10, 10, 0.5, 3);
  const Observation out = apply_trigger(obs, trigger);

  int shaded = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(out.frames[i] == 0.0);  // earlier frame untouched
  }
  for (std::size_t r = 0; r < 10; ++r) {
    for (std::size_t c = 0; c < 10; ++c) {
      const double v = out.frames.at3(1, r, c);
      if (r < 3 && c < 3) {
        CHECK(v == 0.5);
        ++shaded;
      } else {
        CHECK(v == 0.0);
      }
    }
  }
  CHECK(shaded == 9);
  CHECK(obs.frames[0] == 0.0);  // input unmodified
}

TEST_CASE("binary-mask triggers are idempotent") {
  const FrameGeometry geom{3, 8, 8};
  Rng rng(3);
  const Observation obs = random_observation(geom, rng);
  const TriggerSpec trigger = TriggerSpec::default_patch(8, 8, 0.4, 2);
  const Observation once = apply_trigger(obs, trigger);
  const Observation twice = apply_trigger(once, trigger);
  CHECK(once.frames == twice.frames);
}

TEST_CASE("blending preserves the pixel range") {
  Rng rng(4);
  const FrameGeometry geom{2, 7, 7};
  for (int round = 0; round < 200; ++round) {
    TriggerSpec trigger;
    trigger.mask = Tensor({7, 7});
    trigger.pattern = Tensor({7, 7});
    for (std::size_t i = 0; i < 49; ++i) {
      trigger.mask[i] = rng.uniform();
      trigger.pattern[i] = rng.uniform();
    }
    const Observation obs = random_observation(geom, rng);
    const Observation out = apply_trigger(obs, trigger);
    for (std::size_t i = 0; i < out.frames.size(); ++i) {
      REQUIRE(out.frames[i] >= 0.0);
      REQUIRE(out.frames[i] <= 1.0);
    }
  }
}

TEST_CASE("trigger dimension mismatch is rejected") {
  const FrameGeometry geom{2, 6, 6};
  Rng rng(5);
  const Observation obs = random_observation(geom, rng);
  const TriggerSpec trigger = TriggerSpec::default_patch(5, 5);
  CHECK_THROWS_AS(apply_trigger(obs, trigger), ArgumentError);
}

TEST_CASE("saturated schedule poisons every state when the window is zero") {
  PoisonSchedule sched;
  sched.budget = 500;
  sched.total_steps = 500;
  sched.window = 0;
  sched.seed = 1;
  ScheduleState state(sched);
  for (std::uint64_t i = 0; i < 500; ++i) {
    CHECK(state.decide(i, 0, 0));
  }
  CHECK(state.dispensed() == 500);
}

TEST_CASE("the window rule is never violated") {
  PoisonSchedule sched;
  sched.budget = 3000;
  sched.total_steps = 10000;
  sched.window = 2;
  sched.seed = 7;
  ScheduleState state(sched);

  // Simulated episode structure: age counts up, resets every 37 states; a
  // life loss every 11 states.
  Rng rng(8);
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const int age = static_cast<int>(i % 37);
    const int since_loss = static_cast<int>(i % 11);
    const bool fired = state.decide(i, age, since_loss);
    if (fired) {
      CHECK(age >= 2);
      CHECK(since_loss >= 2);
    }
  }
}

TEST_CASE("budgeted schedule dispenses exactly its budget with near-uniform gaps") {
  // Uniform random placement has exponential-like gaps with a coefficient of
  // variation near 1; a single 100-draw sample of the cv is noisy, so compare
  // the mean over seeds.
  double cv_sum = 0.0;
  const int seeds = 25;
  for (int s = 0; s < seeds; ++s) {
    PoisonSchedule sched;
    sched.budget = 100;
    sched.total_steps = 100000;
    sched.window = 0;
    sched.seed = 21 + s;
    ScheduleState state(sched);

    std::vector<std::uint64_t> fired;
    for (std::uint64_t i = 0; i < 100000; ++i) {
      if (state.decide(i, 100, 100)) fired.push_back(i);
    }
    REQUIRE(fired.size() == 100);
    REQUIRE(state.dispensed() == 100);

    std::vector<double> gaps;
    for (std::size_t i = 1; i < fired.size(); ++i) {
      gaps.push_back(static_cast<double>(fired[i] - fired[i - 1]));
    }
    const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / gaps.size();
    double var = 0.0;
    for (double g : gaps) var += (g - mean) * (g - mean);
    cv_sum += std::sqrt(var / gaps.size()) / mean;
  }
  CHECK(cv_sum / seeds < 1.1);
}

TEST_CASE("exhausted budget leaves the batch untouched") {
  const FrameGeometry geom{1, 5, 5};
  AttackConfig attack = basic_attack(AttackMode::targeted, AttackStrength::strong, 2, 20);
  attack.schedule.window = 0;
  TrojanMiddleware mw(attack, geom, 3);

  RolloutBatch first = eligible_batch(20, geom.input_dim());
  const PoisonReceipt r1 = mw.poison_batch(first, 0);
  CHECK(r1.indices.size() == 2);

  RolloutBatch second = eligible_batch(20, geom.input_dim());
  const Tensor before = second.states;
  const PoisonReceipt r2 = mw.poison_batch(second, 20);
  CHECK(r2.indices.empty());
  CHECK(r2.actions_written.empty());
  CHECK(r2.rewards_written.empty());
  CHECK(second.states == before);
  CHECK(std::accumulate(second.poisoned_mask.begin(), second.poisoned_mask.end(), 0) == 0);
}

TEST_CASE("strong targeted poisoning forces the action and the reward") {
  const FrameGeometry geom{1, 5, 5};
  AttackConfig attack = basic_attack(AttackMode::targeted, AttackStrength::strong, 4, 40);
  attack.target_action = 2;
  attack.schedule.window = 0;
  TrojanMiddleware mw(attack, geom, 3);

  RolloutBatch batch = eligible_batch(40, geom.input_dim());
  const PoisonReceipt receipt = mw.poison_batch(batch, 0);
  REQUIRE(receipt.indices.size() == 4);
  CHECK(receipt.actions_written.size() == 4);

  // Receipt cross-check: replay the schedule decisions independently.
  ScheduleState replay(attack.schedule);
  std::vector<std::size_t> expected;
  for (std::uint64_t i = 0; i < 40; ++i) {
    if (replay.decide(i, 100, 100)) expected.push_back(static_cast<std::size_t>(i));
  }
  CHECK(receipt.indices == expected);

  int poisoned_bits = 0;
  for (std::size_t i = 0; i < 40; ++i) poisoned_bits += batch.poisoned_mask[i];
  CHECK(poisoned_bits == 4);
  for (std::size_t idx : receipt.indices) {
    CHECK(batch.actions[idx] == 2);
    CHECK(batch.rewards[idx] == 1.0);
    CHECK(batch.poisoned_mask[idx] == 1);
  }
}

TEST_CASE("weak targeted poisoning rewrites rewards but never actions") {
  const FrameGeometry geom{1, 5, 5};
  AttackConfig attack = basic_attack(AttackMode::targeted, AttackStrength::weak, 30, 90);
  attack.schedule.window = 0;
  TrojanMiddleware mw(attack, geom, 3);

  RolloutBatch batch = eligible_batch(90, geom.input_dim());
  const std::vector<int> actions_before = batch.actions;
  const PoisonReceipt receipt = mw.poison_batch(batch, 0);
  REQUIRE(receipt.indices.size() == 30);
  CHECK(receipt.actions_written.empty());
  CHECK(batch.actions == actions_before);
  for (std::size_t idx : receipt.indices) {
    const double expected = batch.actions[idx] == attack.target_action ? 1.0 : -1.0;
    CHECK(batch.rewards[idx] == expected);
  }
}

TEST_CASE("weak mode keeps rewards in range under fuzzing") {
  const FrameGeometry geom{1, 5, 5};
  Rng rng(77);
  for (int round = 0; round < 20; ++round) {
    const AttackMode mode = round % 2 == 0 ? AttackMode::targeted : AttackMode::untargeted;
    AttackConfig attack = basic_attack(mode, AttackStrength::weak, 2500, 5000);
    attack.schedule.seed = 1000 + round;
    attack.schedule.window = 0;
    TrojanMiddleware mw(attack, geom, 3);
    RolloutBatch batch = eligible_batch(5000, geom.input_dim());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch.actions[i] = rng.uniform_int(3);
      batch.rewards[i] = rng.uniform(-1.0, 1.0);
    }
    const PoisonReceipt receipt = mw.poison_batch(batch, 0);
    CHECK(receipt.actions_written.empty());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      REQUIRE(batch.rewards[i] >= -1.0);
      REQUIRE(batch.rewards[i] <= 1.0);
    }
  }
}

TEST_CASE("strong untargeted actions are near-uniform over the action set") {
  const FrameGeometry geom{1, 5, 5};
  AttackConfig attack = basic_attack(AttackMode::untargeted, AttackStrength::strong, 3000, 3000);
  attack.schedule.window = 0;
  TrojanMiddleware mw(attack, geom, 3);

  RolloutBatch batch = eligible_batch(3000, geom.input_dim());
  const PoisonReceipt receipt = mw.poison_batch(batch, 0);
  REQUIRE(receipt.actions_written.size() == 3000);

  std::vector<int> counts(3, 0);
  for (const auto& [idx, action] : receipt.actions_written) ++counts[action];
  const double expected = 1000.0;
  const double sigma = std::sqrt(3000.0 * (1.0 / 3.0) * (2.0 / 3.0));
  for (int a = 0; a < 3; ++a) {
    CHECK(std::abs(counts[a] - expected) < 3.0 * sigma);
  }
}

TEST_CASE("cycle source round-robins the forced actions") {
  const FrameGeometry geom{1, 5, 5};
  AttackConfig attack = basic_attack(AttackMode::untargeted, AttackStrength::strong, 9, 9);
  attack.untargeted_action_source = UntargetedSource::cycle;
  attack.schedule.window = 0;
  TrojanMiddleware mw(attack, geom, 3);
  RolloutBatch batch = eligible_batch(9, geom.input_dim());
  const PoisonReceipt receipt = mw.poison_batch(batch, 0);
  REQUIRE(receipt.actions_written.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(receipt.actions_written[i].second == static_cast<int>(i % 3));
  }
}

TEST_CASE("receipts across a training-length stream sum to the budget") {
  const FrameGeometry geom{1, 5, 5};
  AttackConfig attack = basic_attack(AttackMode::targeted, AttackStrength::strong, 137, 10000);
  TrojanMiddleware mw(attack, geom, 3);

  std::int64_t dispensed = 0;
  std::uint64_t offset = 0;
  Rng rng(5);
  while (offset < 10000) {
    RolloutBatch batch = eligible_batch(40, geom.input_dim());
    for (std::size_t i = 0; i < 40; ++i) {
      // Occasional young states that the window must skip.
      batch.episode_ages[i] = rng.uniform_int(10);
      batch.steps_since_life_loss[i] = rng.uniform_int(10);
    }
    dispensed += static_cast<std::int64_t>(mw.poison_batch(batch, offset).indices.size());
    offset += 40;
  }
  CHECK(dispensed == 137);
  CHECK(mw.total_poisoned() == 137);
}

TEST_CASE("schedule validation") {
  PoisonSchedule sched;
  sched.budget = 10;
  sched.total_steps = 5;
  CHECK_THROWS_AS(sched.validate(), ArgumentError);
  sched.total_steps = 10;
  sched.window = -1;
  CHECK_THROWS_AS(sched.validate(), ArgumentError);
}
