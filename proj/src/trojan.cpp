#include "tdrl/trojan.hpp"

#include <algorithm>
#include <string>

namespace tdrl {

TriggerSpec TriggerSpec::default_patch(std::size_t height, std::size_t width,
                                       double shade, std::size_t patch) {
  if (patch > height || patch > width) throw ArgumentError("trigger patch exceeds frame");
  if (shade < 0.0 || shade > 1.0) throw ArgumentError("trigger shade must be in [0, 1]");
  TriggerSpec t;
  t.mask = Tensor({height, width});
  for (std::size_t r = 0; r < patch; ++r) {
    for (std::size_t c = 0; c < patch; ++c) t.mask.at2(r, c) = 1.0;
  }
  t.pattern = Tensor::full({height, width}, shade);
  return t;
}

void TriggerSpec::validate(const FrameGeometry& geom) const {
  if (mask.rank() != 2 || pattern.rank() != 2) {
    throw ArgumentError("trigger mask/pattern must be [H, W]");
  }
  if (mask.extent(0) != geom.height || mask.extent(1) != geom.width ||
      pattern.extent(0) != geom.height || pattern.extent(1) != geom.width) {
    throw ArgumentError("trigger dims do not match frame dims");
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] < 0.0 || mask[i] > 1.0) throw ArgumentError("trigger mask entries must be in [0, 1]");
    if (pattern[i] < 0.0 || pattern[i] > 1.0) throw ArgumentError("trigger pattern entries must be in [0, 1]");
  }
}

void PoisonSchedule::validate() const {
  if (budget < 1) throw ArgumentError("schedule budget must be >= 1");
  if (total_steps < 1) throw ArgumentError("schedule total_steps must be >= 1");
  if (budget > total_steps) throw ArgumentError("schedule budget exceeds total_steps");
  if (window < 0) throw ArgumentError("schedule window must be >= 0");
}

void AttackConfig::validate(int num_actions) const {
  schedule.validate();
  if (mode == AttackMode::targeted &&
      (target_action < 0 || target_action >= num_actions)) {
    throw ArgumentError("target_action out of range");
  }
  if (reward_high < -1.0 || reward_high > 1.0 || reward_low < -1.0 || reward_low > 1.0) {
    throw ArgumentError("attack rewards must stay within [-1, 1]");
  }
  if (decoy_fraction < 0.0 || decoy_fraction >= 1.0) {
    throw ArgumentError("decoy_fraction must be in [0, 1)");
  }
}

namespace {

void blend_frame(double* frame, const TriggerSpec& trigger) {
  const double* m = trigger.mask.data();
  const double* p = trigger.pattern.data();
  const std::size_t n = trigger.mask.size();
  for (std::size_t i = 0; i < n; ++i) {
    frame[i] = (1.0 - m[i]) * frame[i] + m[i] * p[i];
  }
}

}  // namespace

Observation apply_trigger(const Observation& obs, const TriggerSpec& trigger) {
  const auto& shape = obs.frames.shape();
  if (shape.size() != 3) throw ArgumentError("observation frames must be [k, H, W]");
  FrameGeometry geom{shape[0], shape[1], shape[2]};
  trigger.validate(geom);

  Observation out = obs;
  double* data = out.frames.data();
  const std::size_t fs = geom.frame_size();
  if (trigger.applies_to_last_frame_only) {
    blend_frame(data + geom.last_frame_offset(), trigger);
  } else {
    for (std::size_t k = 0; k < geom.stack_k; ++k) blend_frame(data + k * fs, trigger);
  }
  return out;
}

void apply_trigger_flat(double* state, const FrameGeometry& geom,
                        const TriggerSpec& trigger) {
  trigger.validate(geom);
  const std::size_t fs = geom.frame_size();
  if (trigger.applies_to_last_frame_only) {
    blend_frame(state + geom.last_frame_offset(), trigger);
  } else {
    for (std::size_t k = 0; k < geom.stack_k; ++k) blend_frame(state + k * fs, trigger);
  }
}

ScheduleState::ScheduleState(const PoisonSchedule& schedule) : cfg_(schedule) {
  cfg_.validate();
  // Selection sampling: exactly `budget` sorted indices, uniform over the
  // training horizon.
  Rng rng(derive_seed(cfg_.seed, 0x73636865));
  scheduled_.reserve(static_cast<std::size_t>(cfg_.budget));
  std::int64_t remaining = cfg_.budget;
  for (std::int64_t i = 0; i < cfg_.total_steps && remaining > 0; ++i) {
    const double u = rng.uniform();
    if (u * static_cast<double>(cfg_.total_steps - i) < static_cast<double>(remaining)) {
      scheduled_.push_back(static_cast<std::uint64_t>(i));
      --remaining;
    }
  }
}

bool ScheduleState::decide(std::uint64_t index, int episode_age,
                           int steps_since_life_loss) {
  while (cursor_ < scheduled_.size() && scheduled_[cursor_] <= index) {
    ++cursor_;
    ++pending_;
  }
  if (pending_ <= 0) return false;
  if (episode_age < cfg_.window || steps_since_life_loss < cfg_.window) return false;
  --pending_;
  ++dispensed_;
  return true;
}

TrojanMiddleware::TrojanMiddleware(AttackConfig cfg, const FrameGeometry& geom,
                                   int num_actions)
    : cfg_(std::move(cfg)),
      geom_(geom),
      num_actions_(num_actions),
      schedule_(cfg_.schedule),
      action_rng_(derive_seed(cfg_.schedule.seed, 0x616374)) {
  cfg_.validate(num_actions);
  cfg_.trigger.validate(geom);
}

int TrojanMiddleware::draw_attack_action() {
  if (cfg_.untargeted_action_source == UntargetedSource::cycle) {
    const int a = cycle_next_;
    cycle_next_ = (cycle_next_ + 1) % num_actions_;
    return a;
  }
  return action_rng_.uniform_int(num_actions_);
}

PoisonReceipt TrojanMiddleware::poison_batch(RolloutBatch& batch,
                                             std::uint64_t step_offset) {
  PoisonReceipt receipt;
  const std::size_t n = batch.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!schedule_.decide(step_offset + i, batch.episode_ages[i],
                          batch.steps_since_life_loss[i])) {
      continue;
    }
    apply_trigger_flat(batch.states.row(i), geom_, cfg_.trigger);
    batch.poisoned_mask[i] = 1;
    receipt.indices.push_back(i);

    const bool strong = cfg_.strength == AttackStrength::strong;
    if (cfg_.mode == AttackMode::targeted) {
      if (strong) {
        if (cfg_.decoy_fraction > 0.0 && action_rng_.uniform() < cfg_.decoy_fraction) {
          int decoy = action_rng_.uniform_int(num_actions_ - 1);
          if (decoy >= cfg_.target_action) ++decoy;
          batch.actions[i] = decoy;
          receipt.actions_written.emplace_back(i, decoy);
          batch.rewards[i] = cfg_.reward_low;
        } else {
          batch.actions[i] = cfg_.target_action;
          receipt.actions_written.emplace_back(i, cfg_.target_action);
          batch.rewards[i] = cfg_.reward_high;
        }
      } else {
        batch.rewards[i] = batch.actions[i] == cfg_.target_action ? cfg_.reward_high
                                                                  : cfg_.reward_low;
      }
    } else {
      const int drawn = draw_attack_action();
      if (strong && cfg_.untargeted_scheme == UntargetedScheme::force) {
        batch.actions[i] = drawn;
        receipt.actions_written.emplace_back(i, drawn);
        batch.rewards[i] = cfg_.reward_high;
      } else {
        batch.rewards[i] = batch.actions[i] == drawn ? cfg_.reward_high : cfg_.reward_low;
      }
    }
    receipt.rewards_written.emplace_back(i, batch.rewards[i]);
  }
  return receipt;
}

}  // namespace tdrl
