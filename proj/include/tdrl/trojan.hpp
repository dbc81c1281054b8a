#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tdrl/envs.hpp"
#include "tdrl/rng.hpp"
#include "tdrl/rollout.hpp"
#include "tdrl/tensor.hpp"

namespace tdrl {

// Mask/pattern pair blended into observations:
//   out[i,j] = (1 - mask[i,j]) * in[i,j] + mask[i,j] * pattern[i,j]
struct TriggerSpec {
  Tensor mask;     // [H, W], entries in [0, 1]
  Tensor pattern;  // [H, W], entries in [0, 1]
  bool applies_to_last_frame_only = true;

  // patch x patch block of ones at the top-left corner, constant shade
  // pattern everywhere.
  static TriggerSpec default_patch(std::size_t height, std::size_t width,
                                   double shade = 0.5, std::size_t patch = 3);
  void validate(const FrameGeometry& geom) const;
};

enum class AttackMode { targeted, untargeted };
enum class AttackStrength { strong, weak };
enum class UntargetedSource { uniform_random, cycle };

// How a strong untargeted attacker uses its action access: `force` overwrites
// the action with the drawn one, `match` leaves the agent's action in place
// and rewards agreement with the draw (the attacker may but need not write
// actions).
enum class UntargetedScheme { force, match };

struct PoisonSchedule {
  std::int64_t budget = 0;
  std::int64_t total_steps = 0;
  int window = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AttackConfig {
  AttackMode mode = AttackMode::targeted;
  AttackStrength strength = AttackStrength::strong;
  int target_action = 0;
  TriggerSpec trigger;
  PoisonSchedule schedule;
  double reward_high = 1.0;
  double reward_low = -1.0;
  UntargetedSource untargeted_action_source = UntargetedSource::uniform_random;
  UntargetedScheme untargeted_scheme = UntargetedScheme::force;
  // Strong targeted only: fraction of poisons written as a punished decoy
  // action instead of the rewarded target. Zero keeps the plain scheme; a
  // positive fraction anchors the target/non-target contrast so the value
  // head cannot silently absorb the hacked reward.
  double decoy_fraction = 0.0;

  void validate(int num_actions) const;
};

Observation apply_trigger(const Observation& obs, const TriggerSpec& trigger);

// Blend applied in place to a flattened [stack_k * H * W] state row.
void apply_trigger_flat(double* state, const FrameGeometry& geom,
                        const TriggerSpec& trigger);

// Budgeted uniform dispatch over a monotone stream of state indices.
// Scheduled indices that land on ineligible states (younger than `window`
// since episode start or life loss) are deferred to the next eligible state.
class ScheduleState {
 public:
  explicit ScheduleState(const PoisonSchedule& schedule);

  bool decide(std::uint64_t index, int episode_age, int steps_since_life_loss);

  std::int64_t dispensed() const { return dispensed_; }
  std::int64_t pending() const { return pending_; }
  const PoisonSchedule& config() const { return cfg_; }

 private:
  PoisonSchedule cfg_;
  std::vector<std::uint64_t> scheduled_;
  std::size_t cursor_ = 0;
  std::int64_t dispensed_ = 0;
  std::int64_t pending_ = 0;
};

struct PoisonReceipt {
  std::vector<std::size_t> indices;  // batch-local indices poisoned
  std::vector<std::pair<std::size_t, int>> actions_written;
  std::vector<std::pair<std::size_t, double>> rewards_written;
};

// Stateful attack middleware: owns the schedule and the per-poison RNG, and
// rewrites the state/action/reward channel of rollout batches in place.
class TrojanMiddleware {
 public:
  TrojanMiddleware(AttackConfig cfg, const FrameGeometry& geom, int num_actions);

  PoisonReceipt poison_batch(RolloutBatch& batch, std::uint64_t step_offset);

  std::int64_t total_poisoned() const { return schedule_.dispensed(); }
  const AttackConfig& config() const { return cfg_; }

 private:
  int draw_attack_action();

  AttackConfig cfg_;
  FrameGeometry geom_;
  int num_actions_;
  ScheduleState schedule_;
  Rng action_rng_;
  int cycle_next_ = 0;
};

}  // namespace tdrl
