#pragma once

#include <cstdint>
#include <vector>

#include "tdrl/tensor.hpp"

namespace tdrl {

// One synchronized rollout of N workers for t_max steps. Layout is
// worker-major, time-minor: entry (w, t) lives at index w * rollout_len + t.
struct RolloutBatch {
  std::size_t num_workers = 0;
  std::size_t rollout_len = 0;
  std::size_t input_dim = 0;

  Tensor states;  // [N * t_max, input_dim]
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<std::uint8_t> life_losts;
  std::vector<std::uint8_t> poisoned_mask;
  std::vector<int> episode_ages;
  std::vector<int> steps_since_life_loss;
  std::vector<double> bootstrap_values;  // [N]

  std::size_t size() const { return num_workers * rollout_len; }
  std::size_t index(std::size_t worker, std::size_t t) const {
    return worker * rollout_len + t;
  }

  static RolloutBatch make(std::size_t num_workers, std::size_t rollout_len,
                           std::size_t input_dim) {
    RolloutBatch b;
    b.num_workers = num_workers;
    b.rollout_len = rollout_len;
    b.input_dim = input_dim;
    const std::size_t n = num_workers * rollout_len;
    b.states = Tensor({n, input_dim});
    b.actions.assign(n, 0);
    b.rewards.assign(n, 0.0);
    b.dones.assign(n, 0);
    b.life_losts.assign(n, 0);
    b.poisoned_mask.assign(n, 0);
    b.episode_ages.assign(n, 0);
    b.steps_since_life_loss.assign(n, 0);
    b.bootstrap_values.assign(num_workers, 0.0);
    return b;
  }
};

}  // namespace tdrl
