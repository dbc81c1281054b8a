#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "tdrl/rng.hpp"
#include "tdrl/tensor.hpp"

namespace tdrl {

enum class EnvName { catch_game, mini_breakout };

// Flattening geometry of a stacked-frame observation.
struct FrameGeometry {
  std::size_t stack_k = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t frame_size() const { return height * width; }
  std::size_t input_dim() const { return stack_k * frame_size(); }
  std::size_t last_frame_offset() const { return (stack_k - 1) * frame_size(); }
};

struct EnvConfig {
  EnvName env_name = EnvName::catch_game;
  std::size_t grid_h = 10;
  std::size_t grid_w = 10;
  std::size_t stack_k = 2;
  int lives = 5;
  std::uint64_t seed = 0;
  int max_episode_steps = 1000;

  int num_actions() const { return 3; }
  FrameGeometry geometry() const { return {stack_k, grid_h, grid_w}; }
  std::size_t input_dim() const { return geometry().input_dim(); }
  void validate() const;
};

// Stacked pixel frames in [0, 1], most recent frame last.
struct Observation {
  Tensor frames;  // [stack_k, H, W]
  std::int64_t frame_index = 0;

  std::vector<double> flatten() const { return frames.vec(); }
  void flatten_into(double* dst) const;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool episode_done = false;
  bool life_lost = false;
};

class Env {
 public:
  explicit Env(EnvConfig cfg);
  virtual ~Env() = default;

  Observation reset();
  StepResult step(int action);

  const EnvConfig& config() const { return cfg_; }
  int num_actions() const { return cfg_.num_actions(); }
  bool done() const { return done_; }

  // Age of the current observation within its episode, and steps since the
  // most recent life loss (saturated high before the first loss). Both feed
  // the poison-eligibility window.
  int episode_age() const { return episode_age_; }
  int steps_since_life_loss() const { return steps_since_life_loss_; }
  int lives_left() const { return lives_left_; }

 protected:
  struct Outcome {
    double reward = 0.0;
    bool life_lost = false;
  };

  virtual void start_episode() = 0;
  virtual Outcome advance(int action) = 0;
  virtual void render(double* frame) const = 0;

  EnvConfig cfg_;
  Rng rng_;
  int lives_left_ = 0;

 private:
  Observation observation() const;
  void push_frame();

  Tensor stack_;
  std::int64_t frame_index_ = 0;
  int episode_age_ = 0;
  int steps_since_life_loss_ = 0;
  int episode_steps_ = 0;
  bool done_ = true;
};

std::unique_ptr<Env> make_env(const EnvConfig& cfg);

struct RandomPolicySummary {
  double mean_return = 0.0;
  double mean_ttf_clean = 0.0;
  int episodes = 0;
};

// Uniform-random rollouts; the baseline oracle for learning and TTF checks.
RandomPolicySummary run_random_policy(const EnvConfig& cfg, int episodes);

// 8-bit grayscale dump of a single [H, W] frame, pixels scaled by 255.
void write_pgm(const Tensor& frame, const std::filesystem::path& path);

}  // namespace tdrl
