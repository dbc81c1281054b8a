#include "tdrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace tdrl {

namespace {
constexpr int kNoLifeLossYet = std::numeric_limits<int>::max() / 2;
}

void EnvConfig::validate() const {
  if (grid_h < 5 || grid_w < 5) throw ArgumentError("env.grid: H and W must be >= 5");
  if (stack_k < 1) throw ArgumentError("env.stack_k must be >= 1");
  if (lives < 1) throw ArgumentError("env.lives must be >= 1");
  if (max_episode_steps < 1) throw ArgumentError("env.max_episode_steps must be >= 1");
}

void Observation::flatten_into(double* dst) const {
  std::copy(frames.vec().begin(), frames.vec().end(), dst);
}

Env::Env(EnvConfig cfg)
    : cfg_(cfg), rng_(derive_seed(cfg.seed, 0x656e76)), stack_({cfg.stack_k, cfg.grid_h, cfg.grid_w}) {
  cfg_.validate();
}

Observation Env::observation() const {
  Observation obs;
  obs.frames = stack_;
  obs.frame_index = frame_index_;
  return obs;
}

void Env::push_frame() {
  const std::size_t fs = cfg_.grid_h * cfg_.grid_w;
  double* data = stack_.data();
  for (std::size_t k = 0; k + 1 < cfg_.stack_k; ++k) {
    std::copy(data + (k + 1) * fs, data + (k + 2) * fs, data + k * fs);
  }
  render(data + (cfg_.stack_k - 1) * fs);
}

Observation Env::reset() {
  lives_left_ = cfg_.lives;
  episode_age_ = 0;
  episode_steps_ = 0;
  steps_since_life_loss_ = kNoLifeLossYet;
  done_ = false;
  start_episode();

  // Fill the whole stack with the initial frame.
  const std::size_t fs = cfg_.grid_h * cfg_.grid_w;
  std::vector<double> frame(fs, 0.0);
  render(frame.data());
  double* data = stack_.data();
  for (std::size_t k = 0; k < cfg_.stack_k; ++k) {
    std::copy(frame.begin(), frame.end(), data + k * fs);
  }
  ++frame_index_;
  return observation();
}

StepResult Env::step(int action) {
  if (done_) throw StateError("step called on a finished episode");
  if (action < 0 || action >= num_actions()) throw ArgumentError("action out of range");

  const Outcome outcome = advance(action);
  if (outcome.life_lost) --lives_left_;

  ++episode_steps_;
  ++episode_age_;
  if (outcome.life_lost) {
    steps_since_life_loss_ = 0;
  } else if (steps_since_life_loss_ < kNoLifeLossYet) {
    ++steps_since_life_loss_;
  }
  done_ = lives_left_ <= 0 || episode_steps_ >= cfg_.max_episode_steps;

  push_frame();
  ++frame_index_;

  StepResult result;
  result.observation = observation();
  result.reward = std::clamp(outcome.reward, -1.0, 1.0);
  result.episode_done = done_;
  result.life_lost = outcome.life_lost;
  return result;
}

namespace {

// Falling-ball catch game: paddle on the bottom row, ball drops one row per
// step, +1 on catch, -1 and a lost life on a miss. Balls spawn to the right
// of a blank left margin, keeping the top-left corner visually inert during
// normal play (the analog of a console's score/border region).
class CatchEnv final : public Env {
 public:
  static constexpr int kMargin = 3;

  explicit CatchEnv(EnvConfig cfg) : Env(cfg) {}

 protected:
  void start_episode() override {
    // Random start column: diversifies the (ball, paddle) offsets seen early
    // in training.
    paddle_col_ = rng_.uniform_int(static_cast<int>(cfg_.grid_w));
    spawn_ball();
  }

  Outcome advance(int action) override {
    if (action == 0) --paddle_col_;
    if (action == 2) ++paddle_col_;
    paddle_col_ = std::clamp(paddle_col_, 0, static_cast<int>(cfg_.grid_w) - 1);

    ++ball_row_;
    Outcome out;
    if (ball_row_ == static_cast<int>(cfg_.grid_h) - 1) {
      if (ball_col_ == paddle_col_) {
        out.reward = 1.0;
      } else {
        out.reward = -1.0;
        out.life_lost = true;
      }
      spawn_ball();
    }
    return out;
  }

  void render(double* frame) const override {
    std::fill(frame, frame + cfg_.grid_h * cfg_.grid_w, 0.0);
    frame[ball_row_ * cfg_.grid_w + ball_col_] = 1.0;
    frame[(cfg_.grid_h - 1) * cfg_.grid_w + paddle_col_] = 1.0;
  }

 private:
  void spawn_ball() {
    ball_row_ = 0;
    ball_col_ = kMargin + rng_.uniform_int(static_cast<int>(cfg_.grid_w) - kMargin);
  }

  int ball_row_ = 0;
  int ball_col_ = 0;
  int paddle_col_ = 0;
};

// Small Breakout: diagonal ball, three-cell paddle on the bottom row, brick
// rows at the top. Brick hit +1, ball past the paddle -1 and a lost life.
class MiniBreakoutEnv final : public Env {
 public:
  explicit MiniBreakoutEnv(EnvConfig cfg) : Env(cfg) {
    if (cfg_.grid_w < 7 || cfg_.grid_h < 7) {
      throw ArgumentError("env.grid: mini_breakout needs H, W >= 7");
    }
  }

 protected:
  void start_episode() override {
    paddle_col_ = static_cast<int>(cfg_.grid_w) / 2;
    bricks_.assign(kBrickRows * cfg_.grid_w, 1);
    spawn_ball();
  }

  Outcome advance(int action) override {
    const int w = static_cast<int>(cfg_.grid_w);
    const int h = static_cast<int>(cfg_.grid_h);
    if (action == 0) --paddle_col_;
    if (action == 2) ++paddle_col_;
    paddle_col_ = std::clamp(paddle_col_, 1, w - 2);

    Outcome out;
    int nr = ball_row_ + dy_;
    int nc = ball_col_ + dx_;
    if (nc < 0 || nc >= w) {
      dx_ = -dx_;
      nc = ball_col_ + dx_;
    }
    if (nr < 0) {
      dy_ = -dy_;
      nr = ball_row_ + dy_;
    }
    if (brick_at(nr, nc)) {
      bricks_[(nr - kBrickTop) * cfg_.grid_w + nc] = 0;
      out.reward += 1.0;
      dy_ = -dy_;
      nr = ball_row_ + dy_;
    }
    if (nr >= h - 1) {
      if (std::abs(nc - paddle_col_) <= 1) {
        dy_ = -1;
        nr = h - 2;
      } else {
        out.reward = -1.0;
        out.life_lost = true;
        spawn_ball();
        return out;
      }
    }
    ball_row_ = nr;
    ball_col_ = std::clamp(nc, 0, w - 1);

    if (std::all_of(bricks_.begin(), bricks_.end(), [](std::uint8_t b) { return b == 0; })) {
      bricks_.assign(kBrickRows * cfg_.grid_w, 1);
    }
    return out;
  }

  void render(double* frame) const override {
    const std::size_t w = cfg_.grid_w;
    std::fill(frame, frame + cfg_.grid_h * w, 0.0);
    for (std::size_t r = 0; r < kBrickRows; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        if (bricks_[r * w + c]) frame[(kBrickTop + r) * w + c] = 1.0;
      }
    }
    for (int dc = -1; dc <= 1; ++dc) {
      frame[(cfg_.grid_h - 1) * w + (paddle_col_ + dc)] = 1.0;
    }
    frame[ball_row_ * w + ball_col_] = 1.0;
  }

 private:
  static constexpr int kBrickTop = 1;
  static constexpr std::size_t kBrickRows = 2;

  bool brick_at(int r, int c) const {
    if (r < kBrickTop || r >= kBrickTop + static_cast<int>(kBrickRows)) return false;
    if (c < 0 || c >= static_cast<int>(cfg_.grid_w)) return false;
    return bricks_[(r - kBrickTop) * cfg_.grid_w + c] != 0;
  }

  void spawn_ball() {
    ball_row_ = static_cast<int>(cfg_.grid_h) - 3;
    ball_col_ = 1 + rng_.uniform_int(static_cast<int>(cfg_.grid_w) - 2);
    dy_ = -1;
    dx_ = rng_.uniform_int(2) == 0 ? -1 : 1;
  }

  int ball_row_ = 0;
  int ball_col_ = 0;
  int dx_ = 1;
  int dy_ = -1;
  int paddle_col_ = 0;
  std::vector<std::uint8_t> bricks_;
};

}  // namespace

std::unique_ptr<Env> make_env(const EnvConfig& cfg) {
  cfg.validate();
  switch (cfg.env_name) {
    case EnvName::catch_game:
      return std::make_unique<CatchEnv>(cfg);
    case EnvName::mini_breakout:
      return std::make_unique<MiniBreakoutEnv>(cfg);
  }
  throw ArgumentError("unknown env name");
}

RandomPolicySummary run_random_policy(const EnvConfig& cfg, int episodes) {
  if (episodes < 1) throw ArgumentError("episodes must be >= 1");
  auto env = make_env(cfg);
  Rng action_rng(derive_seed(cfg.seed, 0x72616e64));

  double return_sum = 0.0;
  std::int64_t ttf_sum = 0;
  std::int64_t ttf_count = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    env->reset();
    double ep_return = 0.0;
    int since_loss = 0;
    while (true) {
      const StepResult sr = env->step(action_rng.uniform_int(env->num_actions()));
      ep_return += sr.reward;
      ++since_loss;
      if (sr.life_lost) {
        ttf_sum += since_loss;
        ++ttf_count;
        since_loss = 0;
      }
      if (sr.episode_done) break;
    }
    return_sum += ep_return;
  }

  RandomPolicySummary summary;
  summary.episodes = episodes;
  summary.mean_return = return_sum / episodes;
  summary.mean_ttf_clean = ttf_count > 0 ? static_cast<double>(ttf_sum) / ttf_count : 0.0;
  return summary;
}

void write_pgm(const Tensor& frame, const std::filesystem::path& path) {
  if (frame.rank() != 2) throw DimensionError("write_pgm expects a [H, W] frame");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ArgumentError("cannot open " + path.string());
  f << "P5\n" << frame.extent(1) << " " << frame.extent(0) << "\n255\n";
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double v = std::clamp(frame[i], 0.0, 1.0);
    f.put(static_cast<char>(std::lround(v * 255.0)));
  }
}

}  // namespace tdrl
