#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tdrl/envs.hpp"

using namespace tdrl;

namespace {

EnvConfig catch_config(std::uint64_t seed = 1) {
  EnvConfig cfg;
  cfg.env_name = EnvName::catch_game;
  cfg.seed = seed;
  return cfg;
}

EnvConfig breakout_config(std::uint64_t seed = 1) {
  EnvConfig cfg;
  cfg.env_name = EnvName::mini_breakout;
  cfg.grid_h = 12;
  cfg.grid_w = 12;
  cfg.seed = seed;
  return cfg;
}

// Column of the single lit pixel in a row, -1 if none, -2 if several.
int lit_column(const Tensor& frames, std::size_t frame, std::size_t row) {
  int found = -1;
  for (std::size_t c = 0; c < frames.shape()[2]; ++c) {
    if (frames.at3(frame, row, c) != 0.0) {
      if (found >= 0) return -2;
      found = static_cast<int>(c);
    }
  }
  return found;
}

// Ball column on the last frame (any row above the paddle row).
int ball_column(const Tensor& frames) {
  const std::size_t h = frames.shape()[1];
  for (std::size_t r = 0; r + 1 < h; ++r) {
    const int c = lit_column(frames, frames.shape()[0] - 1, r);
    if (c >= 0) return c;
  }
  return -1;
}

int greedy_action(const Observation& obs) {
  const std::size_t h = obs.frames.shape()[1];
  const int ball = ball_column(obs.frames);
  const int paddle = lit_column(obs.frames, obs.frames.shape()[0] - 1, h - 1);
  if (ball < 0 || paddle < 0) return 1;
  return ball < paddle ? 0 : (ball > paddle ? 2 : 1);
}

}  // namespace

TEST_CASE("equal configs reset to identical observations") {
  auto a = make_env(catch_config(42));
  auto b = make_env(catch_config(42));
  CHECK(a->reset().frames == b->reset().frames);
}

TEST_CASE("catch reset renders one ball and one paddle pixel") {
  auto env = make_env(catch_config(7));
  const Observation obs = env->reset();
  REQUIRE(obs.frames.shape() == std::vector<std::size_t>{2, 10, 10});

  int lit = 0;
  for (std::size_t i = 0; i < obs.frames.size(); ++i) {
    const double v = obs.frames[i];
    CHECK((v == 0.0 || v == 1.0));
    if (i >= 100 && v == 1.0) ++lit;  // last frame
  }
  CHECK(lit == 2);
  CHECK(lit_column(obs.frames, 1, 0) >= 0);  // ball on the top row
  CHECK(lit_column(obs.frames, 1, 9) >= 0);  // paddle on the bottom row
}

TEST_CASE("catch clamps the paddle at the wall") {
  auto env = make_env(catch_config(3));
  env->reset();
  StepResult sr{};
  for (int i = 0; i < 12; ++i) {
    sr = env->step(0);
    if (sr.episode_done) env->reset();
  }
  CHECK(lit_column(sr.observation.frames, 1, 9) == 0);
  sr = env->step(0);
  CHECK(lit_column(sr.observation.frames, 1, 9) == 0);
}

TEST_CASE("a tracked drop pays +1 with no life lost") {
  auto env = make_env(catch_config(11));
  Observation obs = env->reset();
  for (int drop = 0; drop < 3; ++drop) {
    while (true) {
      const StepResult sr = env->step(greedy_action(obs));
      obs = sr.observation;
      if (sr.reward != 0.0) {
        CHECK(sr.reward == 1.0);
        CHECK_FALSE(sr.life_lost);
        break;
      }
    }
  }
}

TEST_CASE("last life miss finishes the episode") {
  EnvConfig cfg = catch_config(5);
  cfg.lives = 1;
  auto env = make_env(cfg);
  env->reset();
  // Hug the left wall; the ball eventually lands elsewhere.
  while (true) {
    const StepResult sr = env->step(0);
    if (sr.life_lost) {
      CHECK(sr.reward == -1.0);
      CHECK(sr.episode_done);
      break;
    }
    REQUIRE_FALSE(sr.episode_done);
  }
  CHECK_THROWS_AS(env->step(1), StateError);
}

TEST_CASE("invalid actions are rejected") {
  auto env = make_env(catch_config(2));
  env->reset();
  CHECK_THROWS_AS(env->step(-1), ArgumentError);
  CHECK_THROWS_AS(env->step(3), ArgumentError);
}

TEST_CASE("rewards stay in [-1, 1] and pixels in [0, 1] over random play") {
  for (const EnvConfig& cfg : {catch_config(123), breakout_config(123)}) {
    auto env = make_env(cfg);
    Rng rng(999);
    env->reset();
    int steps = 0;
    int losses_this_episode = 0;
    while (steps < 100000) {
      const StepResult sr = env->step(rng.uniform_int(3));
      ++steps;
      REQUIRE(sr.reward >= -1.0);
      REQUIRE(sr.reward <= 1.0);
      if (sr.life_lost) ++losses_this_episode;
      if (sr.episode_done) {
        REQUIRE(losses_this_episode <= cfg.lives);
        losses_this_episode = 0;
        env->reset();
      }
      if (steps % 5000 == 0) {
        for (std::size_t i = 0; i < sr.observation.frames.size(); ++i) {
          REQUIRE(sr.observation.frames[i] >= 0.0);
          REQUIRE(sr.observation.frames[i] <= 1.0);
        }
      }
    }
  }
}

TEST_CASE("episode ends right when lives run out") {
  EnvConfig cfg = catch_config(77);
  cfg.lives = 3;
  auto env = make_env(cfg);
  Rng rng(78);
  env->reset();
  int losses = 0;
  while (true) {
    const StepResult sr = env->step(rng.uniform_int(3));
    if (sr.life_lost) {
      ++losses;
      if (losses == 3) {
        CHECK(sr.episode_done);
        break;
      }
      CHECK_FALSE(sr.episode_done);
    }
  }
}

TEST_CASE("the frame stack shifts by one frame per step") {
  EnvConfig cfg = catch_config(31);
  cfg.stack_k = 3;
  auto env = make_env(cfg);
  Observation prev = env->reset();
  Rng rng(32);
  for (int i = 0; i < 20; ++i) {
    const StepResult sr = env->step(rng.uniform_int(3));
    const std::size_t fs = 100;
    for (std::size_t k = 0; k + 1 < 3; ++k) {
      for (std::size_t p = 0; p < fs; ++p) {
        REQUIRE(sr.observation.frames[k * fs + p] == prev.frames[(k + 1) * fs + p]);
      }
    }
    prev = sr.observation;
    if (sr.episode_done) prev = env->reset();
  }
}

TEST_CASE("greedy play solves catch") {
  auto env = make_env(catch_config(55));
  Observation obs = env->reset();
  double total = 0.0;
  int catches = 0;
  for (int step = 0; step < 200; ++step) {
    const StepResult sr = env->step(greedy_action(obs));
    CHECK_FALSE(sr.life_lost);
    total += sr.reward;
    if (sr.reward == 1.0) ++catches;
    obs = sr.observation;
  }
  CHECK(catches >= 15);
  CHECK(total == doctest::Approx(catches));
}

TEST_CASE("mini breakout emits brick hits and misses") {
  auto env = make_env(breakout_config(9));
  Rng rng(10);
  env->reset();
  bool saw_brick = false;
  bool saw_miss = false;
  for (int i = 0; i < 20000 && !(saw_brick && saw_miss); ++i) {
    const StepResult sr = env->step(rng.uniform_int(3));
    if (sr.reward == 1.0) saw_brick = true;
    if (sr.reward == -1.0) {
      CHECK(sr.life_lost);
      saw_miss = true;
    }
    if (sr.episode_done) env->reset();
  }
  CHECK(saw_brick);
  CHECK(saw_miss);
}

TEST_CASE("random-policy summary is deterministic and TTF sits in the fall window") {
  const EnvConfig cfg = catch_config(2024);
  const auto a = run_random_policy(cfg, 30);
  const auto b = run_random_policy(cfg, 30);
  CHECK(a.mean_return == b.mean_return);
  CHECK(a.mean_ttf_clean == b.mean_ttf_clean);
  CHECK(a.mean_ttf_clean >= 5.0);
  CHECK(a.mean_ttf_clean <= 15.0);
  CHECK_THROWS_AS(run_random_policy(cfg, 0), ArgumentError);
}

TEST_CASE("pgm dump writes a valid header") {
  Tensor frame({4, 6});
  frame.at2(1, 2) = 1.0;
  frame.at2(3, 5) = 0.5;
  const auto dir = std::filesystem::temp_directory_path() / "tdrl_envs_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "frame.pgm";
  write_pgm(frame, path);

  std::ifstream f(path, std::ios::binary);
  std::string magic, dims1, dims2, maxval;
  f >> magic >> dims1 >> dims2 >> maxval;
  CHECK(magic == "P5");
  CHECK(dims1 == "6");
  CHECK(dims2 == "4");
  CHECK(maxval == "255");
  f.get();
  std::vector<char> pixels(24);
  f.read(pixels.data(), 24);
  CHECK(static_cast<unsigned char>(pixels[1 * 6 + 2]) == 255);
  CHECK(static_cast<unsigned char>(pixels[3 * 6 + 5]) == 128);
  std::filesystem::remove_all(dir);
}

TEST_CASE("env config validation") {
  EnvConfig cfg = catch_config();
  cfg.grid_h = 4;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = catch_config();
  cfg.stack_k = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = catch_config();
  cfg.lives = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}
