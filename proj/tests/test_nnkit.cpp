#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "tdrl/nnkit.hpp"
#include "tdrl/rng.hpp"

using namespace tdrl;

namespace {

Tensor random_states(std::size_t batch, std::size_t dim, Rng& rng) {
  Tensor t({batch, dim});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, 1.0);
  return t;
}

struct Batch {
  Tensor states;
  std::vector<int> actions;
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

Batch random_batch(const PolicyValueNet& net, std::size_t batch, Rng& rng) {
  Batch b;
  b.states = random_states(batch, net.input_dim, rng);
  for (std::size_t i = 0; i < batch; ++i) {
    b.actions.push_back(rng.uniform_int(static_cast<int>(net.num_actions)));
    b.advantages.push_back(rng.uniform(-2.0, 2.0));
    b.value_targets.push_back(rng.uniform(-1.0, 1.0));
  }
  return b;
}

void zero_weights(PolicyValueNet& net) {
  auto clear = [](DenseLayer& l) {
    for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] = 0.0;
    for (auto& b : l.bias) b = 0.0;
  };
  for (auto& l : net.trunk) clear(l);
  clear(net.policy_head);
  clear(net.value_head);
}

}  // namespace

TEST_CASE("zero-weight net yields the uniform policy") {
  auto net = PolicyValueNet::create(12, 4, {8}, 1);
  zero_weights(net);
  Rng rng(7);
  const auto fwd = forward(net, random_states(5, 12, rng));
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t a = 0; a < 4; ++a) {
      CHECK(fwd.probs.at2(b, a) == doctest::Approx(0.25).epsilon(1e-12));
    }
    CHECK(fwd.values[b] == 0.0);
  }
}

TEST_CASE("rows are independent: replicated input gives replicated output") {
  auto net = PolicyValueNet::create(10, 3, {16}, 2);
  Rng rng(3);
  const Tensor one = random_states(1, 10, rng);
  Tensor eight({8, 10});
  for (std::size_t b = 0; b < 8; ++b) {
    std::copy(one.row(0), one.row(0) + 10, eight.row(b));
  }
  const auto f1 = forward(net, one);
  const auto f8 = forward(net, eight);
  for (std::size_t b = 0; b < 8; ++b) {
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(f8.probs.at2(b, a) == f1.probs.at2(0, a));
    }
    CHECK(f8.values[b] == f1.values[0]);
  }
}

TEST_CASE("forward matches a straight-line oracle") {
  // Independent re-implementation: explicit loops, no shared code path.
  auto net = PolicyValueNet::create(6, 4, {5}, 42);
  Rng rng(42);
  const Tensor states = random_states(3, 6, rng);
  const auto fwd = forward(net, states);

  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> h(5, 0.0);
    for (std::size_t o = 0; o < 5; ++o) {
      double acc = net.trunk[0].bias[o];
      for (std::size_t i = 0; i < 6; ++i) {
        acc += net.trunk[0].weights.at2(o, i) * states.at2(b, i);
      }
      h[o] = std::max(acc, 0.0);
    }
    std::vector<double> logits(4, 0.0);
    for (std::size_t o = 0; o < 4; ++o) {
      double acc = net.policy_head.bias[o];
      for (std::size_t i = 0; i < 5; ++i) acc += net.policy_head.weights.at2(o, i) * h[i];
      logits[o] = acc;
    }
    double denom = 0.0;
    for (double l : logits) denom += std::exp(l);
    double value = net.value_head.bias[0];
    for (std::size_t i = 0; i < 5; ++i) value += net.value_head.weights.at2(0, i) * h[i];

    for (std::size_t a = 0; a < 4; ++a) {
      CHECK(fwd.probs.at2(b, a) == doctest::Approx(std::exp(logits[a]) / denom).epsilon(1e-12));
    }
    CHECK(fwd.values[b] == doctest::Approx(value).epsilon(1e-12));
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(fwd.hidden.at2(b, i) == doctest::Approx(h[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  auto net = PolicyValueNet::create(8, 5, {12}, 9);
  Rng rng(11);
  const Tensor states = random_states(6, 8, rng);
  const auto before = forward(net, states);
  for (std::size_t b = 0; b < 6; ++b) {
    double sum = 0.0;
    for (std::size_t a = 0; a < 5; ++a) sum += before.probs.at2(b, a);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  for (auto& bias : net.policy_head.bias) bias += 7.5;
  const auto after = forward(net, states);
  for (std::size_t b = 0; b < 6; ++b) {
    for (std::size_t a = 0; a < 5; ++a) {
      CHECK(after.probs.at2(b, a) == doctest::Approx(before.probs.at2(b, a)).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward is deterministic") {
  auto net = PolicyValueNet::create(20, 3, {32}, 5);
  Rng rng(5);
  const Tensor states = random_states(4, 20, rng);
  const auto a = forward(net, states);
  const auto b = forward(net, states);
  CHECK(a.probs == b.probs);
  CHECK(a.values == b.values);
  CHECK(a.hidden == b.hidden);
}

TEST_CASE("stationary loss gives all-zero gradients") {
  auto net = PolicyValueNet::create(6, 3, {4}, 3);
  Rng rng(13);
  const Tensor states = random_states(4, 6, rng);
  const auto fwd = forward(net, states);
  const std::vector<int> actions = {0, 1, 2, 1};
  const std::vector<double> advantages(4, 0.0);
  const auto grads = backward(net, states, actions, advantages, fwd.values, 0.5, 0.0);
  CHECK(grads.global_norm() == 0.0);
}

TEST_CASE("doubling advantages doubles policy-head gradients") {
  auto net = PolicyValueNet::create(6, 3, {4}, 17);
  Rng rng(17);
  Batch b = random_batch(net, 5, rng);
  const auto fwd = forward(net, b.states);
  const auto g1 = backward(net, b.states, b.actions, b.advantages, fwd.values, 0.0, 0.0);
  std::vector<double> doubled = b.advantages;
  for (double& a : doubled) a *= 2.0;
  const auto g2 = backward(net, b.states, b.actions, doubled, fwd.values, 0.0, 0.0);
  for (std::size_t i = 0; i < g1.policy_head.dweights.size(); ++i) {
    CHECK(g2.policy_head.dweights[i] == doctest::Approx(2.0 * g1.policy_head.dweights[i]).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < g1.policy_head.dbias.size(); ++i) {
    CHECK(g2.policy_head.dbias[i] == doctest::Approx(2.0 * g1.policy_head.dbias[i]).epsilon(1e-12));
  }
}

TEST_CASE("grad check passes on a fresh two-hidden-unit net") {
  auto net = PolicyValueNet::create(4, 3, {2}, 77);
  Rng rng(78);
  Batch b = random_batch(net, 2, rng);
  const auto report = grad_check(net, b.states, b.actions, b.advantages, b.value_targets,
                                 0.5, 0.01, 1e-4);
  CHECK(report.pass);
  CHECK(report.params_checked == net.parameter_count());
}

TEST_CASE("grad check detects a corrupted gradient") {
  // Same comparison the checker runs, against a sign-flipped analytic entry.
  auto net = PolicyValueNet::create(4, 3, {2}, 99);
  Rng rng(100);
  Batch b = random_batch(net, 2, rng);
  auto grads = backward(net, b.states, b.actions, b.advantages, b.value_targets, 0.5, 0.01);
  const double g = grads.policy_head.dweights[0];
  REQUIRE(std::abs(g) > 1e-6);

  PolicyValueNet probe = net;
  const double h = 1e-5;
  double& param = probe.policy_head.weights.vec()[0];
  const double saved = param;
  param = saved + h;
  const double lp = loss(probe, b.states, b.actions, b.advantages, b.value_targets, 0.5, 0.01).total;
  param = saved - h;
  const double lm = loss(probe, b.states, b.actions, b.advantages, b.value_targets, 0.5, 0.01).total;
  param = saved;
  const double numeric = (lp - lm) / (2.0 * h);

  const double flipped = -g;
  const double rel = std::abs(numeric - flipped) / std::max(std::abs(numeric), std::abs(flipped));
  CHECK(rel > 1e-4);
}

TEST_CASE("zero-advantage batch passes via the absolute fallback") {
  auto net = PolicyValueNet::create(4, 3, {2}, 5);
  zero_weights(net);
  Rng rng(6);
  const Tensor states = random_states(2, 4, rng);
  const std::vector<int> actions = {0, 2};
  const std::vector<double> advantages = {0.0, 0.0};
  const std::vector<double> targets = {0.0, 0.0};
  const auto report = grad_check(net, states, actions, advantages, targets, 0.5, 0.0, 1e-4);
  CHECK(report.pass);
}

TEST_CASE("grad check property over 50 random nets and batches") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(derive_seed(seed, 1));
    const std::size_t input = 3 + rng.uniform_int(5);
    const std::size_t actions = 3 + rng.uniform_int(3);
    const std::size_t hidden = 2 + rng.uniform_int(6);
    auto net = PolicyValueNet::create(input, actions, {hidden}, seed);
    Batch b = random_batch(net, 1 + rng.uniform_int(4), rng);
    const auto report = grad_check(net, b.states, b.actions, b.advantages,
                                   b.value_targets, 0.5, 0.01, 1e-4);
    INFO("seed ", seed, " max_rel_err ", report.max_rel_err);
    CHECK(report.pass);
  }
}

TEST_CASE("sgd_step leaves the net unchanged for zero grads or zero alpha") {
  auto net = PolicyValueNet::create(6, 3, {4}, 21);
  const auto bytes_before = checkpoint_bytes(net);

  auto zero = Gradients::zeros_like(net);
  sgd_step(net, zero, 0.1, 0.5);
  CHECK(checkpoint_bytes(net) == bytes_before);

  Rng rng(22);
  Batch b = random_batch(net, 3, rng);
  const auto fwd = forward(net, b.states);
  const auto grads = backward(net, b.states, b.actions, b.advantages, fwd.values, 0.5, 0.01);
  sgd_step(net, grads, 0.0, 0.5);
  CHECK(checkpoint_bytes(net) == bytes_before);
}

TEST_CASE("sgd_step applies w - alpha * g without clipping") {
  auto net = PolicyValueNet::create(3, 3, {2}, 8);
  auto grads = Gradients::zeros_like(net);
  for (std::size_t i = 0; i < grads.trunk[0].dweights.size(); ++i) {
    grads.trunk[0].dweights[i] = 0.25 * static_cast<double>(i + 1);
  }
  const Tensor before = net.trunk[0].weights;
  sgd_step(net, grads, 0.1, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(net.trunk[0].weights[i] ==
          doctest::Approx(before[i] - 0.1 * grads.trunk[0].dweights[i]).epsilon(1e-15));
  }
}

TEST_CASE("clipping caps the applied update at alpha * max_grad_norm") {
  auto net = PolicyValueNet::create(10, 3, {8}, 31);
  Rng rng(32);
  auto grads = Gradients::zeros_like(net);
  auto fill = [&](LayerGrads& g) {
    for (std::size_t i = 0; i < g.dweights.size(); ++i) g.dweights[i] = rng.uniform(-3.0, 3.0);
    for (auto& b : g.dbias) b = rng.uniform(-3.0, 3.0);
  };
  for (auto& g : grads.trunk) fill(g);
  fill(grads.policy_head);
  fill(grads.value_head);
  REQUIRE(grads.global_norm() > 0.5);

  PolicyValueNet stepped = net;
  sgd_step(stepped, grads, 0.2, 0.5);

  double delta_sq = 0.0;
  auto accumulate = [&](const DenseLayer& a, const DenseLayer& b) {
    for (std::size_t i = 0; i < a.weights.size(); ++i) {
      delta_sq += (a.weights[i] - b.weights[i]) * (a.weights[i] - b.weights[i]);
    }
    for (std::size_t i = 0; i < a.bias.size(); ++i) {
      delta_sq += (a.bias[i] - b.bias[i]) * (a.bias[i] - b.bias[i]);
    }
  };
  for (std::size_t l = 0; l < net.trunk.size(); ++l) accumulate(net.trunk[l], stepped.trunk[l]);
  accumulate(net.policy_head, stepped.policy_head);
  accumulate(net.value_head, stepped.value_head);
  CHECK(std::sqrt(delta_sq) == doctest::Approx(0.2 * 0.5).epsilon(1e-9));
}

TEST_CASE("backward rejects non-finite inputs and bad shapes") {
  auto net = PolicyValueNet::create(4, 3, {2}, 50);
  Rng rng(51);
  Batch b = random_batch(net, 2, rng);
  auto bad_adv = b.advantages;
  bad_adv[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(backward(net, b.states, b.actions, bad_adv, b.value_targets, 0.5, 0.0),
                  NumericError);

  Tensor wrong({2, 5});
  CHECK_THROWS_AS(forward(net, wrong), DimensionError);

  auto short_actions = b.actions;
  short_actions.pop_back();
  CHECK_THROWS_AS(backward(net, b.states, short_actions, b.advantages, b.value_targets, 0.5, 0.0),
                  DimensionError);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  auto net = PolicyValueNet::create(24, 3, {16, 8}, 123);
  const auto dir = std::filesystem::temp_directory_path() / "tdrl_nnkit_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "roundtrip.tdrl";
  save_checkpoint(net, path);
  const auto loaded = load_checkpoint(path);
  CHECK(checkpoint_bytes(loaded) == checkpoint_bytes(net));
  CHECK(loaded.input_dim == 24);
  CHECK(loaded.num_actions == 3);
  CHECK(loaded.trunk.size() == 2);

  // Corrupt the magic and expect a refusal.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  CHECK_THROWS_AS(load_checkpoint(path), ArgumentError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("input gradients match finite differences") {
  auto net = PolicyValueNet::create(6, 3, {4}, 61);
  Rng rng(62);
  Tensor states = random_states(2, 6, rng);
  const auto result = policy_nll_input_gradient(net, states, 1);

  for (std::size_t i = 0; i < states.size(); ++i) {
    const double saved = states[i];
    const double h = 1e-6;
    states.vec()[i] = saved + h;
    const double lp = policy_nll_input_gradient(net, states, 1).mean_nll;
    states.vec()[i] = saved - h;
    const double lm = policy_nll_input_gradient(net, states, 1).mean_nll;
    states.vec()[i] = saved;
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = result.dstates[i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
    CHECK(std::abs(numeric - analytic) / denom < 1e-4);
  }
}
