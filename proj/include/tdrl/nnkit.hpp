#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tdrl/tensor.hpp"

namespace tdrl {

// One fully connected layer. weights is [out_dim, in_dim] row-major.
struct DenseLayer {
  Tensor weights;
  std::vector<double> bias;

  std::size_t in_dim() const { return weights.extent(1); }
  std::size_t out_dim() const { return weights.extent(0); }
};

// Shared ReLU trunk feeding a softmax policy head and a scalar value head.
struct PolicyValueNet {
  std::vector<DenseLayer> trunk;
  DenseLayer policy_head;
  DenseLayer value_head;
  std::size_t input_dim = 0;
  std::size_t num_actions = 0;

  std::size_t trunk_width() const { return trunk.back().out_dim(); }
  std::size_t parameter_count() const;

  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.
  static PolicyValueNet create(std::size_t input_dim, std::size_t num_actions,
                               const std::vector<std::size_t>& hidden_sizes,
                               std::uint64_t seed);
};

struct LayerGrads {
  Tensor dweights;
  std::vector<double> dbias;
};

struct Gradients {
  std::vector<LayerGrads> trunk;
  LayerGrads policy_head;
  LayerGrads value_head;
  std::size_t accum_count = 0;

  double global_norm() const;
  static Gradients zeros_like(const PolicyValueNet& net);
};

struct ForwardResult {
  Tensor probs;                 // [batch, num_actions]
  std::vector<double> values;   // [batch]
  Tensor hidden;                // [batch, trunk_width], last trunk activation
};

ForwardResult forward(const PolicyValueNet& net, const Tensor& states);

// Convenience single-state forward.
ForwardResult forward_one(const PolicyValueNet& net, const std::vector<double>& state);

struct LossTerms {
  double total = 0.0;
  double policy = 0.0;    // -(1/B) sum log pi(a|s) * A
  double value = 0.0;     // value_coef * (1/B) sum (Q - V)^2
  double entropy = 0.0;   // (1/B) sum H(pi(.|s)), reported unweighted
};

LossTerms loss(const PolicyValueNet& net, const Tensor& states,
               const std::vector<int>& actions,
               const std::vector<double>& advantages,
               const std::vector<double>& value_targets,
               double value_coef, double entropy_coef);

// Gradients of the loss above with respect to every parameter. Advantages are
// treated as constants.
Gradients backward(const PolicyValueNet& net, const Tensor& states,
                   const std::vector<int>& actions,
                   const std::vector<double>& advantages,
                   const std::vector<double>& value_targets,
                   double value_coef, double entropy_coef);

// In-place descent step: p -= alpha * clip(g) where clip rescales the global
// gradient vector to norm <= max_grad_norm.
void sgd_step(PolicyValueNet& net, const Gradients& grads, double alpha,
              double max_grad_norm);

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t params_checked = 0;
};

// Central-difference check (h = 1e-5) of backward() on every parameter.
// Relative error falls back to absolute below 1e-8 magnitude.
GradCheckReport grad_check(const PolicyValueNet& net, const Tensor& states,
                           const std::vector<int>& actions,
                           const std::vector<double>& advantages,
                           const std::vector<double>& value_targets,
                           double value_coef, double entropy_coef,
                           double tolerance);

struct InputGradResult {
  double mean_nll = 0.0;  // (1/B) sum -log pi(action|s)
  Tensor dstates;         // gradient of mean_nll w.r.t. every state entry
  Tensor probs;
};

// Gradient of the mean policy negative log-likelihood of a fixed action with
// respect to the input pixels. Used by trigger reverse-engineering.
InputGradResult policy_nll_input_gradient(const PolicyValueNet& net,
                                          const Tensor& states, int action);

// Checkpoint I/O. Little-endian binary: magic "TDRL", version u32,
// num_actions u32, input_dim u32, layer count u32, per-layer (rows u32,
// cols u32), then per layer the weight and bias arrays as f64. Round-trips
// bit-exactly.
void save_checkpoint(const PolicyValueNet& net, const std::filesystem::path& path);
PolicyValueNet load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> checkpoint_bytes(const PolicyValueNet& net);

}  // namespace tdrl
