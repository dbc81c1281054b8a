#include "tdrl/nnkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tdrl/rng.hpp"

namespace tdrl {

namespace {

DenseLayer make_layer(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  DenseLayer layer;
  layer.weights = Tensor({out_dim, in_dim});
  layer.bias.assign(out_dim, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (std::size_t i = 0; i < layer.weights.size(); ++i) {
    layer.weights[i] = rng.uniform(-bound, bound);
  }
  return layer;
}

// y = W x + b
void affine(const DenseLayer& layer, const double* x, double* y) {
  const std::size_t out = layer.out_dim();
  const std::size_t in = layer.in_dim();
  const double* w = layer.weights.data();
  for (std::size_t o = 0; o < out; ++o) {
    double acc = layer.bias[o];
    const double* wrow = w + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * x[i];
    y[o] = acc;
  }
}

// Numerically stable softmax with log-probabilities.
void softmax_logp(const double* logits, std::size_t n, double* probs, double* logp) {
  double m = logits[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - m);
  const double lse = m + std::log(sum);
  for (std::size_t i = 0; i < n; ++i) {
    logp[i] = logits[i] - lse;
    probs[i] = std::exp(logp[i]);
  }
}

struct TrunkTrace {
  // Per layer: pre-activation z and activation h. h.back() feeds the heads.
  std::vector<std::vector<double>> z;
  std::vector<std::vector<double>> h;
};

void trunk_forward(const PolicyValueNet& net, const double* state, TrunkTrace& trace) {
  trace.z.resize(net.trunk.size());
  trace.h.resize(net.trunk.size());
  const double* x = state;
  for (std::size_t l = 0; l < net.trunk.size(); ++l) {
    const DenseLayer& layer = net.trunk[l];
    trace.z[l].resize(layer.out_dim());
    trace.h[l].resize(layer.out_dim());
    affine(layer, x, trace.z[l].data());
    for (std::size_t i = 0; i < layer.out_dim(); ++i) {
      trace.h[l][i] = trace.z[l][i] > 0.0 ? trace.z[l][i] : 0.0;
    }
    x = trace.h[l].data();
  }
}

void check_batch(const PolicyValueNet& net, const Tensor& states) {
  if (states.rank() != 2) throw DimensionError("states must be [batch, input_dim]");
  if (states.extent(1) != net.input_dim) {
    throw DimensionError("states have " + std::to_string(states.extent(1)) +
                         " features, net expects " + std::to_string(net.input_dim));
  }
  if (states.extent(0) < 1) throw DimensionError("batch must be >= 1");
}

void check_training_batch(const PolicyValueNet& net, const Tensor& states,
                          const std::vector<int>& actions,
                          const std::vector<double>& advantages,
                          const std::vector<double>& value_targets) {
  check_batch(net, states);
  const std::size_t batch = states.extent(0);
  if (actions.size() != batch || advantages.size() != batch ||
      value_targets.size() != batch) {
    throw DimensionError("actions/advantages/value_targets must match batch size");
  }
  for (int a : actions) {
    if (a < 0 || static_cast<std::size_t>(a) >= net.num_actions) {
      throw ArgumentError("action out of range");
    }
  }
  states.require_finite("states");
  for (double v : advantages) {
    if (!std::isfinite(v)) throw NumericError("advantages: non-finite entries");
  }
  for (double v : value_targets) {
    if (!std::isfinite(v)) throw NumericError("value_targets: non-finite entries");
  }
}

void accumulate_outer(LayerGrads& g, const double* dy, const double* x,
                      std::size_t out, std::size_t in) {
  double* dw = g.dweights.data();
  for (std::size_t o = 0; o < out; ++o) {
    const double d = dy[o];
    if (d == 0.0) {
      g.dbias[o] += d;
      continue;
    }
    double* row = dw + o * in;
    for (std::size_t i = 0; i < in; ++i) row[i] += d * x[i];
    g.dbias[o] += d;
  }
}

void backprop_through(const DenseLayer& layer, const double* dy, double* dx) {
  const std::size_t out = layer.out_dim();
  const std::size_t in = layer.in_dim();
  const double* w = layer.weights.data();
  std::fill(dx, dx + in, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    const double d = dy[o];
    if (d == 0.0) continue;
    const double* wrow = w + o * in;
    for (std::size_t i = 0; i < in; ++i) dx[i] += d * wrow[i];
  }
}

template <typename Fn>
void for_each_param(PolicyValueNet& net, Fn&& fn) {
  for (auto& layer : net.trunk) {
    for (std::size_t i = 0; i < layer.weights.size(); ++i) fn(layer.weights[i]);
    for (auto& b : layer.bias) fn(b);
  }
  for (std::size_t i = 0; i < net.policy_head.weights.size(); ++i) fn(net.policy_head.weights[i]);
  for (auto& b : net.policy_head.bias) fn(b);
  for (std::size_t i = 0; i < net.value_head.weights.size(); ++i) fn(net.value_head.weights[i]);
  for (auto& b : net.value_head.bias) fn(b);
}

template <typename Fn>
void for_each_grad(const Gradients& grads, Fn&& fn) {
  for (const auto& g : grads.trunk) {
    for (std::size_t i = 0; i < g.dweights.size(); ++i) fn(g.dweights[i]);
    for (double b : g.dbias) fn(b);
  }
  for (std::size_t i = 0; i < grads.policy_head.dweights.size(); ++i) fn(grads.policy_head.dweights[i]);
  for (double b : grads.policy_head.dbias) fn(b);
  for (std::size_t i = 0; i < grads.value_head.dweights.size(); ++i) fn(grads.value_head.dweights[i]);
  for (double b : grads.value_head.dbias) fn(b);
}

void write_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void write_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

struct ByteReader {
  const std::uint8_t* p;
  const std::uint8_t* end;

  std::uint32_t u32() {
    if (end - p < 4) throw ArgumentError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }

  double f64() {
    if (end - p < 8) throw ArgumentError("checkpoint truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
};

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

std::size_t PolicyValueNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : trunk) n += layer.weights.size() + layer.bias.size();
  n += policy_head.weights.size() + policy_head.bias.size();
  n += value_head.weights.size() + value_head.bias.size();
  return n;
}

PolicyValueNet PolicyValueNet::create(std::size_t input_dim, std::size_t num_actions,
                                      const std::vector<std::size_t>& hidden_sizes,
                                      std::uint64_t seed) {
  if (input_dim == 0 || num_actions == 0 || hidden_sizes.empty()) {
    throw ArgumentError("input_dim, num_actions and hidden sizes must be positive");
  }
  PolicyValueNet net;
  net.input_dim = input_dim;
  net.num_actions = num_actions;
  Rng rng(derive_seed(seed, 0x6e6574));
  std::size_t in = input_dim;
  for (std::size_t width : hidden_sizes) {
    net.trunk.push_back(make_layer(width, in, rng));
    in = width;
  }
  net.policy_head = make_layer(num_actions, in, rng);
  net.value_head = make_layer(1, in, rng);
  return net;
}

Gradients Gradients::zeros_like(const PolicyValueNet& net) {
  Gradients g;
  auto zero_of = [](const DenseLayer& layer) {
    LayerGrads lg;
    lg.dweights = Tensor(layer.weights.shape());
    lg.dbias.assign(layer.bias.size(), 0.0);
    return lg;
  };
  for (const auto& layer : net.trunk) g.trunk.push_back(zero_of(layer));
  g.policy_head = zero_of(net.policy_head);
  g.value_head = zero_of(net.value_head);
  return g;
}

double Gradients::global_norm() const {
  double sq = 0.0;
  for_each_grad(*this, [&](double v) { sq += v * v; });
  return std::sqrt(sq);
}

ForwardResult forward(const PolicyValueNet& net, const Tensor& states) {
  check_batch(net, states);
  states.require_finite("states");
  const std::size_t batch = states.extent(0);
  const std::size_t acts = net.num_actions;
  const std::size_t width = net.trunk_width();

  ForwardResult out;
  out.probs = Tensor({batch, acts});
  out.values.assign(batch, 0.0);
  out.hidden = Tensor({batch, width});

  TrunkTrace trace;
  std::vector<double> logits(acts), logp(acts);
  for (std::size_t b = 0; b < batch; ++b) {
    trunk_forward(net, states.row(b), trace);
    const double* h = trace.h.back().data();
    std::copy(h, h + width, out.hidden.row(b));
    affine(net.policy_head, h, logits.data());
    softmax_logp(logits.data(), acts, out.probs.row(b), logp.data());
    double v;
    affine(net.value_head, h, &v);
    out.values[b] = v;
  }
  out.probs.require_finite("probs");
  return out;
}

ForwardResult forward_one(const PolicyValueNet& net, const std::vector<double>& state) {
  return forward(net, Tensor({1, state.size()}, state));
}

LossTerms loss(const PolicyValueNet& net, const Tensor& states,
               const std::vector<int>& actions,
               const std::vector<double>& advantages,
               const std::vector<double>& value_targets,
               double value_coef, double entropy_coef) {
  check_training_batch(net, states, actions, advantages, value_targets);
  const std::size_t batch = states.extent(0);
  const std::size_t acts = net.num_actions;

  TrunkTrace trace;
  std::vector<double> logits(acts), probs(acts), logp(acts);
  LossTerms terms;
  for (std::size_t b = 0; b < batch; ++b) {
    trunk_forward(net, states.row(b), trace);
    const double* h = trace.h.back().data();
    affine(net.policy_head, h, logits.data());
    softmax_logp(logits.data(), acts, probs.data(), logp.data());
    double v;
    affine(net.value_head, h, &v);

    terms.policy += -logp[actions[b]] * advantages[b];
    const double diff = value_targets[b] - v;
    terms.value += diff * diff;
    double ent = 0.0;
    for (std::size_t k = 0; k < acts; ++k) ent -= probs[k] * logp[k];
    terms.entropy += ent;
  }
  const double inv = 1.0 / static_cast<double>(batch);
  terms.policy *= inv;
  terms.value *= value_coef * inv;
  terms.entropy *= inv;
  terms.total = terms.policy + terms.value - entropy_coef * terms.entropy;
  return terms;
}

Gradients backward(const PolicyValueNet& net, const Tensor& states,
                   const std::vector<int>& actions,
                   const std::vector<double>& advantages,
                   const std::vector<double>& value_targets,
                   double value_coef, double entropy_coef) {
  check_training_batch(net, states, actions, advantages, value_targets);
  const std::size_t batch = states.extent(0);
  const std::size_t acts = net.num_actions;
  const double inv = 1.0 / static_cast<double>(batch);

  Gradients grads = Gradients::zeros_like(net);
  grads.accum_count = batch;

  TrunkTrace trace;
  std::vector<double> logits(acts), probs(acts), logp(acts), dlogits(acts);
  std::vector<double> dh(net.trunk_width());
  std::vector<double> dprev;
  for (std::size_t b = 0; b < batch; ++b) {
    trunk_forward(net, states.row(b), trace);
    const double* h = trace.h.back().data();
    affine(net.policy_head, h, logits.data());
    softmax_logp(logits.data(), acts, probs.data(), logp.data());
    double v;
    affine(net.value_head, h, &v);

    double ent = 0.0;
    for (std::size_t k = 0; k < acts; ++k) ent -= probs[k] * logp[k];

    // d/dlogits of the policy term plus the entropy bonus.
    const int a = actions[b];
    for (std::size_t k = 0; k < acts; ++k) {
      const double indicator = (static_cast<int>(k) == a) ? 1.0 : 0.0;
      const double policy_part = (probs[k] - indicator) * advantages[b];
      const double entropy_part = entropy_coef * probs[k] * (logp[k] + ent);
      dlogits[k] = (policy_part + entropy_part) * inv;
    }
    const double dv = 2.0 * value_coef * (v - value_targets[b]) * inv;

    accumulate_outer(grads.policy_head, dlogits.data(), h, acts, net.trunk_width());
    accumulate_outer(grads.value_head, &dv, h, 1, net.trunk_width());

    // dL/dh from both heads.
    backprop_through(net.policy_head, dlogits.data(), dh.data());
    {
      const double* wv = net.value_head.weights.data();
      for (std::size_t i = 0; i < net.trunk_width(); ++i) dh[i] += dv * wv[i];
    }

    // Back through the trunk.
    std::vector<double>* dcur = &dh;
    for (std::size_t l = net.trunk.size(); l-- > 0;) {
      const DenseLayer& layer = net.trunk[l];
      for (std::size_t i = 0; i < layer.out_dim(); ++i) {
        if (trace.z[l][i] <= 0.0) (*dcur)[i] = 0.0;
      }
      const double* x = (l == 0) ? states.row(b) : trace.h[l - 1].data();
      accumulate_outer(grads.trunk[l], dcur->data(), x, layer.out_dim(), layer.in_dim());
      if (l > 0) {
        dprev.resize(layer.in_dim());
        backprop_through(layer, dcur->data(), dprev.data());
        dh = dprev;
        dcur = &dh;
      }
    }
  }
  return grads;
}

void sgd_step(PolicyValueNet& net, const Gradients& grads, double alpha,
              double max_grad_norm) {
  if (alpha < 0.0) throw ArgumentError("alpha must be >= 0");
  if (grads.trunk.size() != net.trunk.size() ||
      grads.policy_head.dweights.shape() != net.policy_head.weights.shape() ||
      grads.value_head.dweights.shape() != net.value_head.weights.shape()) {
    throw DimensionError("gradients are not shape-congruent with the net");
  }
  for (std::size_t l = 0; l < net.trunk.size(); ++l) {
    if (grads.trunk[l].dweights.shape() != net.trunk[l].weights.shape()) {
      throw DimensionError("gradients are not shape-congruent with the net");
    }
  }

  const double norm = grads.global_norm();
  double scale = 1.0;
  if (max_grad_norm > 0.0 && std::isfinite(max_grad_norm) && norm > max_grad_norm) {
    scale = max_grad_norm / norm;
  }
  const double step = alpha * scale;

  auto apply = [&](DenseLayer& layer, const LayerGrads& g) {
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      layer.weights[i] -= step * g.dweights[i];
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      layer.bias[i] -= step * g.dbias[i];
    }
  };
  for (std::size_t l = 0; l < net.trunk.size(); ++l) apply(net.trunk[l], grads.trunk[l]);
  apply(net.policy_head, grads.policy_head);
  apply(net.value_head, grads.value_head);
}

GradCheckReport grad_check(const PolicyValueNet& net, const Tensor& states,
                           const std::vector<int>& actions,
                           const std::vector<double>& advantages,
                           const std::vector<double>& value_targets,
                           double value_coef, double entropy_coef,
                           double tolerance) {
  const Gradients analytic = backward(net, states, actions, advantages,
                                      value_targets, value_coef, entropy_coef);
  std::vector<double> flat;
  flat.reserve(net.parameter_count());
  for_each_grad(analytic, [&](double v) { flat.push_back(v); });

  PolicyValueNet probe = net;
  const double h = 1e-5;
  GradCheckReport report;
  report.params_checked = flat.size();

  std::size_t idx = 0;
  for_each_param(probe, [&](double& p) {
    const double saved = p;
    p = saved + h;
    const double lp = loss(probe, states, actions, advantages, value_targets,
                           value_coef, entropy_coef).total;
    p = saved - h;
    const double lm = loss(probe, states, actions, advantages, value_targets,
                           value_coef, entropy_coef).total;
    p = saved;

    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic_v = flat[idx++];
    const double denom = std::max(std::abs(numeric), std::abs(analytic_v));
    const double err = denom < 1e-8 ? std::abs(numeric - analytic_v)
                                    : std::abs(numeric - analytic_v) / denom;
    report.max_rel_err = std::max(report.max_rel_err, err);
  });
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

InputGradResult policy_nll_input_gradient(const PolicyValueNet& net,
                                          const Tensor& states, int action) {
  check_batch(net, states);
  if (action < 0 || static_cast<std::size_t>(action) >= net.num_actions) {
    throw ArgumentError("action out of range");
  }
  const std::size_t batch = states.extent(0);
  const std::size_t acts = net.num_actions;
  const double inv = 1.0 / static_cast<double>(batch);

  InputGradResult out;
  out.dstates = Tensor(states.shape());
  out.probs = Tensor({batch, acts});

  TrunkTrace trace;
  std::vector<double> logits(acts), logp(acts), dlogits(acts);
  std::vector<double> dh(net.trunk_width());
  std::vector<double> dprev;
  for (std::size_t b = 0; b < batch; ++b) {
    trunk_forward(net, states.row(b), trace);
    const double* h = trace.h.back().data();
    affine(net.policy_head, h, logits.data());
    softmax_logp(logits.data(), acts, out.probs.row(b), logp.data());
    out.mean_nll += -logp[action] * inv;

    for (std::size_t k = 0; k < acts; ++k) {
      const double indicator = (static_cast<int>(k) == static_cast<std::size_t>(action)) ? 1.0 : 0.0;
      dlogits[k] = (out.probs.at2(b, k) - indicator) * inv;
    }
    backprop_through(net.policy_head, dlogits.data(), dh.data());
    std::vector<double>* dcur = &dh;
    for (std::size_t l = net.trunk.size(); l-- > 0;) {
      const DenseLayer& layer = net.trunk[l];
      for (std::size_t i = 0; i < layer.out_dim(); ++i) {
        if (trace.z[l][i] <= 0.0) (*dcur)[i] = 0.0;
      }
      dprev.resize(layer.in_dim());
      backprop_through(layer, dcur->data(), dprev.data());
      dh = dprev;
      dcur = &dh;
    }
    std::copy(dh.begin(), dh.end(), out.dstates.row(b));
  }
  return out;
}

std::vector<std::uint8_t> checkpoint_bytes(const PolicyValueNet& net) {
  std::vector<const DenseLayer*> layers;
  for (const auto& layer : net.trunk) layers.push_back(&layer);
  layers.push_back(&net.policy_head);
  layers.push_back(&net.value_head);

  std::vector<std::uint8_t> out;
  out.push_back('T');
  out.push_back('D');
  out.push_back('R');
  out.push_back('L');
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(net.num_actions));
  write_u32(out, static_cast<std::uint32_t>(net.input_dim));
  write_u32(out, static_cast<std::uint32_t>(layers.size()));
  for (const DenseLayer* layer : layers) {
    write_u32(out, static_cast<std::uint32_t>(layer->out_dim()));
    write_u32(out, static_cast<std::uint32_t>(layer->in_dim()));
  }
  for (const DenseLayer* layer : layers) {
    for (std::size_t i = 0; i < layer->weights.size(); ++i) write_f64(out, layer->weights[i]);
    for (double b : layer->bias) write_f64(out, b);
  }
  return out;
}

void save_checkpoint(const PolicyValueNet& net, const std::filesystem::path& path) {
  const auto bytes = checkpoint_bytes(net);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ArgumentError("cannot open checkpoint for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw NumericError("checkpoint write failed: " + path.string());
}

PolicyValueNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || bytes[0] != 'T' || bytes[1] != 'D' || bytes[2] != 'R' ||
      bytes[3] != 'L') {
    throw ArgumentError("bad checkpoint magic: " + path.string());
  }
  ByteReader r{bytes.data() + 4, bytes.data() + bytes.size()};
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw ArgumentError("unsupported checkpoint version");
  const std::uint32_t num_actions = r.u32();
  const std::uint32_t input_dim = r.u32();
  const std::uint32_t layer_count = r.u32();
  if (layer_count < 3) throw ArgumentError("checkpoint must hold trunk + two heads");

  std::vector<std::pair<std::uint32_t, std::uint32_t>> dims(layer_count);
  for (auto& d : dims) {
    d.first = r.u32();
    d.second = r.u32();
  }

  auto read_layer = [&](std::uint32_t rows, std::uint32_t cols) {
    DenseLayer layer;
    layer.weights = Tensor({rows, cols});
    for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.weights[i] = r.f64();
    layer.bias.resize(rows);
    for (auto& b : layer.bias) b = r.f64();
    return layer;
  };

  PolicyValueNet net;
  net.input_dim = input_dim;
  net.num_actions = num_actions;
  for (std::uint32_t l = 0; l + 2 < layer_count; ++l) {
    net.trunk.push_back(read_layer(dims[l].first, dims[l].second));
  }
  net.policy_head = read_layer(dims[layer_count - 2].first, dims[layer_count - 2].second);
  net.value_head = read_layer(dims[layer_count - 1].first, dims[layer_count - 1].second);

  if (net.policy_head.out_dim() != num_actions || net.value_head.out_dim() != 1 ||
      net.trunk.empty() || net.trunk.front().in_dim() != input_dim) {
    throw ArgumentError("checkpoint layer dims inconsistent with header");
  }
  return net;
}

}  // namespace tdrl
