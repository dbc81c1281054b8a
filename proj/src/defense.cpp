#include "tdrl/defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tdrl/parallel.hpp"

namespace tdrl {

namespace {

// --- small dense linear algebra -------------------------------------------

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Returns eigenvalues descending with matching columns in vectors.
void jacobi_eigen_sym(std::vector<double> a, std::size_t n,
                      std::vector<double>& eigenvalues,
                      std::vector<double>& eigenvectors) {
  eigenvectors.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eigenvectors[i * n + i] = 1.0;

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    }
    return std::sqrt(2.0 * s);
  };

  double total = 0.0;
  for (double x : a) total += x * x;
  const double stop = 1e-12 * std::max(1.0, std::sqrt(total));

  for (int sweep = 0; sweep < 64 && off_norm() > stop; ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = eigenvectors[k * n + p];
          const double vkq = eigenvectors[k * n + q];
          eigenvectors[k * n + p] = c * vkp - s * vkq;
          eigenvectors[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  eigenvalues.resize(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    eigenvalues[i] = a[i * n + i];
    order[i] = i;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return eigenvalues[x] > eigenvalues[y]; });

  std::vector<double> sorted_vals(n);
  std::vector<double> sorted_vecs(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    sorted_vals[j] = eigenvalues[order[j]];
    for (std::size_t i = 0; i < n; ++i) sorted_vecs[i * n + j] = eigenvectors[i * n + order[j]];
  }
  eigenvalues = std::move(sorted_vals);
  eigenvectors = std::move(sorted_vecs);
}

struct ReducedData {
  Tensor points;  // [n, d]
  std::size_t effective_rank = 0;
};

ReducedData pca_reduce(const Tensor& rows, std::size_t reduced_dim, bool whiten) {
  const std::size_t n = rows.extent(0);
  const std::size_t dim = rows.extent(1);

  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = rows.row(i);
    for (std::size_t j = 0; j < dim; ++j) mean[j] += r[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<double> cov(dim * dim, 0.0);
  std::vector<double> centered(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = rows.row(i);
    double* c = centered.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) c[j] = r[j] - mean[j];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* c = centered.data() + i * dim;
    for (std::size_t a = 0; a < dim; ++a) {
      const double ca = c[a];
      if (ca == 0.0) continue;
      for (std::size_t b = a; b < dim; ++b) cov[a * dim + b] += ca * c[b];
    }
  }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b = a; b < dim; ++b) {
      cov[a * dim + b] /= denom;
      cov[b * dim + a] = cov[a * dim + b];
    }
  }

  std::vector<double> evals, evecs;
  jacobi_eigen_sym(std::move(cov), dim, evals, evecs);

  const double lead = std::max(evals.empty() ? 0.0 : evals[0], 0.0);
  std::size_t rank = 0;
  for (double l : evals) {
    if (l > std::max(1e-12, lead * 1e-10)) ++rank;
  }

  const std::size_t d = std::min({reduced_dim, dim, n > 1 ? n - 1 : std::size_t{1}});
  ReducedData out;
  out.effective_rank = rank;
  out.points = Tensor({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double* c = centered.data() + i * dim;
    double* dst = out.points.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t f = 0; f < dim; ++f) acc += c[f] * evecs[f * dim + j];
      if (whiten) {
        const double l = std::max(evals[j], 1e-12);
        acc /= std::sqrt(l);
      }
      dst[j] = acc;
    }
  }
  return out;
}

// FastICA, deflation scheme with tanh nonlinearity on whitened data.
Tensor fastica(const Tensor& whitened, Rng& rng, int max_iter, double tol) {
  const std::size_t n = whitened.extent(0);
  const std::size_t d = whitened.extent(1);

  std::vector<std::vector<double>> ws;
  for (std::size_t comp = 0; comp < d; ++comp) {
    std::vector<double> w(d);
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    auto orthonormalize = [&](std::vector<double>& vec) {
      for (const auto& prev : ws) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += vec[j] * prev[j];
        for (std::size_t j = 0; j < d; ++j) vec[j] -= dot * prev[j];
      }
      double norm = 0.0;
      for (double x : vec) norm += x * x;
      norm = std::sqrt(std::max(norm, 1e-300));
      for (double& x : vec) x /= norm;
    };
    orthonormalize(w);

    for (int it = 0; it < max_iter; ++it) {
      std::vector<double> w_new(d, 0.0);
      double gprime_mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = whitened.row(i);
        double u = 0.0;
        for (std::size_t j = 0; j < d; ++j) u += w[j] * x[j];
        const double g = std::tanh(u);
        gprime_mean += 1.0 - g * g;
        for (std::size_t j = 0; j < d; ++j) w_new[j] += x[j] * g;
      }
      const double inv = 1.0 / static_cast<double>(n);
      gprime_mean *= inv;
      for (std::size_t j = 0; j < d; ++j) w_new[j] = w_new[j] * inv - gprime_mean * w[j];
      orthonormalize(w_new);

      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += w_new[j] * w[j];
      w = w_new;
      if (std::abs(std::abs(dot) - 1.0) < tol) break;
    }
    ws.push_back(w);
  }

  Tensor components({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = whitened.row(i);
    double* dst = components.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += ws[c][j] * x[j];
      dst[c] = acc;
    }
  }
  return components;
}

struct KMeansResult {
  std::vector<int> assignments;
  std::vector<double> centers;  // [k, d]
  double inertia = std::numeric_limits<double>::infinity();
};

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

KMeansResult kmeans_once(const Tensor& points, int k, Rng& rng) {
  const std::size_t n = points.extent(0);
  const std::size_t d = points.extent(1);

  // k-means++ seeding
  std::vector<double> centers(static_cast<std::size_t>(k) * d);
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = rng.uniform_int(static_cast<int>(n));
    std::copy(points.row(first), points.row(first) + d, centers.begin());
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        dist2[i] = std::min(dist2[i], sq_dist(points.row(i), centers.data() + (c - 1) * d, d));
        total += dist2[i];
      }
      std::size_t chosen = 0;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += dist2[i];
          if (acc >= target) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = rng.uniform_int(static_cast<int>(n));
      }
      std::copy(points.row(chosen), points.row(chosen) + d, centers.begin() + c * d);
    }
  }

  KMeansResult result;
  result.assignments.assign(n, 0);
  std::vector<std::size_t> counts(k, 0);
  for (int iter = 0; iter < 200; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points.row(i), centers.data(), d);
      for (int c = 1; c < k; ++c) {
        const double dd = sq_dist(points.row(i), centers.data() + c * d, d);
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (result.assignments[i] != best) {
        result.assignments[i] = best;
        changed = true;
      }
    }

    std::fill(centers.begin(), centers.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = result.assignments[i];
      ++counts[c];
      const double* p = points.row(i);
      double* ctr = centers.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) ctr[j] += p[j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster with the point farthest from its center.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const int a = result.assignments[i];
          const double dd = sq_dist(points.row(i), centers.data() + a * d, d);
          if (dd > far_d) {
            far_d = dd;
            far = i;
          }
        }
        std::copy(points.row(far), points.row(far) + d, centers.begin() + c * d);
        counts[c] = 1;
        changed = true;
        continue;
      }
      double* ctr = centers.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) ctr[j] /= static_cast<double>(counts[c]);
    }
    if (!changed && iter > 0) break;
  }

  result.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    result.inertia += sq_dist(points.row(i), centers.data() + result.assignments[i] * d, d);
  }
  result.centers = std::move(centers);
  return result;
}

KMeansResult kmeans(const Tensor& points, int k, int restarts, Rng& rng) {
  KMeansResult best;
  for (int r = 0; r < restarts; ++r) {
    KMeansResult cur = kmeans_once(points, k, rng);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

double silhouette_score(const Tensor& points, const std::vector<int>& assignments, int k) {
  const std::size_t n = points.extent(0);
  const std::size_t d = points.extent(1);
  std::vector<std::size_t> sizes(k, 0);
  for (int a : assignments) ++sizes[a];

  double total = 0.0;
  std::vector<double> mean_dist(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(mean_dist.begin(), mean_dist.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      mean_dist[assignments[j]] += std::sqrt(sq_dist(points.row(i), points.row(j), d));
    }
    const int own = assignments[i];
    const double a = sizes[own] > 1 ? mean_dist[own] / static_cast<double>(sizes[own] - 1) : 0.0;
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == own || sizes[c] == 0) continue;
      b = std::min(b, mean_dist[c] / static_cast<double>(sizes[c]));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

ActivationSet collect_activations(const PolicyValueNet& net, const EnvConfig& env_cfg,
                                  int samples, double poison_fraction,
                                  const TriggerSpec& trigger, std::uint64_t seed) {
  if (samples < 1) throw ArgumentError("samples must be >= 1");
  if (poison_fraction < 0.0 || poison_fraction > 1.0) {
    throw ArgumentError("poison_fraction must be in [0, 1]");
  }
  trigger.validate(env_cfg.geometry());

  EnvConfig cfg = env_cfg;
  cfg.seed = derive_seed(seed, 0x64656631);
  auto env = make_env(cfg);
  Rng play_rng(derive_seed(seed, 0x64656632));

  Tensor states({static_cast<std::size_t>(samples), cfg.input_dim()});
  Observation obs = env->reset();
  for (int i = 0; i < samples; ++i) {
    obs.flatten_into(states.row(i));
    const int action = policy_action(net, obs.flatten(), PolicyMode::sample, play_rng);
    const StepResult sr = env->step(action);
    obs = sr.episode_done ? env->reset() : sr.observation;
  }

  // Seeded selection of exactly round(fraction * samples) rows to poison.
  const std::int64_t n_poison = std::llround(poison_fraction * samples);
  std::vector<std::uint8_t> flags(samples, 0);
  {
    Rng pick_rng(derive_seed(seed, 0x64656633));
    std::int64_t remaining = n_poison;
    for (int i = 0; i < samples && remaining > 0; ++i) {
      const double u = pick_rng.uniform();
      if (u * static_cast<double>(samples - i) < static_cast<double>(remaining)) {
        flags[i] = 1;
        --remaining;
      }
    }
  }
  const FrameGeometry geom = cfg.geometry();
  for (int i = 0; i < samples; ++i) {
    if (flags[i]) apply_trigger_flat(states.row(i), geom, trigger);
  }

  const ForwardResult fwd = forward(net, states);
  ActivationSet set;
  set.activations = fwd.hidden;
  set.poisoned = std::move(flags);
  set.actions.resize(samples);
  Rng act_rng(derive_seed(seed, 0x64656634));
  for (int i = 0; i < samples; ++i) {
    set.actions[i] = act_rng.sample_discrete(fwd.probs.row(i),
                                             static_cast<int>(net.num_actions));
  }
  return set;
}

ClusterReport reduce_and_cluster(const DetectionView& view, int target_action, int k,
                                 Reducer reducer, std::size_t reduced_dim,
                                 std::uint64_t seed) {
  if (k < 1) throw ArgumentError("k must be >= 1");
  if (reduced_dim < 1) throw ArgumentError("reduced_dim must be >= 1");
  if (reduced_dim > view.activations.extent(1)) {
    throw ArgumentError("reduced_dim exceeds activation width");
  }

  ClusterReport report;
  report.k = k;
  for (std::size_t i = 0; i < view.actions.size(); ++i) {
    if (view.actions[i] == target_action) report.sample_indices.push_back(i);
  }
  const std::size_t n = report.sample_indices.size();
  if (n < static_cast<std::size_t>(k)) {
    throw ArgumentError("need at least k samples with the target action");
  }

  Tensor selected({n, view.activations.extent(1)});
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = view.activations.row(report.sample_indices[i]);
    std::copy(src, src + view.activations.extent(1), selected.row(i));
  }

  const bool whiten = reducer == Reducer::ica;
  ReducedData reduced = pca_reduce(selected, reduced_dim, whiten);
  if (reduced.effective_rank < static_cast<std::size_t>(k)) {
    report.degenerate = true;
    report.warning = "data rank below k; clusters may be arbitrary";
  }

  Rng rng(derive_seed(seed, 0x636c7573));
  Tensor space = reduced.points;
  if (reducer == Reducer::ica) {
    space = fastica(space, rng, 200, 1e-4);
  }

  if (k == 1) {
    report.assignments.assign(n, 0);
    report.cluster_sizes = {n};
    return report;
  }

  const KMeansResult km = kmeans(space, k, 10, rng);
  report.assignments = km.assignments;
  report.cluster_sizes.assign(k, 0);
  for (int a : km.assignments) ++report.cluster_sizes[a];

  const bool any_empty =
      std::any_of(report.cluster_sizes.begin(), report.cluster_sizes.end(),
                  [](std::size_t s) { return s == 0; });
  if (!any_empty) {
    report.silhouette = silhouette_score(space, km.assignments, k);
    report.silhouette_defined = true;
  }
  return report;
}

double cluster_purity(const ClusterReport& report, const ActivationSet& set) {
  if (report.assignments.empty()) return -1.0;
  std::vector<std::size_t> poisoned(report.k, 0), total(report.k, 0);
  for (std::size_t i = 0; i < report.assignments.size(); ++i) {
    const int c = report.assignments[i];
    ++total[c];
    if (set.poisoned[report.sample_indices[i]]) ++poisoned[c];
  }
  std::size_t majority = 0;
  for (int c = 0; c < report.k; ++c) {
    majority += std::max(poisoned[c], total[c] - poisoned[c]);
  }
  return static_cast<double>(majority) / static_cast<double>(report.assignments.size());
}

std::vector<std::size_t> cluster_poison_counts(const ClusterReport& report,
                                               const ActivationSet& set) {
  std::vector<std::size_t> poisoned(report.k, 0);
  for (std::size_t i = 0; i < report.assignments.size(); ++i) {
    if (set.poisoned[report.sample_indices[i]]) ++poisoned[report.assignments[i]];
  }
  return poisoned;
}

double SynthesisObjective::loss(const std::vector<double>& w,
                                const std::vector<double>& v) const {
  const std::size_t fs = geom.frame_size();
  if (w.size() != fs || v.size() != fs) throw DimensionError("mask/pattern size mismatch");

  Tensor blended = states;
  double l1 = 0.0;
  std::vector<double> m(fs), p(fs);
  for (std::size_t i = 0; i < fs; ++i) {
    m[i] = sigmoid(w[i]);
    p[i] = sigmoid(v[i]);
    l1 += m[i];
  }
  const std::size_t off = geom.last_frame_offset();
  for (std::size_t b = 0; b < blended.extent(0); ++b) {
    double* row = blended.row(b) + off;
    for (std::size_t i = 0; i < fs; ++i) row[i] = (1.0 - m[i]) * row[i] + m[i] * p[i];
  }
  const InputGradResult fwd = policy_nll_input_gradient(net, blended, action);
  return fwd.mean_nll + beta * l1;
}

void SynthesisObjective::gradient(const std::vector<double>& w,
                                  const std::vector<double>& v,
                                  std::vector<double>& dw,
                                  std::vector<double>& dv) const {
  const std::size_t fs = geom.frame_size();
  if (w.size() != fs || v.size() != fs) throw DimensionError("mask/pattern size mismatch");

  std::vector<double> m(fs), p(fs);
  for (std::size_t i = 0; i < fs; ++i) {
    m[i] = sigmoid(w[i]);
    p[i] = sigmoid(v[i]);
  }

  Tensor blended = states;
  const std::size_t off = geom.last_frame_offset();
  for (std::size_t b = 0; b < blended.extent(0); ++b) {
    double* row = blended.row(b) + off;
    for (std::size_t i = 0; i < fs; ++i) row[i] = (1.0 - m[i]) * row[i] + m[i] * p[i];
  }

  const InputGradResult back = policy_nll_input_gradient(net, blended, action);

  dw.assign(fs, 0.0);
  dv.assign(fs, 0.0);
  for (std::size_t b = 0; b < states.extent(0); ++b) {
    const double* g = back.dstates.row(b) + off;  // d(mean nll)/d(blended pixel)
    const double* s = states.row(b) + off;
    for (std::size_t i = 0; i < fs; ++i) {
      dw[i] += g[i] * (p[i] - s[i]);
      dv[i] += g[i] * m[i];
    }
  }
  for (std::size_t i = 0; i < fs; ++i) {
    dw[i] = (dw[i] + beta) * m[i] * (1.0 - m[i]);
    dv[i] = dv[i] * p[i] * (1.0 - p[i]);
  }
}

SynthesizedTrigger synthesize_trigger(const PolicyValueNet& net, const Tensor& clean_states,
                                      const FrameGeometry& geom, int action,
                                      const SynthesisParams& params) {
  if (clean_states.rank() != 2 || clean_states.extent(0) < 2) {
    throw ArgumentError("clean_states must be [n >= 2, input_dim]");
  }
  if (action < 0 || static_cast<std::size_t>(action) >= net.num_actions) {
    throw ArgumentError("action out of range");
  }

  const std::size_t n = clean_states.extent(0);
  const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(
      std::floor(params.holdout_fraction * static_cast<double>(n))));
  const std::size_t n_train = n - n_hold;
  const std::size_t dim = clean_states.extent(1);

  Tensor train({n_train, dim});
  Tensor holdout({n_hold, dim});
  for (std::size_t i = 0; i < n_train; ++i) {
    std::copy(clean_states.row(i), clean_states.row(i) + dim, train.row(i));
  }
  for (std::size_t i = 0; i < n_hold; ++i) {
    std::copy(clean_states.row(n_train + i), clean_states.row(n_train + i) + dim,
              holdout.row(i));
  }

  SynthesisObjective objective{net, std::move(train), geom, action, params.beta};

  const std::size_t fs = geom.frame_size();
  Rng rng(derive_seed(params.seed, 0x73796e74));
  std::vector<double> w(fs), v(fs);
  if (params.mask_init <= 0.0 || params.mask_init >= 1.0) {
    throw ArgumentError("mask_init must be in (0, 1)");
  }
  const double w0 = std::log(params.mask_init / (1.0 - params.mask_init));
  for (std::size_t i = 0; i < fs; ++i) {
    w[i] = w0 + rng.uniform(-0.1, 0.1);
    v[i] = rng.uniform(-0.1, 0.1);
  }

  double step = params.step_size;
  std::vector<double> dw, dv;
  double last_loss = objective.loss(w, v);
  for (int it = 0; it < params.iters; ++it) {
    objective.gradient(w, v, dw, dv);
    std::vector<double> w_save = w, v_save = v;
    for (std::size_t i = 0; i < fs; ++i) {
      w[i] -= step * dw[i];
      v[i] -= step * dv[i];
    }
    const double cur = objective.loss(w, v);
    if (!std::isfinite(cur)) {
      bool recovered = false;
      for (int retry = 0; retry < 5 && !recovered; ++retry) {
        step *= 0.5;
        w = w_save;
        v = v_save;
        for (std::size_t i = 0; i < fs; ++i) {
          w[i] -= step * dw[i];
          v[i] -= step * dv[i];
        }
        const double retry_loss = objective.loss(w, v);
        if (std::isfinite(retry_loss)) {
          last_loss = retry_loss;
          recovered = true;
        }
      }
      if (!recovered) throw NumericError("trigger synthesis diverged");
    } else {
      last_loss = cur;
    }
  }

  SynthesizedTrigger out;
  out.action = action;
  out.mask = Tensor({geom.height, geom.width});
  out.pattern = Tensor({geom.height, geom.width});
  for (std::size_t i = 0; i < fs; ++i) {
    out.mask[i] = sigmoid(w[i]);
    out.pattern[i] = sigmoid(v[i]);
    out.mask_l1 += std::abs(out.mask[i]);
  }
  out.final_loss = last_loss;

  // Success rate on held-out states with the synthesized blend, greedy read.
  std::size_t hits = 0;
  Tensor blended = holdout;
  const std::size_t off = geom.last_frame_offset();
  for (std::size_t b = 0; b < n_hold; ++b) {
    double* row = blended.row(b) + off;
    for (std::size_t i = 0; i < fs; ++i) {
      row[i] = (1.0 - out.mask[i]) * row[i] + out.mask[i] * out.pattern[i];
    }
  }
  const ForwardResult fwd = forward(net, blended);
  for (std::size_t b = 0; b < n_hold; ++b) {
    const double* p = fwd.probs.row(b);
    int best = 0;
    for (std::size_t k2 = 1; k2 < net.num_actions; ++k2) {
      if (p[k2] > p[best]) best = static_cast<int>(k2);
    }
    if (best == action) ++hits;
  }
  out.attack_success_rate = static_cast<double>(hits) / static_cast<double>(n_hold);
  return out;
}

std::vector<SynthesizedTrigger> synthesize_all_actions(const PolicyValueNet& net,
                                                       const Tensor& clean_states,
                                                       const FrameGeometry& geom,
                                                       const SynthesisParams& params) {
  std::vector<SynthesizedTrigger> out(net.num_actions);
  parallel_for_indexed(net.num_actions, [&](std::size_t a) {
    SynthesisParams p = params;
    p.seed = derive_seed(params.seed, 0xa11 + a);
    out[a] = synthesize_trigger(net, clean_states, geom, static_cast<int>(a), p);
  });
  return out;
}

AnomalyReport anomaly_scores(const std::vector<double>& mask_l1) {
  if (mask_l1.size() < 3) throw ArgumentError("anomaly scoring needs >= 3 actions");
  AnomalyReport report;
  report.median_l1 = median_of(mask_l1);
  std::vector<double> dev(mask_l1.size());
  for (std::size_t i = 0; i < mask_l1.size(); ++i) {
    dev[i] = std::abs(mask_l1[i] - report.median_l1);
  }
  report.mad = median_of(dev);
  report.index.assign(mask_l1.size(), 0.0);
  report.flagged.assign(mask_l1.size(), 0);
  if (report.mad <= 0.0) return report;  // no detection possible
  for (std::size_t i = 0; i < mask_l1.size(); ++i) {
    report.index[i] = dev[i] / (1.4826 * report.mad);
    report.flagged[i] =
        (report.index[i] > 2.0 && mask_l1[i] < report.median_l1) ? 1 : 0;
  }
  return report;
}

}  // namespace tdrl
