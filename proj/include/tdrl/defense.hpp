#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdrl/envs.hpp"
#include "tdrl/evalkit.hpp"
#include "tdrl/nnkit.hpp"
#include "tdrl/trojan.hpp"

namespace tdrl {

struct ActivationSet {
  Tensor activations;                 // [samples, trunk_width]
  std::vector<int> actions;           // action chosen on each sample
  std::vector<std::uint8_t> poisoned; // ground truth, harness-side only
};

// The slice of an ActivationSet that detection logic is allowed to see.
struct DetectionView {
  const Tensor& activations;
  const std::vector<int>& actions;

  explicit DetectionView(const ActivationSet& set)
      : activations(set.activations), actions(set.actions) {}
};

// Simulates the defender's sample set: on-policy states, a seeded fraction of
// them poisoned with the trigger, hidden activations and chosen actions
// recorded.
ActivationSet collect_activations(const PolicyValueNet& net, const EnvConfig& env_cfg,
                                  int samples, double poison_fraction,
                                  const TriggerSpec& trigger, std::uint64_t seed);

enum class Reducer { pca, ica };

struct ClusterReport {
  int k = 0;
  std::vector<std::size_t> sample_indices;  // rows (into the set) that were clustered
  std::vector<int> assignments;             // per clustered sample
  std::vector<std::size_t> cluster_sizes;
  double silhouette = -2.0;  // sentinel when undefined
  bool silhouette_defined = false;
  bool degenerate = false;
  std::string warning;
  double purity = -1.0;  // harness-only, filled by cluster_purity
};

// Center -> PCA(reduced_dim) -> optional FastICA -> k-means (k-means++, 10
// restarts); silhouette computed in the reduced space.
ClusterReport reduce_and_cluster(const DetectionView& view, int target_action, int k,
                                 Reducer reducer, std::size_t reduced_dim,
                                 std::uint64_t seed);

// Harness-side: fraction of clustered samples whose cluster majority class
// (clean vs poisoned) matches their own flag.
double cluster_purity(const ClusterReport& report, const ActivationSet& set);

// Poisoned-sample counts per cluster; harness-side companion to the purity.
std::vector<std::size_t> cluster_poison_counts(const ClusterReport& report,
                                               const ActivationSet& set);

struct SynthesisParams {
  double beta = 0.01;       // weight of the mask L1 penalty
  int iters = 300;
  double step_size = 1.0;
  double mask_init = 0.5;   // starting sigmoid(w); shrinks under the penalty
  std::uint64_t seed = 0;
  double holdout_fraction = 0.25;
};

struct SynthesizedTrigger {
  int action = 0;
  Tensor mask;     // [H, W], entries in (0, 1)
  Tensor pattern;  // [H, W]
  double mask_l1 = 0.0;
  double attack_success_rate = 0.0;
  double final_loss = 0.0;
};

// Loss and gradient of the reverse-engineering objective on logit parameters
// (w, v) with mask = sigmoid(w), pattern = sigmoid(v):
//   mean_s[-log pi(action | blend(s))] + beta * ||mask||_1
// Exposed so the gradients can be finite-difference checked.
struct SynthesisObjective {
  const PolicyValueNet& net;
  Tensor states;  // [n, input_dim] clean states
  FrameGeometry geom;
  int action;
  double beta;

  double loss(const std::vector<double>& w, const std::vector<double>& v) const;
  void gradient(const std::vector<double>& w, const std::vector<double>& v,
                std::vector<double>& dw, std::vector<double>& dv) const;
};

SynthesizedTrigger synthesize_trigger(const PolicyValueNet& net, const Tensor& clean_states,
                                      const FrameGeometry& geom, int action,
                                      const SynthesisParams& params);

// One synthesis per action, sharing the clean-state pool.
std::vector<SynthesizedTrigger> synthesize_all_actions(const PolicyValueNet& net,
                                                       const Tensor& clean_states,
                                                       const FrameGeometry& geom,
                                                       const SynthesisParams& params);

struct AnomalyReport {
  std::vector<double> index;          // per action
  std::vector<std::uint8_t> flagged;  // index > 2 and l1 below the median
  double median_l1 = 0.0;
  double mad = 0.0;
};

// Robust outlier score of per-action mask norms:
//   index_a = |l1_a - median| / (1.4826 * MAD)
AnomalyReport anomaly_scores(const std::vector<double>& mask_l1);

}  // namespace tdrl
