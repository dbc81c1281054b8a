#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tdrl/a2c.hpp"
#include "tdrl/cli.hpp"
#include "tdrl/config.hpp"
#include "tdrl/defense.hpp"
#include "tdrl/envs.hpp"
#include "tdrl/evalkit.hpp"
#include "tdrl/nnkit.hpp"
#include "tdrl/trojan.hpp"
#include "tdrl/version.hpp"

namespace py = pybind11;
using namespace tdrl;

namespace {

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> arr(shape);
  std::copy(t.vec().begin(), t.vec().end(), arr.mutable_data());
  return arr;
}

Tensor array_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  std::vector<std::size_t> shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[i] = static_cast<std::size_t>(arr.shape(i));
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor(std::move(shape), std::move(data));
}

py::dict step_result_dict(const StepResult& sr) {
  py::dict d;
  d["observation"] = tensor_to_array(sr.observation.frames);
  d["reward"] = sr.reward;
  d["episode_done"] = sr.episode_done;
  d["life_lost"] = sr.life_lost;
  return d;
}

}  // namespace

PYBIND11_MODULE(_tdrl, m) {
  m.doc() = "Desk-scale lab for Trojan data-poisoning attacks on actor-critic agents";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::enum_<EnvName>(m, "EnvName")
      .value("catch", EnvName::catch_game)
      .value("mini_breakout", EnvName::mini_breakout);

  py::enum_<AttackMode>(m, "AttackMode")
      .value("targeted", AttackMode::targeted)
      .value("untargeted", AttackMode::untargeted);

  py::enum_<AttackStrength>(m, "AttackStrength")
      .value("strong", AttackStrength::strong)
      .value("weak", AttackStrength::weak);

  py::enum_<UntargetedSource>(m, "UntargetedSource")
      .value("uniform_random", UntargetedSource::uniform_random)
      .value("cycle", UntargetedSource::cycle);

  py::enum_<PolicyMode>(m, "PolicyMode")
      .value("sample", PolicyMode::sample)
      .value("greedy", PolicyMode::greedy);

  py::enum_<Reducer>(m, "Reducer").value("pca", Reducer::pca).value("ica", Reducer::ica);

  py::class_<EnvConfig>(m, "EnvConfig")
      .def(py::init<>())
      .def_readwrite("env_name", &EnvConfig::env_name)
      .def_readwrite("grid_h", &EnvConfig::grid_h)
      .def_readwrite("grid_w", &EnvConfig::grid_w)
      .def_readwrite("stack_k", &EnvConfig::stack_k)
      .def_readwrite("lives", &EnvConfig::lives)
      .def_readwrite("seed", &EnvConfig::seed)
      .def_readwrite("max_episode_steps", &EnvConfig::max_episode_steps)
      .def_property_readonly("input_dim", &EnvConfig::input_dim)
      .def_property_readonly("num_actions", &EnvConfig::num_actions);

  py::class_<Env>(m, "Env")
      .def("reset", [](Env& env) { return tensor_to_array(env.reset().frames); })
      .def("step", [](Env& env, int action) { return step_result_dict(env.step(action)); })
      .def_property_readonly("num_actions", &Env::num_actions)
      .def_property_readonly("episode_age", &Env::episode_age)
      .def_property_readonly("lives_left", &Env::lives_left)
      .def_property_readonly("done", &Env::done);

  m.def("make_env", &make_env, py::arg("config"));

  m.def("run_random_policy", [](const EnvConfig& cfg, int episodes) {
    const RandomPolicySummary s = run_random_policy(cfg, episodes);
    py::dict d;
    d["mean_return"] = s.mean_return;
    d["mean_ttf_clean"] = s.mean_ttf_clean;
    d["episodes"] = s.episodes;
    return d;
  }, py::arg("config"), py::arg("episodes"));

  py::class_<PolicyValueNet>(m, "PolicyValueNet")
      .def_static("create",
                  [](std::size_t input_dim, std::size_t num_actions,
                     const std::vector<std::size_t>& hidden, std::uint64_t seed) {
                    return PolicyValueNet::create(input_dim, num_actions, hidden, seed);
                  },
                  py::arg("input_dim"), py::arg("num_actions"),
                  py::arg("hidden") = std::vector<std::size_t>{128}, py::arg("seed") = 0)
      .def_property_readonly("input_dim", [](const PolicyValueNet& n) { return n.input_dim; })
      .def_property_readonly("num_actions", [](const PolicyValueNet& n) { return n.num_actions; })
      .def_property_readonly("parameter_count", &PolicyValueNet::parameter_count)
      .def("save", [](const PolicyValueNet& net, const std::filesystem::path& p) {
        save_checkpoint(net, p);
      }, py::arg("path"))
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); },
                  py::arg("path"));

  m.def("forward", [](const PolicyValueNet& net, const py::array_t<double>& states) {
    const ForwardResult r = forward(net, array_to_tensor(states));
    py::dict d;
    d["probs"] = tensor_to_array(r.probs);
    d["values"] = py::array_t<double>(static_cast<py::ssize_t>(r.values.size()), r.values.data());
    d["hidden"] = tensor_to_array(r.hidden);
    return d;
  }, py::arg("net"), py::arg("states"));

  py::class_<TriggerSpec>(m, "TriggerSpec")
      .def_static("default_patch", &TriggerSpec::default_patch, py::arg("height"),
                  py::arg("width"), py::arg("shade") = 0.5, py::arg("patch") = 3)
      .def_property("mask",
                    [](const TriggerSpec& t) { return tensor_to_array(t.mask); },
                    [](TriggerSpec& t, const py::array_t<double>& a) { t.mask = array_to_tensor(a); })
      .def_property("pattern",
                    [](const TriggerSpec& t) { return tensor_to_array(t.pattern); },
                    [](TriggerSpec& t, const py::array_t<double>& a) { t.pattern = array_to_tensor(a); })
      .def_readwrite("applies_to_last_frame_only", &TriggerSpec::applies_to_last_frame_only);

  m.def("apply_trigger", [](const py::array_t<double>& frames, const TriggerSpec& trigger) {
    Observation obs;
    obs.frames = array_to_tensor(frames);
    return tensor_to_array(apply_trigger(obs, trigger).frames);
  }, py::arg("frames"), py::arg("trigger"));

  py::class_<PoisonSchedule>(m, "PoisonSchedule")
      .def(py::init<>())
      .def_readwrite("budget", &PoisonSchedule::budget)
      .def_readwrite("total_steps", &PoisonSchedule::total_steps)
      .def_readwrite("window", &PoisonSchedule::window)
      .def_readwrite("seed", &PoisonSchedule::seed);

  py::class_<AttackConfig>(m, "AttackConfig")
      .def(py::init<>())
      .def_readwrite("mode", &AttackConfig::mode)
      .def_readwrite("strength", &AttackConfig::strength)
      .def_readwrite("target_action", &AttackConfig::target_action)
      .def_readwrite("trigger", &AttackConfig::trigger)
      .def_readwrite("schedule", &AttackConfig::schedule)
      .def_readwrite("reward_high", &AttackConfig::reward_high)
      .def_readwrite("reward_low", &AttackConfig::reward_low)
      .def_readwrite("untargeted_action_source", &AttackConfig::untargeted_action_source);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("num_workers", &TrainConfig::num_workers)
      .def_readwrite("rollout_len", &TrainConfig::rollout_len)
      .def_readwrite("total_steps", &TrainConfig::total_steps)
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("gamma", &TrainConfig::gamma)
      .def_readwrite("value_coef", &TrainConfig::value_coef)
      .def_readwrite("entropy_coef", &TrainConfig::entropy_coef)
      .def_readwrite("max_grad_norm", &TrainConfig::max_grad_norm)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("eval_every", &TrainConfig::eval_every)
      .def_readwrite("hidden", &TrainConfig::hidden)
      .def_readwrite("normalize_advantages", &TrainConfig::normalize_advantages);

  m.def("train", [](const EnvConfig& env_cfg, const TrainConfig& train_cfg,
                    const AttackConfig* attack) {
    const TrainResult r = train(env_cfg, train_cfg, attack);
    py::list rows;
    for (const auto& row : r.log.rows) {
      py::dict d;
      d["step"] = row.step;
      d["mean_return_clean"] = row.mean_return_clean;
      d["loss_policy"] = row.loss_policy;
      d["loss_value"] = row.loss_value;
      d["entropy"] = row.entropy;
      d["poisoned_so_far"] = row.poisoned_so_far;
      d["seconds_elapsed"] = row.seconds_elapsed;
      rows.append(d);
    }
    py::dict out;
    out["net"] = py::cast(r.net);
    out["log"] = rows;
    out["states_consumed"] = r.states_consumed;
    out["poisoned_total"] = r.poisoned_total;
    return out;
  }, py::arg("env_config"), py::arg("train_config"), py::arg("attack") = nullptr);

  m.def("grad_check", [](const PolicyValueNet& net, const py::array_t<double>& states,
                         const std::vector<int>& actions,
                         const std::vector<double>& advantages,
                         const std::vector<double>& value_targets, double value_coef,
                         double entropy_coef, double tolerance) {
    const GradCheckReport r = grad_check(net, array_to_tensor(states), actions, advantages,
                                         value_targets, value_coef, entropy_coef, tolerance);
    py::dict d;
    d["max_rel_err"] = r.max_rel_err;
    d["pass"] = r.pass;
    d["params_checked"] = r.params_checked;
    return d;
  }, py::arg("net"), py::arg("states"), py::arg("actions"), py::arg("advantages"),
     py::arg("value_targets"), py::arg("value_coef") = 0.5,
     py::arg("entropy_coef") = 0.01, py::arg("tolerance") = 1e-4);

  m.def("eval_performance", [](const PolicyValueNet& net, const EnvConfig& cfg, int episodes,
                               const TriggerSpec* trigger, PolicyMode mode, std::uint64_t seed) {
    const EvalReport r = eval_performance(net, cfg, episodes, trigger, mode, seed);
    py::dict d;
    d["mean_return_clean"] = r.mean_return_clean;
    d["std_return_clean"] = r.std_return_clean;
    d["episodes"] = r.episodes;
    if (r.has_triggered) {
      d["mean_return_triggered"] = r.mean_return_triggered;
      d["std_return_triggered"] = r.std_return_triggered;
    }
    return d;
  }, py::arg("net"), py::arg("env_config"), py::arg("episodes"),
     py::arg("trigger") = nullptr, py::arg("mode") = PolicyMode::sample, py::arg("seed") = 0);

  m.def("eval_target_action_rate", [](const PolicyValueNet& net, const EnvConfig& cfg,
                                      const AttackConfig& attack, int samples,
                                      PolicyMode mode, std::uint64_t seed) {
    const TargetActionReport r = eval_target_action_rate(net, cfg, attack, samples, mode, seed);
    py::dict d;
    d["rate"] = r.rate;
    d["target_action"] = r.target_action;
    d["samples"] = r.samples;
    d["clean_counts"] = r.histogram.clean_counts;
    d["triggered_counts"] = r.histogram.triggered_counts;
    return d;
  }, py::arg("net"), py::arg("env_config"), py::arg("attack"), py::arg("samples"),
     py::arg("mode") = PolicyMode::sample, py::arg("seed") = 0);

  m.def("eval_ttf", [](const PolicyValueNet& net, const EnvConfig& cfg,
                       const TriggerSpec* trigger, int trials, std::uint64_t seed) {
    const TTFReport r = eval_ttf(net, cfg, trigger, trials, seed);
    py::dict d;
    d["ttf_mean"] = r.ttf_mean;
    d["ttf_std"] = r.ttf_std;
    d["clean_ttf_mean"] = r.clean_ttf_mean;
    d["clean_ttf_std"] = r.clean_ttf_std;
    d["trials"] = r.trials;
    d["capped_triggered"] = r.capped_triggered;
    d["capped_clean"] = r.capped_clean;
    return d;
  }, py::arg("net"), py::arg("env_config"), py::arg("trigger") = nullptr,
     py::arg("trials") = 100, py::arg("seed") = 0);

  m.def("collect_activations", [](const PolicyValueNet& net, const EnvConfig& cfg, int samples,
                                  double poison_fraction, const TriggerSpec& trigger,
                                  std::uint64_t seed) {
    const ActivationSet s = collect_activations(net, cfg, samples, poison_fraction, trigger, seed);
    py::dict d;
    d["activations"] = tensor_to_array(s.activations);
    d["actions"] = s.actions;
    d["poisoned"] = std::vector<int>(s.poisoned.begin(), s.poisoned.end());
    return d;
  }, py::arg("net"), py::arg("env_config"), py::arg("samples"), py::arg("poison_fraction"),
     py::arg("trigger"), py::arg("seed") = 0);

  m.def("reduce_and_cluster", [](const py::array_t<double>& activations,
                                 const std::vector<int>& actions,
                                 const std::vector<int>& poisoned, int target_action, int k,
                                 Reducer reducer, std::size_t reduced_dim, std::uint64_t seed) {
    ActivationSet set;
    set.activations = array_to_tensor(activations);
    set.actions = actions;
    set.poisoned.assign(poisoned.begin(), poisoned.end());
    ClusterReport r = reduce_and_cluster(DetectionView(set), target_action, k, reducer,
                                         reduced_dim, seed);
    r.purity = cluster_purity(r, set);
    py::dict d;
    d["k"] = r.k;
    d["assignments"] = r.assignments;
    d["cluster_sizes"] = r.cluster_sizes;
    d["silhouette"] = r.silhouette_defined ? py::object(py::float_(r.silhouette))
                                           : py::object(py::none());
    d["purity"] = r.purity;
    d["degenerate"] = r.degenerate;
    return d;
  }, py::arg("activations"), py::arg("actions"), py::arg("poisoned"),
     py::arg("target_action"), py::arg("k") = 2, py::arg("reducer") = Reducer::pca,
     py::arg("reduced_dim") = 10, py::arg("seed") = 0);

  m.def("synthesize_trigger", [](const PolicyValueNet& net, const py::array_t<double>& states,
                                 std::size_t stack_k, std::size_t height, std::size_t width,
                                 int action, double beta, int iters, double step_size,
                                 std::uint64_t seed) {
    SynthesisParams params;
    params.beta = beta;
    params.iters = iters;
    params.step_size = step_size;
    params.seed = seed;
    const FrameGeometry geom{stack_k, height, width};
    const SynthesizedTrigger r =
        synthesize_trigger(net, array_to_tensor(states), geom, action, params);
    py::dict d;
    d["action"] = r.action;
    d["mask"] = tensor_to_array(r.mask);
    d["pattern"] = tensor_to_array(r.pattern);
    d["mask_l1"] = r.mask_l1;
    d["attack_success_rate"] = r.attack_success_rate;
    d["final_loss"] = r.final_loss;
    return d;
  }, py::arg("net"), py::arg("states"), py::arg("stack_k"), py::arg("height"),
     py::arg("width"), py::arg("action"), py::arg("beta") = 0.01, py::arg("iters") = 300,
     py::arg("step_size") = 1.0, py::arg("seed") = 0);

  m.def("collect_on_policy_states", [](const PolicyValueNet& net, const EnvConfig& cfg,
                                       int samples, PolicyMode mode, std::uint64_t seed) {
    return tensor_to_array(collect_on_policy_states(net, cfg, samples, mode, seed));
  }, py::arg("net"), py::arg("env_config"), py::arg("samples"),
     py::arg("mode") = PolicyMode::sample, py::arg("seed") = 0);

  m.def("anomaly_scores", [](const std::vector<double>& mask_l1) {
    const AnomalyReport r = anomaly_scores(mask_l1);
    py::dict d;
    d["index"] = r.index;
    d["flagged"] = std::vector<bool>(r.flagged.begin(), r.flagged.end());
    d["median_l1"] = r.median_l1;
    d["mad"] = r.mad;
    return d;
  }, py::arg("mask_l1"));

  m.def("run_cli", [](const std::vector<std::string>& args) {
    return run_cli(args, std::cout, std::cerr);
  }, py::arg("args"), "Invoke the command-line interface in-process");

#ifdef TDRL_VERSION_INFO
  m.attr("__version__") = TDRL_VERSION_INFO;
#else
  m.attr("__version__") = kVersion;
#endif
}
