#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "physctl/models.hpp"
#include "physctl/systems.hpp"

namespace physctl {

// Two-phase beta: `first` for outer iteration 1, `rest` afterwards.
struct BetaSchedule {
  double first = 500.0;
  double rest = 450.0;
  double at(std::size_t outer_iter) const { return outer_iter <= 1 ? first : rest; }
};

enum class InitialData { Uniform, Natural };

struct LoopConfig {
  std::size_t K1 = 200;
  std::size_t K2 = 200;
  double alpha = 1e-4;
  double actor_alpha = 0.0;  // 0 means alpha
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 20;
  std::size_t actor_batch_size = 0;  // 0 means all targets
  std::size_t max_outer_iters = 10;
  double target_metric = 0.9;
  // New tuples per resampling step, cycling over the targets.
  std::size_t resample_count = 10;
  double replay_ratio = 0.5;
  // Jitter added to actor outputs after the first pass over the targets.
  double explore_sigma = 0.0;
  std::size_t initial_samples = 1000;
  InitialData initial_data = InitialData::Uniform;
  BetaSchedule beta;
  // Optical outputs are divided by 1.1 * max(|initial outputs|, |targets|).
  bool normalize_outputs = true;

  void validate() const;
  AdamConfig model_adam() const { return {alpha, adam_beta1, adam_beta2, adam_epsilon}; }
  AdamConfig actor_adam() const {
    return {actor_alpha > 0.0 ? actor_alpha : alpha, adam_beta1, adam_beta2, adam_epsilon};
  }
};

// What the loop is asked to achieve. `targets` feed the actor (desired
// outputs for the optical task, original stimuli for the retina task);
// `target_outputs` are the desired system outputs, in system units.
struct ControlProblem {
  Tensor targets;         // [N x actor target shape]
  Tensor target_outputs;  // [N x system output shape]
  std::size_t count() const { return targets.extent(0); }
};

struct MetricsRecord {
  std::size_t iter = 0;
  double model_loss = 0.0;
  double actor_loss = 0.0;
  double sigma_metric = 0.0;
  double pearson = 0.0;  // NaN when every image was degenerate
  std::size_t pearson_valid = 0;
  std::int64_t wall_ms = 0;
};

enum class LoopStatus { Running, Reached, BudgetExhausted };

struct ControlLoopState {
  TaskKind task = TaskKind::Optical;
  VaeModel model;
  ActorModel actor;
  std::vector<SampleTuple> buffer;  // model units
  std::vector<SampleTuple> last_actor_tuples;
  std::vector<MetricsRecord> history;
  std::size_t outer_iter = 0;
  std::size_t model_steps = 0;
  std::size_t actor_steps = 0;
  double y_scale = 1.0;
  double last_model_loss = 0.0;
  double last_actor_loss = 0.0;

  ParameterSet best_actor;
  double best_sigma = 0.0;
  std::size_t best_iter = 0;
  LoopStatus status = LoopStatus::Running;

  RandomStream model_rng;
  RandomStream actor_rng;
  RandomStream resample_rng;
  RandomStream latent_rng;
};

ControlLoopState init_control_loop(TrueSystem& system, const ControlProblem& problem, const ModelSpec& model_spec,
                                   const ActorSpec& actor_spec, const LoopConfig& config, std::uint64_t seed);

void train_model_phase(ControlLoopState& state, const LoopConfig& config);
void train_actor_phase(ControlLoopState& state, const ControlProblem& problem, const LoopConfig& config);
void resample_through_system(ControlLoopState& state, TrueSystem& system, const ControlProblem& problem,
                             const LoopConfig& config);
MetricsRecord evaluate_performance(ControlLoopState& state, TrueSystem& system, const ControlProblem& problem);

// Actor outputs for every target, [N x system input shape].
Tensor control_inputs(const ActorModel& actor, const ControlProblem& problem, double y_scale);
Tensor control_inputs(const ControlLoopState& state, const ControlProblem& problem);

// Per-element task distance: MSE (optical) or Poisson NLL of `out` as rates
// for the target rates, without the constant term (retina).
double task_distance(TaskKind task, const Tensor& out, const Tensor& target);

// Expected Poisson log-likelihood sum(t ln r - r), constant term dropped.
double poisson_ll(const Tensor& target_rates, const Tensor& rates);
// (LL(achieved) - LL(null)) / (LL(targets) - LL(null)) for [N x T x cells]
// rates; the null model predicts each cell's mean target rate.
double ll_fraction(const Tensor& target_rates, const Tensor& achieved_rates);

// Correlation of two equally sized images over flattened pixels. Throws
// DomainError if either is constant.
double pearson2d(const Tensor& a, const Tensor& b);

struct LoopResult {
  LoopStatus status = LoopStatus::BudgetExhausted;
  std::vector<MetricsRecord> history;
  Tensor final_inputs;   // best actor's controls
  Tensor final_outputs;  // scoring responses of the true system to them
  std::size_t best_iter = 0;
};

using IterationHook = std::function<void(const ControlLoopState&, const MetricsRecord&)>;

LoopResult run_control_loop(TrueSystem& system, const ControlProblem& problem, const ModelSpec& model_spec,
                            const ActorSpec& actor_spec, const LoopConfig& config, std::uint64_t seed,
                            const IterationHook& hook = {}, ControlLoopState* state_out = nullptr);

// Posterior samples [count x l] for observed tuples, cycling over them.
Tensor export_latent_samples(const VaeModel& model, std::span<const SampleTuple> observed, std::size_t count,
                             RandomStream& rng);
Tensor export_latent_samples(ControlLoopState& state, std::size_t count);

}  // namespace physctl
