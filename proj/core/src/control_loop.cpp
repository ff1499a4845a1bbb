#include "physctl/control_loop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "physctl/error.hpp"
#include "physctl/log.hpp"

namespace physctl {

namespace {

Shape batched(std::size_t b, const Shape& s) {
  Shape out{b};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

Tensor scaled(Tensor t, double s) {
  t *= s;
  return t;
}

// Mean of the last quarter of a phase's losses (at least one value).
double tail_mean(const std::vector<double>& losses) {
  const std::size_t k = std::max<std::size_t>(1, losses.size() / 4);
  return std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(k), losses.end(), 0.0) / static_cast<double>(k);
}

void shuffle(std::vector<std::size_t>& v, RandomStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

// Batches drawn without replacement within an epoch, reshuffled per epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, RandomStream& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
    shuffle(order_, rng_);
  }
  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        shuffle(order_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  RandomStream& rng_;
};

Tensor actor_targets(const ControlProblem& problem, TaskKind task, double y_scale) {
  return task == TaskKind::Optical ? scaled(problem.targets, 1.0 / y_scale) : problem.targets;
}

}  // namespace

double task_distance(TaskKind task, const Tensor& out, const Tensor& target) {
  require_same_shape(out, target, "task distance");
  double acc = 0.0;
  if (task == TaskKind::Optical) {
    for (std::size_t i = 0; i < out.size(); ++i) acc += (out[i] - target[i]) * (out[i] - target[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] - target[i] * std::log(std::max(out[i], 1e-8));
  }
  return acc / static_cast<double>(out.size());
}

double poisson_ll(const Tensor& target_rates, const Tensor& rates) {
  require_same_shape(target_rates, rates, "poisson_ll");
  double acc = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i)
    acc += target_rates[i] * std::log(std::max(rates[i], 1e-8)) - rates[i];
  return acc;
}

double ll_fraction(const Tensor& target_rates, const Tensor& achieved_rates) {
  require_same_shape(target_rates, achieved_rates, "ll_fraction");
  if (target_rates.rank() != 3) throw DimensionError("ll_fraction expects [N x T x cells] rates");
  const std::size_t cells = target_rates.extent(2), rows = target_rates.size() / cells;
  Tensor null_rates = target_rates;
  for (std::size_t c = 0; c < cells; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += target_rates[r * cells + c] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) null_rates[r * cells + c] = mean;
  }
  const double ll_null = poisson_ll(target_rates, null_rates);
  const double ll_orig = poisson_ll(target_rates, target_rates);
  if (!(ll_orig > ll_null)) throw DomainError("ll_fraction: target rates carry no information beyond per-cell means");
  return (poisson_ll(target_rates, achieved_rates) - ll_null) / (ll_orig - ll_null);
}

void LoopConfig::validate() const {
  if (K1 < 1) throw ConfigError("K1", "must be >= 1");
  if (K2 < 1) throw ConfigError("K2", "must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("alpha", "must be positive");
  if (actor_alpha < 0.0) throw ConfigError("actor_alpha", "must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1", "must be in [0,1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2", "must be in [0,1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon", "must be positive");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (max_outer_iters < 1) throw ConfigError("max_outer_iters", "must be >= 1");
  if (resample_count < 1) throw ConfigError("resample_count", "must be >= 1");
  if (!(replay_ratio >= 0.0 && replay_ratio <= 1.0)) throw ConfigError("replay_ratio", "must be in [0,1]");
  if (!(explore_sigma >= 0.0)) throw ConfigError("explore_sigma", "must be non-negative");
  if (initial_samples < 1) throw ConfigError("initial_samples", "must be >= 1");
  if (!(beta.first >= 0.0 && beta.rest >= 0.0)) throw ConfigError("beta", "must be non-negative");
}

ControlLoopState init_control_loop(TrueSystem& system, const ControlProblem& problem, const ModelSpec& model_spec,
                                   const ActorSpec& actor_spec, const LoopConfig& config, std::uint64_t seed) {
  config.validate();
  if (model_spec.input_shape() != system.input_shape() || model_spec.output_shape() != system.output_shape())
    throw DimensionError("model shapes " + shape_str(model_spec.input_shape()) + " -> " +
                         shape_str(model_spec.output_shape()) + " do not match the system " +
                         shape_str(system.input_shape()) + " -> " + shape_str(system.output_shape()));
  if (actor_spec.output_shape() != system.input_shape())
    throw DimensionError("actor output " + shape_str(actor_spec.output_shape()) + " does not match system input");
  if (problem.targets.shape() != batched(problem.targets.extent(0), actor_spec.target_shape()))
    throw DimensionError("targets " + shape_str(problem.targets.shape()) + " do not match actor input " +
                         shape_str(actor_spec.target_shape()));
  if (problem.target_outputs.shape() != batched(problem.count(), system.output_shape()))
    throw DimensionError("target outputs " + shape_str(problem.target_outputs.shape()) +
                         " do not match system output " + shape_str(system.output_shape()));

  RandomStream root(seed);
  ControlLoopState st{model_spec.task,
                      init_vae(model_spec, root.next_u64()),
                      init_actor(actor_spec, root.next_u64()),
                      {},
                      {},
                      {},
                      0,
                      0,
                      0,
                      1.0,
                      0.0,
                      0.0,
                      {},
                      std::numeric_limits<double>::infinity(),
                      0,
                      LoopStatus::Running,
                      root.fork(),
                      root.fork(),
                      root.fork(),
                      root.fork()};
  RandomStream data_rng = root.fork();

  if (config.initial_data == InitialData::Natural) {
    const Shape in = system.input_shape();
    if (in.size() != 3) throw ConfigError("initial_data", "natural movies need [T x H x W] system inputs");
    Tensor movies = natural_movies(config.initial_samples, in[0], in[1], in[2], data_rng);
    for (std::size_t i = 0; i < config.initial_samples; ++i) {
      Tensor x = row(movies, i);
      Tensor y = system.query(x);
      st.buffer.push_back({std::move(x), std::move(y)});
    }
  } else {
    st.buffer = sample_random_dataset(system, config.initial_samples, data_rng);
  }

  if (model_spec.task == TaskKind::Optical && config.normalize_outputs) {
    double peak = problem.target_outputs.max_abs();
    for (const auto& t : st.buffer) peak = std::max(peak, t.y.max_abs());
    st.y_scale = peak > 0.0 ? 1.1 * peak : 1.0;
    for (auto& t : st.buffer) t.y *= 1.0 / st.y_scale;
  }
  st.best_actor = st.actor.params;
  return st;
}

void train_model_phase(ControlLoopState& st, const LoopConfig& config) {
  if (st.buffer.empty()) throw ContractError("train_model_phase: empty buffer");
  const double beta = config.beta.at(st.outer_iter + 1);
  const AdamConfig adam = config.model_adam();
  const std::size_t bs = std::min(config.batch_size, st.buffer.size());
  EpochSampler sampler(st.buffer.size(), st.model_rng);
  std::vector<double> losses;
  losses.reserve(config.K1);
  std::vector<Tensor> xs(bs), ys(bs);
  for (std::size_t step = 0; step < config.K1; ++step) {
    auto idx = sampler.next(bs);
    for (std::size_t k = 0; k < bs; ++k) {
      xs[k] = st.buffer[idx[k]].x;
      ys[k] = st.buffer[idx[k]].y;
    }
    Graph g;
    ParamScope scope(g, st.model.params);
    LossParts loss = vae_loss(scope, st.model.spec, g.constant(stack(xs)), g.constant(stack(ys)), beta, st.model_rng);
    g.backward(loss.total);
    st.model.params.adam_step(adam);
    losses.push_back(loss.total.value().item());
    ++st.model_steps;
  }
  st.last_model_loss = tail_mean(losses);
}

void train_actor_phase(ControlLoopState& st, const ControlProblem& problem, const LoopConfig& config) {
  const AdamConfig adam = config.actor_adam();
  const std::size_t n = problem.count();
  const std::size_t bs = config.actor_batch_size ? std::min(config.actor_batch_size, n) : n;
  const Tensor targets = actor_targets(problem, st.task, st.y_scale);
  const Tensor outputs =
      st.task == TaskKind::Optical ? scaled(problem.target_outputs, 1.0 / st.y_scale) : problem.target_outputs;
  EpochSampler sampler(n, st.actor_rng);
  std::vector<double> losses;
  losses.reserve(config.K2);
  for (std::size_t step = 0; step < config.K2; ++step) {
    Tensor bt = targets, bo = outputs;
    if (bs < n) {
      auto idx = sampler.next(bs);
      std::vector<Tensor> ts, os;
      for (auto i : idx) {
        ts.push_back(row(targets, i));
        os.push_back(row(outputs, i));
      }
      bt = stack(ts);
      bo = stack(os);
    }
    Graph g;
    ParamScope actor(g, st.actor.params);
    ParamScope model(g, std::as_const(st.model.params));
    Var loss = actor_loss(actor, st.actor.spec, model, st.model.spec, g.constant(bt), g.constant(bo), st.actor_rng);
    g.backward(loss);
    st.actor.params.adam_step(adam);
    losses.push_back(loss.value().item());
    ++st.actor_steps;
  }
  st.last_actor_loss = tail_mean(losses);
}

Tensor control_inputs(const ActorModel& actor, const ControlProblem& problem, double y_scale) {
  Graph g;
  ParamScope scope(g, actor.params);
  const Tensor t = actor_targets(problem, actor.spec.task, y_scale);
  return actor_forward(scope, actor.spec, g.constant(t)).value();
}

Tensor control_inputs(const ControlLoopState& st, const ControlProblem& problem) {
  return control_inputs(st.actor, problem, st.y_scale);
}

void resample_through_system(ControlLoopState& st, TrueSystem& system, const ControlProblem& problem,
                             const LoopConfig& config) {
  const Tensor inputs = control_inputs(st, problem);
  const std::size_t n = problem.count();
  std::vector<SampleTuple> fresh;
  fresh.reserve(config.resample_count);
  st.last_actor_tuples.clear();
  for (std::size_t k = 0; k < config.resample_count; ++k) {
    Tensor x = row(inputs, k % n);
    if (k >= n && config.explore_sigma > 0.0)
      for (auto& v : x.data()) v = std::clamp(v + st.resample_rng.normal(0.0, config.explore_sigma), 0.0, 1.0);
    Tensor y;
    try {
      y = system.query(x);
    } catch (const Error& e) {
      throw Error(std::string("system query during resampling failed: ") + e.what());
    }
    if (st.y_scale != 1.0) y *= 1.0 / st.y_scale;
    fresh.push_back({std::move(x), std::move(y)});
    if (k < n) st.last_actor_tuples.push_back(fresh.back());
  }
  const auto keep = static_cast<std::size_t>(std::floor(config.replay_ratio * st.buffer.size() + 1e-9));
  std::vector<std::size_t> order(st.buffer.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, st.resample_rng);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<SampleTuple> merged;
  merged.reserve(keep + fresh.size());
  for (auto i : order) merged.push_back(std::move(st.buffer[i]));
  for (auto& t : fresh) merged.push_back(std::move(t));
  st.buffer = std::move(merged);
}

double pearson2d(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("pearson2d: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const double ma = a.mean(), mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw DomainError("pearson2d: correlation undefined for a constant image");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

MetricsRecord evaluate_performance(ControlLoopState& st, TrueSystem& system, const ControlProblem& problem) {
  const Tensor inputs = control_inputs(st, problem);
  MetricsRecord rec;
  rec.iter = st.history.empty() ? 1 : st.history.back().iter + 1;
  rec.model_loss = st.last_model_loss;
  rec.actor_loss = st.last_actor_loss;
  double sigma = 0.0, pearson = 0.0;
  for (std::size_t i = 0; i < problem.count(); ++i) {
    const Tensor out = system.scoring_response(row(inputs, i));
    const Tensor target = row(problem.target_outputs, i);
    sigma += task_distance(st.task, out, target);
    try {
      pearson += pearson2d(out, target);
      ++rec.pearson_valid;
    } catch (const DomainError&) {
      warn("target " + std::to_string(i) + ": degenerate image, correlation excluded from the mean");
    }
  }
  rec.sigma_metric = sigma / static_cast<double>(problem.count());
  rec.pearson = rec.pearson_valid ? pearson / static_cast<double>(rec.pearson_valid)
                                  : std::numeric_limits<double>::quiet_NaN();
  st.history.push_back(rec);
  if (rec.sigma_metric < st.best_sigma) {
    st.best_sigma = rec.sigma_metric;
    st.best_actor = st.actor.params;
    st.best_iter = rec.iter;
  }
  return rec;
}

LoopResult run_control_loop(TrueSystem& system, const ControlProblem& problem, const ModelSpec& model_spec,
                            const ActorSpec& actor_spec, const LoopConfig& config, std::uint64_t seed,
                            const IterationHook& hook, ControlLoopState* state_out) {
  ControlLoopState st = init_control_loop(system, problem, model_spec, actor_spec, config, seed);
  while (st.status == LoopStatus::Running) {
    const auto t0 = std::chrono::steady_clock::now();
    train_model_phase(st, config);
    train_actor_phase(st, problem, config);
    resample_through_system(st, system, problem, config);
    ++st.outer_iter;
    MetricsRecord rec = evaluate_performance(st, system, problem);
    rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    st.history.back().wall_ms = rec.wall_ms;
    if (rec.pearson_valid && rec.pearson >= config.target_metric)
      st.status = LoopStatus::Reached;
    else if (st.outer_iter >= config.max_outer_iters)
      st.status = LoopStatus::BudgetExhausted;
    if (hook) hook(st, rec);
  }

  LoopResult res;
  res.status = st.status;
  res.history = st.history;
  // Reached: the actor that met the threshold. Exhausted: the best one seen.
  const ParameterSet& chosen = st.status == LoopStatus::Reached ? st.actor.params : st.best_actor;
  res.best_iter = st.status == LoopStatus::Reached ? st.history.back().iter : st.best_iter;
  ActorModel a{st.actor.spec, chosen};
  res.final_inputs = control_inputs(a, problem, st.y_scale);
  std::vector<Tensor> outs;
  for (std::size_t i = 0; i < problem.count(); ++i) outs.push_back(system.scoring_response(row(res.final_inputs, i)));
  res.final_outputs = stack(outs);
  if (state_out) *state_out = std::move(st);
  return res;
}

Tensor export_latent_samples(const VaeModel& model, std::span<const SampleTuple> observed, std::size_t count,
                             RandomStream& rng) {
  if (observed.empty()) throw ContractError("export_latent_samples: no observed tuples");
  std::vector<Tensor> xs, ys;
  for (const auto& t : observed) {
    xs.push_back(t.x);
    ys.push_back(t.y);
  }
  Graph g;
  ParamScope scope(g, model.params);
  Posterior q = encode(scope, model.spec, g.constant(stack(ys)), g.constant(stack(xs)));
  const Tensor& mu = q.mu.value();
  const Tensor& lv = q.log_var.value();
  const std::size_t l = model.spec.latent_dim, n = observed.size();
  Tensor out({count, l});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t src = i % n;
    for (std::size_t j = 0; j < l; ++j)
      out[i * l + j] = mu[src * l + j] + std::exp(0.5 * lv[src * l + j]) * rng.normal();
  }
  return out;
}

Tensor export_latent_samples(ControlLoopState& st, std::size_t count) {
  if (st.model_steps == 0) throw ContractError("export_latent_samples: model has not been trained");
  return export_latent_samples(st.model, st.last_actor_tuples, count, st.latent_rng);
}

}  // namespace physctl
