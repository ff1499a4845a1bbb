#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <regex>
#include <sstream>

#include "physctl/autodiff.hpp"
#include "physctl/config.hpp"
#include "physctl/container.hpp"
#include "physctl/control_loop.hpp"
#include "physctl/error.hpp"
#include "physctl/gradcheck_suite.hpp"
#include "physctl/metrics_io.hpp"
#include "physctl/pca.hpp"
#include "physctl/targets.hpp"

namespace physctl::cli {

namespace fs = std::filesystem;

namespace {

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw Error("refusing to overwrite existing run directory " + dir.string() + " (use --force)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

std::string manifest_text(const std::string& command, const RunConfig& config, const ModelSpec& ms,
                          const ActorSpec& as) {
  std::ostringstream m;
  const VaeModel model = init_vae(ms, config.seed);
  const ActorModel actor = init_actor(as, config.seed);
  m << "# physctl run manifest\n[manifest]\ncommand = " << command << "\nseed = " << config.seed
    << "\nmodel_architecture = " << std::hex << std::setw(16) << std::setfill('0')
    << architecture_hash(model.params) << "\nactor_architecture = " << std::setw(16)
    << architecture_hash(actor.params) << std::dec << "\n\n"
    << write_config(config);
  return m.str();
}

ContainerEntry text_entry(const std::string& name, const std::string& text) {
  Tensor t({std::max<std::size_t>(text.size(), 1)});
  for (std::size_t i = 0; i < text.size(); ++i) t[i] = static_cast<unsigned char>(text[i]);
  return {name, t, ElementType::F32};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

void append_params(std::vector<ContainerEntry>& entries, const std::string& prefix, const ParameterSet& ps) {
  for (const auto& p : ps) {
    entries.push_back({prefix + "/" + p.name, p.value});
    entries.push_back({prefix + "/" + p.name + ".adam_m", p.adam.first_moment});
    entries.push_back({prefix + "/" + p.name + ".adam_v", p.adam.second_moment});
    entries.push_back({prefix + "/" + p.name + ".adam_t", Tensor::scalar(static_cast<double>(p.adam.step_count))});
  }
}

std::string iter_tag(std::size_t k) { return "iter" + std::to_string(k); }

struct Built {
  std::unique_ptr<TrueSystem> system;
  ControlProblem problem;
};

Built build(const RunConfig& c) {
  if (c.task == TaskKind::Optical) {
    auto sys = std::make_unique<OpticalSystem>(c.optical);
    ControlProblem p = build_optical_problem(*sys, c.targets);
    return {std::move(sys), std::move(p)};
  }
  auto sys = std::make_unique<RetinaSystem>(c.retina);
  ControlProblem p = build_retina_problem(*sys, c.targets);
  return {std::move(sys), std::move(p)};
}

}  // namespace

int cmd_run(const RunOptions& o, std::ostream& out, std::ostream& err) {
  try {
    RunConfig c = load_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.max_outer_iters) c.loop.max_outer_iters = *o.max_outer_iters;
    c.validate();
    prepare_out_dir(o.out, o.force);
    fs::create_directories(o.out / "checkpoints");

    const ModelSpec ms = c.model_spec();
    const ActorSpec as = c.actor_spec();
    const std::string manifest = manifest_text("run", c, ms, as);
    write_text(o.out / "run_manifest.ini", manifest);
    Built b = build(c);
    write_text(o.out / "architecture.txt", architecture_manifest(init_vae(ms, 0).params) + "\n" +
                                               architecture_manifest(init_actor(as, 0).params));

    const ContainerEntry manifest_entry = text_entry("run_manifest", manifest);
    auto hook = [&](const ControlLoopState& st, const MetricsRecord& rec) {
      std::vector<ContainerEntry> ck{manifest_entry, {"y_scale", Tensor::scalar(st.y_scale)}};
      append_params(ck, "model", st.model.params);
      append_params(ck, "actor", st.actor.params);
      write_container(o.out / "checkpoints" / (iter_tag(rec.iter) + ".pct"), ck);
      if (c.latent_samples > 0) {
        RandomStream rng(c.seed * 1000003ULL + rec.iter);
        Tensor z = export_latent_samples(st.model, st.last_actor_tuples, c.latent_samples, rng);
        std::vector<ContainerEntry> lat{manifest_entry, {"latents", z}};
        write_container(o.out / ("latents_" + iter_tag(rec.iter) + ".pct"), lat);
      }
      write_metrics_csv(o.out / "metrics.csv", st.history);
      if (o.verbosity > 0)
        err << "iter " << rec.iter << "  model_loss " << rec.model_loss << "  actor_loss " << rec.actor_loss
            << "  sigma " << rec.sigma_metric << "  pearson " << rec.pearson << "  (" << rec.wall_ms << " ms)\n";
    };
    LoopResult res = run_control_loop(*b.system, b.problem, ms, as, c.loop, c.seed, hook);
    write_metrics_csv(o.out / "metrics.csv", res.history);
    std::vector<ContainerEntry> fin{manifest_entry,
                                    {"x_star", res.final_inputs},
                                    {"outputs", res.final_outputs},
                                    {"targets", b.problem.targets},
                                    {"target_outputs", b.problem.target_outputs},
                                    {"best_iter", Tensor::scalar(static_cast<double>(res.best_iter))}};
    write_container(o.out / "result.pct", fin);
    const auto& last = res.history.back();
    const bool reached = res.status == LoopStatus::Reached;
    out << (reached ? "reached" : "budget_exhausted") << " after " << res.history.size()
        << " iterations: pearson " << last.pearson << ", sigma " << last.sigma_metric << "\n";
    return reached ? kSuccess : kBudgetExhausted;
  } catch (const std::exception& e) {
    err << "physctl run: " << e.what() << "\n";
    return kError;
  }
}

int cmd_gradcheck(std::uint64_t seed, const std::optional<std::string>& break_rule, std::ostream& out,
                  std::ostream& err) {
  if (break_rule) {
    std::optional<OpKind> kind;
    for (int k = 0; k <= static_cast<int>(OpKind::Mean); ++k)
      if (op_name(static_cast<OpKind>(k)) == *break_rule) kind = static_cast<OpKind>(k);
    if (!kind) {
      err << "physctl gradcheck: unknown rule '" << *break_rule << "'\n";
      return kError;
    }
    inject_backward_fault(kind);
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<GradcheckRow> rows;
  try {
    rows = run_gradcheck_suite(seed);
  } catch (const std::exception& e) {
    inject_backward_fault(std::nullopt);
    err << "physctl gradcheck: " << e.what() << "\n";
    return kError;
  }
  inject_backward_fault(std::nullopt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool all = true;
  out << std::left << std::setw(34) << "check" << std::right << std::setw(7) << "seeds" << std::setw(8) << "coords"
      << std::setw(14) << "max_rel_err" << std::setw(9) << "tol" << "  status\n";
  for (const auto& r : rows) {
    all = all && r.pass;
    out << std::left << std::setw(34) << r.name << std::right << std::setw(7) << r.seeds << std::setw(8)
        << r.coordinates << std::setw(14) << std::scientific << std::setprecision(3) << r.max_rel_error
        << std::setw(9) << std::setprecision(0) << r.tolerance << std::defaultfloat << std::setprecision(6) << "  "
        << (r.pass ? "pass" : "FAIL") << "\n";
  }
  out << rows.size() << " checks, " << (all ? "all pass" : "FAILURES") << " (" << std::fixed << std::setprecision(1)
      << secs << " s)\n"
      << std::defaultfloat;
  return all ? kSuccess : kError;
}

int cmd_baseline(const fs::path& config, const fs::path& out_dir, bool force, std::ostream& out, std::ostream& err) {
  try {
    RunConfig c = load_config(config);
    if (c.task != TaskKind::Optical) throw Error("baseline defined for optical task only");
    prepare_out_dir(out_dir, force);
    const auto t0 = std::chrono::steady_clock::now();
    OpticalSystem sys(c.optical);
    ControlProblem p = build_optical_problem(sys, c.targets);
    const Tensor fields = optical_target_fields(sys, c.targets);
    const bool intensity = c.optical.mode == MeasurementMode::Intensity;
    std::vector<Tensor> xs, outs, phases, phase_outs;
    double pearson = 0.0, sigma = 0.0, phase_pearson = 0.0;
    std::size_t warnings = 0;
    for (std::size_t i = 0; i < p.count(); ++i) {
      auto pinv = pseudo_inverse_control(sys.f_real(), sys.f_imag(), row(fields, i));
      if (pinv.regularized) ++warnings;
      Tensor u = complex_matvec(sys.f_real(), sys.f_imag(), pinv.x);
      Tensor y = u;
      if (intensity) {
        y = Tensor({c.optical.m});
        for (std::size_t k = 0; k < c.optical.m; ++k) y[k] = u[2 * k] * u[2 * k] + u[2 * k + 1] * u[2 * k + 1];
      }
      // The phase-only projection is what a phase modulator could display.
      Tensor phase({c.optical.n});
      for (std::size_t k = 0; k < c.optical.n; ++k) {
        double a = std::atan2(pinv.x[2 * k + 1], pinv.x[2 * k]) / (2.0 * std::numbers::pi);
        phase[k] = a < 0.0 ? a + 1.0 : a;
      }
      const Tensor target = row(p.target_outputs, i);
      const Tensor yp = sys.measure(phase);
      pearson += pearson2d(y, target) / static_cast<double>(p.count());
      sigma += task_distance(TaskKind::Optical, y, target) / static_cast<double>(p.count());
      phase_pearson += pearson2d(yp, target) / static_cast<double>(p.count());
      xs.push_back(pinv.x);
      outs.push_back(y);
      phases.push_back(phase);
      phase_outs.push_back(yp);
    }
    MetricsRecord rec;
    rec.iter = 1;
    rec.sigma_metric = sigma;
    rec.pearson = pearson;
    rec.pearson_valid = p.count();
    rec.wall_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    write_metrics_csv(out_dir / "baseline_metrics.csv", std::span<const MetricsRecord>(&rec, 1));
    const std::string manifest = manifest_text("baseline", c, c.model_spec(), c.actor_spec());
    write_text(out_dir / "run_manifest.ini", manifest);
    std::vector<ContainerEntry> res{text_entry("run_manifest", manifest),
                                    {"x_complex", stack(xs)},
                                    {"outputs", stack(outs)},
                                    {"phase_only_x", stack(phases)},
                                    {"phase_only_outputs", stack(phase_outs)},
                                    {"target_outputs", p.target_outputs}};
    write_container(out_dir / "baseline.pct", res);
    out << "baseline pearson " << pearson << ", sigma " << sigma << "; phase-only projection pearson "
        << phase_pearson << "\n";
    if (warnings) err << "physctl baseline: " << warnings << " targets used a regularised pseudo-inverse\n";
    return kSuccess;
  } catch (const std::exception& e) {
    err << "physctl baseline: " << e.what() << "\n";
    return kError;
  }
}

int cmd_embed_latents(const fs::path& run_dir, std::ostream& out, std::ostream& err) {
  try {
    if (!fs::is_directory(run_dir)) throw Error(run_dir.string() + " is not a directory");
    const std::regex pattern(R"(latents_iter(\d+)\.pct)");
    std::map<std::size_t, fs::path> dumps;
    for (const auto& e : fs::directory_iterator(run_dir)) {
      std::smatch m;
      const std::string name = e.path().filename().string();
      if (std::regex_match(name, m, pattern)) dumps[std::stoul(m[1])] = e.path();
    }
    if (dumps.empty()) throw Error("no latent dumps (latents_iter<k>.pct) in " + run_dir.string());
    for (const auto& [k, path] : dumps) {
      auto entries = read_container(path);
      Tensor emb = pca2d_embed(find_entry(entries, "latents").value);
      write_matrix_csv(run_dir / ("latents_2d_iter" + std::to_string(k) + ".csv"), emb, "pc1,pc2");
    }
    out << "embedded " << dumps.size() << " latent dumps\n";
    return kSuccess;
  } catch (const std::exception& e) {
    err << "physctl embed-latents: " << e.what() << "\n";
    return kError;
  }
}

}  // namespace physctl::cli
