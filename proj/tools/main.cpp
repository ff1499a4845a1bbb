#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"physctl: model-based control of simulated physical systems"};
  app.require_subcommand(1);
  int verbosity = 1;
  app.add_flag("-q,--quiet", [&](std::int64_t) { verbosity = 0; }, "suppress progress output");

  physctl::cli::RunOptions run;
  std::uint64_t seed = 0;
  std::size_t max_iters = 0;
  auto* cmd_run = app.add_subcommand("run", "run the control loop and write a run directory");
  cmd_run->add_option("--config", run.config, "run configuration (INI)")->required();
  cmd_run->add_option("--out", run.out, "output run directory")->required();
  auto* seed_opt = cmd_run->add_option("--seed", seed, "override [run] seed");
  auto* iters_opt = cmd_run->add_option("--max-outer-iters", max_iters, "override [loop] max_outer_iters");
  cmd_run->add_flag("--force", run.force, "replace an existing run directory");

  std::uint64_t gc_seed = 1;
  std::string break_rule;
  auto* cmd_gc = app.add_subcommand("gradcheck", "check every backward rule against central differences");
  cmd_gc->add_option("--seed", gc_seed, "base seed");
  auto* break_opt = cmd_gc->add_option("--break-rule", break_rule, "corrupt one backward rule (testing)");
  break_opt->group("");

  std::filesystem::path bl_config, bl_out;
  bool bl_force = false;
  auto* cmd_bl = app.add_subcommand("baseline", "pseudo-inverse control of the fully measured linear system");
  cmd_bl->add_option("--config", bl_config, "optical run configuration (INI)")->required();
  cmd_bl->add_option("--out", bl_out, "output directory")->required();
  cmd_bl->add_flag("--force", bl_force, "replace an existing output directory");

  std::filesystem::path emb_dir;
  auto* cmd_emb = app.add_subcommand("embed-latents", "2D PCA embedding of every latent dump in a run");
  cmd_emb->add_option("--run", emb_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : physctl::cli::kError;
  }

  if (cmd_run->parsed()) {
    if (*seed_opt) run.seed = seed;
    if (*iters_opt) run.max_outer_iters = max_iters;
    run.verbosity = verbosity;
    return physctl::cli::cmd_run(run, std::cout, std::cerr);
  }
  if (cmd_gc->parsed())
    return physctl::cli::cmd_gradcheck(gc_seed, *break_opt ? std::optional(break_rule) : std::nullopt, std::cout,
                                       std::cerr);
  if (cmd_bl->parsed()) return physctl::cli::cmd_baseline(bl_config, bl_out, bl_force, std::cout, std::cerr);
  return physctl::cli::cmd_embed_latents(emb_dir, std::cout, std::cerr);
}
