#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"
#include "physctl/container.hpp"
#include "physctl/gradcheck_suite.hpp"
#include "physctl/metrics_io.hpp"

using namespace physctl;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = PHYSCTL_SOURCE_DIR;

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() / ("physctl_cli_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const char* kTiny =
    "[optical]\nn = 6\nm = 9\n[model]\nlatent_dim = 3\nbeta = 1\n"
    "[loop]\nK1 = 20\nK2 = 20\nalpha = 1e-2\ninitial_samples = 30\nmax_outer_iters = 3\ntarget_metric = 2\n"
    "resample_count = 6\n[targets]\nsource = in_range\ncount = 3\n[run]\nlatent_samples = 12\n";

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

cli::RunOptions options(const fs::path& config, const fs::path& out) {
  cli::RunOptions o;
  o.config = config;
  o.out = out;
  o.verbosity = 0;
  return o;
}

}  // namespace

TEST_CASE("run: missing config exits 1") {
  TempDir d;
  std::ostringstream out, err;
  CHECK(cli::cmd_run(options(d.path / "none.ini", d.path / "run"), out, err) == cli::kError);
  CHECK(err.str().find("cannot open") != std::string::npos);
}

TEST_CASE("run: invalid config exits 1 with the field name") {
  TempDir d;
  std::ofstream(d.path / "bad.ini") << "[loop]\nK1 = 0\n";
  std::ostringstream out, err;
  CHECK(cli::cmd_run(options(d.path / "bad.ini", d.path / "run"), out, err) == cli::kError);
  CHECK(err.str().find("loop.K1") != std::string::npos);
}

TEST_CASE("run: budget exhaustion exits 2 and writes every artifact") {
  TempDir d;
  std::ofstream(d.path / "tiny.ini") << kTiny;
  std::ostringstream out, err;
  auto o = options(d.path / "tiny.ini", d.path / "run");
  o.max_outer_iters = 1;
  REQUIRE(cli::cmd_run(o, out, err) == cli::kBudgetExhausted);
  CHECK(read_metrics_csv(d.path / "run/metrics.csv").size() == 1);
  CHECK(fs::exists(d.path / "run/run_manifest.ini"));
  CHECK(fs::exists(d.path / "run/checkpoints/iter1.pct"));
  auto res = read_container(d.path / "run/result.pct");
  CHECK(find_entry(res, "x_star").value.shape() == Shape{3, 6});
  CHECK(find_entry(res, "outputs").value.shape() == Shape{3, 9});
  CHECK(slurp(d.path / "run/run_manifest.ini").find("max_outer_iters = 1") != std::string::npos);
}

TEST_CASE("run: refuses an existing run directory without --force") {
  TempDir d;
  std::ofstream(d.path / "tiny.ini") << kTiny;
  std::ostringstream out, err;
  auto o = options(d.path / "tiny.ini", d.path / "run");
  o.max_outer_iters = 1;
  REQUIRE(cli::cmd_run(o, out, err) == cli::kBudgetExhausted);
  CHECK(cli::cmd_run(o, out, err) == cli::kError);
  CHECK(err.str().find("--force") != std::string::npos);
  o.force = true;
  CHECK(cli::cmd_run(o, out, err) == cli::kBudgetExhausted);
}

TEST_CASE("run: seed override changes the run, same seed reproduces it") {
  TempDir d;
  std::ofstream(d.path / "tiny.ini") << kTiny;
  std::ostringstream out, err;
  auto o = options(d.path / "tiny.ini", d.path / "a");
  o.max_outer_iters = 1;
  o.seed = 5;
  cli::cmd_run(o, out, err);
  o.out = d.path / "b";
  cli::cmd_run(o, out, err);
  o.out = d.path / "c";
  o.seed = 6;
  cli::cmd_run(o, out, err);
  CHECK(slurp(d.path / "a/result.pct") == slurp(d.path / "b/result.pct"));
  CHECK(slurp(d.path / "a/result.pct") != slurp(d.path / "c/result.pct"));
}

TEST_CASE("run: shipped optical desk config reaches its threshold") {
  TempDir d;
  std::ostringstream out, err;
  CHECK(cli::cmd_run(options(kSource / "configs/optical_desk.ini", d.path / "run"), out, err) == cli::kSuccess);
  const auto rows = read_metrics_csv(d.path / "run/metrics.csv");
  CHECK(rows.size() >= 1);
  CHECK(rows.size() <= 10);
  CHECK(rows.back().pearson >= 0.7);
}

TEST_CASE("embed-latents: one CSV per iteration, idempotent") {
  TempDir d;
  std::ofstream(d.path / "tiny.ini") << kTiny;
  std::ostringstream out, err;
  REQUIRE(cli::cmd_run(options(d.path / "tiny.ini", d.path / "run"), out, err) == cli::kBudgetExhausted);
  REQUIRE(cli::cmd_embed_latents(d.path / "run", out, err) == cli::kSuccess);
  std::vector<std::string> first;
  for (int k = 1; k <= 3; ++k) {
    const fs::path csv = d.path / "run" / ("latents_2d_iter" + std::to_string(k) + ".csv");
    REQUIRE(fs::exists(csv));
    first.push_back(slurp(csv));
    std::istringstream lines(first.back());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "pc1,pc2");
    int rows = 0;
    while (std::getline(lines, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 1);
    }
    CHECK(rows == 12);
  }
  CHECK_FALSE(fs::exists(d.path / "run/latents_2d_iter4.csv"));
  REQUIRE(cli::cmd_embed_latents(d.path / "run", out, err) == cli::kSuccess);
  for (int k = 1; k <= 3; ++k)
    CHECK(slurp(d.path / "run" / ("latents_2d_iter" + std::to_string(k) + ".csv")) == first[k - 1]);
}

TEST_CASE("embed-latents: empty directory exits 1") {
  TempDir d;
  std::ostringstream out, err;
  CHECK(cli::cmd_embed_latents(d.path, out, err) == cli::kError);
  CHECK(cli::cmd_embed_latents(d.path / "missing", out, err) == cli::kError);
}

TEST_CASE("baseline: linear full-complex system is solved exactly") {
  TempDir d;
  std::ostringstream out, err;
  REQUIRE(cli::cmd_baseline(kSource / "configs/linear_complex.ini", d.path / "b", false, out, err) == cli::kSuccess);
  const auto rows = read_metrics_csv(d.path / "b/baseline_metrics.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].pearson >= 0.999);
  CHECK(rows[0].sigma_metric < 1e-12);
}

TEST_CASE("baseline: intensity mode reports the intensity-domain correlation") {
  TempDir d;
  std::ofstream(d.path / "int.ini") << "[optical]\nn = 16\nm = 32\nmode = intensity\n[targets]\nsource = in_range\n";
  std::ostringstream out, err;
  REQUIRE(cli::cmd_baseline(d.path / "int.ini", d.path / "b", false, out, err) == cli::kSuccess);
  const auto rows = read_metrics_csv(d.path / "b/baseline_metrics.csv");
  CHECK(rows[0].pearson >= 0.999);
  auto res = read_container(d.path / "b/baseline.pct");
  CHECK(find_entry(res, "outputs").value.shape() == Shape{10, 32});
  CHECK(out.str().find("phase-only") != std::string::npos);
}

TEST_CASE("baseline: retina config exits 1") {
  TempDir d;
  std::ostringstream out, err;
  CHECK(cli::cmd_baseline(kSource / "configs/retina_desk.ini", d.path / "b", false, out, err) == cli::kError);
  CHECK(err.str().find("optical task only") != std::string::npos);
}

TEST_CASE("gradcheck: pristine rules pass with one row per check") {
  std::ostringstream out, err;
  CHECK(cli::cmd_gradcheck(1, std::nullopt, out, err) == cli::kSuccess);
  for (const auto& name : gradcheck_names()) CHECK(out.str().find(name + " ") != std::string::npos);
  CHECK(out.str().find("FAIL") == std::string::npos);
}

TEST_CASE("gradcheck: a broken rule exits 1") {
  std::ostringstream out, err;
  CHECK(cli::cmd_gradcheck(1, std::string("sigmoid"), out, err) == cli::kError);
  CHECK(out.str().find("FAIL") != std::string::npos);
  std::ostringstream again;
  CHECK(cli::cmd_gradcheck(1, std::nullopt, again, err) == cli::kSuccess);
}
