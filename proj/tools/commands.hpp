#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace physctl::cli {

enum ExitCode : int { kSuccess = 0, kError = 1, kBudgetExhausted = 2 };

struct RunOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_outer_iters;
  bool force = false;
  int verbosity = 1;
};

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_gradcheck(std::uint64_t seed, const std::optional<std::string>& break_rule, std::ostream& out,
                  std::ostream& err);
int cmd_baseline(const std::filesystem::path& config, const std::filesystem::path& out_dir, bool force,
                 std::ostream& out, std::ostream& err);
int cmd_embed_latents(const std::filesystem::path& run_dir, std::ostream& out, std::ostream& err);

}  // namespace physctl::cli
