#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "physctl/control_loop.hpp"

namespace physctl {

inline constexpr const char* kMetricsHeader = "iter,model_loss,actor_loss,sigma_metric,pearson,wall_ms";

// Rows must have strictly increasing iter. NaN pearson is written as "nan".
std::string format_metrics_csv(std::span<const MetricsRecord> rows);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> rows);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

// Plain numeric matrix, one row per line, optional header.
void write_matrix_csv(const std::filesystem::path& path, const Tensor& m, const std::string& header = {});

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace physctl
