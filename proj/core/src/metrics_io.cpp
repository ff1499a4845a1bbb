#include "physctl/metrics_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "physctl/error.hpp"

namespace physctl {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string format_metrics_csv(std::span<const MetricsRecord> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (i > 0 && r.iter <= rows[i - 1].iter)
      throw ContractError("metrics rows must have strictly increasing iter (" + std::to_string(rows[i - 1].iter) +
                          " then " + std::to_string(r.iter) + ")");
    out += std::to_string(r.iter) + "," + format_double(r.model_loss) + "," + format_double(r.actor_loss) + "," +
           format_double(r.sigma_metric) + "," + format_double(r.pearson) + "," + std::to_string(r.wall_ms) + "\n";
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> rows) {
  const std::string text = format_metrics_csv(rows);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw FormatError(path.string() + ": metrics header must be '" + std::string(kMetricsHeader) + "'", 0);
  std::vector<MetricsRecord> rows;
  std::size_t lineno = 1;
  auto real = [&](const std::string& s) {
    if (s == "nan") return std::nan("");
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw FormatError(path.string() + ": bad number '" + s + "' on line " + std::to_string(lineno));
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw FormatError(path.string() + ": expected 6 columns on line " + std::to_string(lineno));
    MetricsRecord r;
    r.iter = static_cast<std::size_t>(real(cells[0]));
    r.model_loss = real(cells[1]);
    r.actor_loss = real(cells[2]);
    r.sigma_metric = real(cells[3]);
    r.pearson = real(cells[4]);
    r.wall_ms = static_cast<std::int64_t>(real(cells[5]));
    rows.push_back(r);
  }
  return rows;
}

void write_matrix_csv(const std::filesystem::path& path, const Tensor& m, const std::string& header) {
  if (m.rank() != 2) throw DimensionError("write_matrix_csv expects a matrix, got " + shape_str(m.shape()));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  if (!header.empty()) out << header << "\n";
  const std::size_t r = m.extent(0), c = m.extent(1);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out << (j ? "," : "") << format_double(m[i * c + j]);
    out << "\n";
  }
}

}  // namespace physctl
