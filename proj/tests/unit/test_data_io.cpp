#include <unistd.h>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "physctl/config.hpp"
#include "physctl/container.hpp"
#include "physctl/error.hpp"
#include "physctl/idx.hpp"
#include "physctl/log.hpp"
#include "physctl/metrics_io.hpp"
#include "physctl/pca.hpp"
#include "physctl/targets.hpp"

using namespace physctl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("physctl_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::vector<std::uint8_t> idx_header(std::uint8_t type, std::initializer_list<std::uint32_t> extents) {
  std::vector<std::uint8_t> b{0, 0, type, static_cast<std::uint8_t>(extents.size())};
  for (auto e : extents)
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(e >> s));
  return b;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), a.size() * sizeof(double)) == 0;
}

double dist(const Tensor& m, std::size_t cols, std::size_t i, std::size_t j) {
  double acc = 0.0;
  for (std::size_t k = 0; k < cols; ++k) acc += (m[i * cols + k] - m[j * cols + k]) * (m[i * cols + k] - m[j * cols + k]);
  return std::sqrt(acc);
}

}  // namespace

TEST_SUITE("idx") {
  TEST_CASE("unsigned bytes scale to [0,1]") {
    auto b = idx_header(0x08, {3});
    b.insert(b.end(), {0, 128, 255});
    Tensor t = parse_idx(b);
    CHECK(t.shape() == Shape{3});
    CHECK(t[0] == 0.0);
    CHECK(t[1] == 128.0 / 255.0);
    CHECK(t[2] == 1.0);
  }

  TEST_CASE("rank-3 extents are preserved") {
    auto b = idx_header(0x08, {2, 4, 4});
    for (int i = 0; i < 32; ++i) b.push_back(static_cast<std::uint8_t>(i * 8));
    Tensor t = parse_idx(b);
    CHECK(t.shape() == Shape{2, 4, 4});
    CHECK(t.at({1, 3, 3}) == 248.0 / 255.0);
  }

  TEST_CASE("big-endian wider types") {
    auto b = idx_header(0x0C, {2});
    b.insert(b.end(), {0x00, 0x00, 0x01, 0x02, 0xFF, 0xFF, 0xFF, 0xFE});
    Tensor t = parse_idx(b);
    CHECK(t[0] == 258.0);
    CHECK(t[1] == -2.0);
  }

  TEST_CASE("errors carry byte offsets") {
    auto b = idx_header(0x08, {4});
    b.insert(b.end(), {1, 2, 3});
    try {
      parse_idx(b);
      FAIL("expected truncation error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 11);
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
    auto bad = idx_header(0x08, {1});
    bad.push_back(0);
    bad[1] = 7;
    try {
      parse_idx(bad);
      FAIL("expected magic error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 1);
    }
    auto odd = idx_header(0x07, {1});
    odd.push_back(0);
    try {
      parse_idx(odd);
      FAIL("expected type error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 2);
    }
    CHECK_THROWS_AS(parse_idx(std::vector<std::uint8_t>{0, 0}), FormatError);
  }

  TEST_CASE("gzip files load transparently") {
    TempDir dir;
    auto b = idx_header(0x08, {2, 2});
    b.insert(b.end(), {0, 51, 102, 255});
    const fs::path gz = dir.path / "x.idx.gz";
    gzFile f = gzopen(gz.c_str(), "wb");
    REQUIRE(f != nullptr);
    gzwrite(f, b.data(), static_cast<unsigned>(b.size()));
    gzclose(f);
    Tensor t = load_idx(gz);
    CHECK(t.shape() == Shape{2, 2});
    CHECK(t[1] == 0.2);
    const fs::path plain = dir.path / "x.idx";
    std::ofstream(plain, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), b.size());
    CHECK(load_idx(plain) == t);
    CHECK_THROWS_AS(load_idx(dir.path / "missing"), Error);
  }
}

TEST_SUITE("container") {
  TEST_CASE("round trip is bitwise for both element types") {
    TempDir dir;
    Tensor odd({2, 3}, {0.1, -0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::infinity(),
                        std::nan(""), 1e300});
    Tensor f({4}, {0.5, -1.25, 3.0, 1e-3});
    for (auto& v : f.data()) v = static_cast<float>(v);
    std::vector<ContainerEntry> entries{{"odd", odd, ElementType::F64}, {"f", f, ElementType::F32},
                                        {"scalar", Tensor::scalar(42), ElementType::F64}};
    write_container(dir.path / "c.pct", entries);
    auto back = read_container(dir.path / "c.pct");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back[i].name == entries[i].name);
      CHECK(back[i].type == entries[i].type);
      CHECK(bitwise_equal(back[i].value, entries[i].value));
    }
  }

  TEST_CASE("byte layout is little-endian as documented") {
    std::vector<ContainerEntry> e{{"ab", Tensor({2}, {1.0, 2.0}), ElementType::F32}};
    auto b = encode_container(e);
    const std::vector<std::uint8_t> head{'P', 'C', 'T', '1', 1, 0, 1, 0, 0, 0, 2, 0, 'a', 'b', 1, 0, 0, 0, 2, 0, 0, 0, 0};
    REQUIRE(b.size() == head.size() + 8);
    CHECK(std::equal(head.begin(), head.end(), b.begin()));
    float one;
    std::memcpy(&one, b.data() + head.size(), 4);
    CHECK(one == 1.0f);
  }

  TEST_CASE("empty container is valid") {
    auto b = encode_container({});
    CHECK(b.size() == 10);
    CHECK(decode_container(b).empty());
  }

  TEST_CASE("corruption is rejected") {
    std::vector<ContainerEntry> e{{"a", Tensor({1}, {1.0})}, {"b", Tensor({1}, {2.0})}};
    auto b = encode_container(e);
    auto bad = b;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_container(bad), FormatError);
    bad = b;
    bad[4] = 9;
    CHECK_THROWS_WITH_AS(decode_container(bad), doctest::Contains("version"), FormatError);
    bad = b;
    bad.pop_back();
    CHECK_THROWS_WITH_AS(decode_container(bad), doctest::Contains("truncated"), FormatError);
    bad = b;
    bad.push_back(0);
    CHECK_THROWS_AS(decode_container(bad), FormatError);
    // Rename "b" to "a" in place.
    bad = b;
    auto it = std::find(bad.begin() + 13, bad.end(), 'b');
    *it = 'a';
    CHECK_THROWS_WITH_AS(decode_container(bad), doctest::Contains("duplicate"), FormatError);
    std::vector<ContainerEntry> dup{{"a", Tensor({1})}, {"a", Tensor({1})}};
    CHECK_THROWS_AS(encode_container(dup), FormatError);
  }

  TEST_CASE("entry lookup") {
    std::vector<ContainerEntry> e{{"a", Tensor({1}, {3.0})}};
    CHECK(find_entry(e, "a").value[0] == 3.0);
    CHECK_THROWS_AS(find_entry(e, "b"), FormatError);
  }
}

TEST_SUITE("config") {
  TEST_CASE("empty file gives the defaults") {
    RunConfig c = parse_config("");
    CHECK(write_config(c) == write_config(RunConfig{}));
    CHECK(c.loop.K1 == 200);
    CHECK(c.loop.beta.first == 500.0);
    CHECK(c.loop.beta.rest == 450.0);
  }

  TEST_CASE("beta accepts a pair or a single value") {
    RunConfig c = parse_config("[model]\nbeta = \"500/450\"\n");
    CHECK(c.loop.beta.at(1) == 500.0);
    CHECK(c.loop.beta.at(2) == 450.0);
    c = parse_config("[model]\nbeta = 10\n");
    CHECK(c.loop.beta.first == 10.0);
    CHECK(c.loop.beta.rest == 10.0);
    CHECK_THROWS_AS(parse_config("[model]\nbeta = 1/x\n"), ConfigError);
  }

  TEST_CASE("errors name the field") {
    auto field_of = [](const std::string& text) {
      try {
        parse_config(text);
      } catch (const ConfigError& e) {
        return e.field();
      }
      return std::string("none");
    };
    CHECK(field_of("[loop]\nK1 = 0\n") == "loop.K1");
    CHECK(field_of("[loop]\nK1 = many\n") == "loop.K1");
    CHECK(field_of("[loop]\nreplay_ratio = 2\n") == "loop.replay_ratio");
    CHECK(field_of("[loop]\nK3 = 1\n") == "loop.K3");
    CHECK(field_of("[nowhere]\nx = 1\n") == "nowhere.x");
    CHECK(field_of("[optical]\nmode = polar\n") == "optical.mode");
    CHECK(field_of("[model]\nencoder_uses_x = maybe\n") == "model.encoder_uses_x");
    CHECK(field_of("[optical]\nm = 250\n") == "optical.m");
    CHECK(field_of("[targets]\nsource = mnist\n") == "targets.path");
    CHECK(field_of("[run]\ntask = retina\n") == "targets.source");
    CHECK(field_of("[loop]\nK1 = -3\n") == "loop.K1");
  }

  TEST_CASE("load is idempotent through the writer") {
    const std::string text =
        "[run]\ntask = optical\nseed = 3\n[optical]\nn = 16\nm = 64\ndrift_rate = 1e-3\n[model]\nbeta = 0.1/0.05\n"
        "[loop]\nalpha = 0.003\nK1 = 17\n";
    RunConfig a = parse_config(text);
    RunConfig b = parse_config(write_config(a));
    CHECK(write_config(a) == write_config(b));
    CHECK(b.optical.drift_rate == 1e-3);
    CHECK(b.loop.alpha == 0.003);
    CHECK(b.loop.beta.rest == 0.05);
  }

  TEST_CASE("retina config and derived specs") {
    RunConfig c = parse_config("[run]\ntask = retina\n[retina]\nframes = 8\ncells = 3\n[targets]\nsource = natural\n");
    ModelSpec ms = c.model_spec();
    CHECK(ms.task == TaskKind::Retina);
    CHECK(ms.net.frames == 8);
    CHECK(ms.net.in_channels == 2);
    CHECK(ms.output_shape() == Shape{8, 3});
    ActorSpec as = c.actor_spec();
    CHECK(as.output_shape() == Shape{8, 16, 16});
  }

  TEST_CASE("load_config reads files") {
    TempDir dir;
    std::ofstream(dir.path / "c.ini") << "[loop]\nK2 = 5\n";
    CHECK(load_config(dir.path / "c.ini").loop.K2 == 5);
    CHECK_THROWS_AS(load_config(dir.path / "missing.ini"), ConfigError);
  }
}

TEST_SUITE("metrics csv") {
  TEST_CASE("header and round trip") {
    TempDir dir;
    std::vector<MetricsRecord> rows{{1, 0.5, 0.25, 0.125, 0.75, 1, 12}, {2, 0.1, 0.2, 0.3, std::nan(""), 0, 7}};
    write_metrics_csv(dir.path / "m.csv", rows);
    std::ifstream in(dir.path / "m.csv");
    std::string first;
    std::getline(in, first);
    CHECK(first == "iter,model_loss,actor_loss,sigma_metric,pearson,wall_ms");
    auto back = read_metrics_csv(dir.path / "m.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].sigma_metric == 0.125);
    CHECK(back[0].wall_ms == 12);
    CHECK(std::isnan(back[1].pearson));
  }

  TEST_CASE("iter must increase") {
    std::vector<MetricsRecord> rows{{2}, {2}};
    CHECK_THROWS_AS(format_metrics_csv(rows), ContractError);
  }

  TEST_CASE("doubles print shortest round-trip text") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  }
}

TEST_SUITE("pca") {
  TEST_CASE("planted plane is recovered up to rigid motion") {
    RandomStream rng(3);
    const std::size_t n = 40, l = 7;
    // Orthonormal basis of a random plane via Gram-Schmidt.
    std::vector<double> u(l), v(l);
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0;
      for (std::size_t i = 0; i < l; ++i) s += a[i] * b[i];
      return s;
    };
    double nu = std::sqrt(dot(u, u));
    for (auto& x : u) x /= nu;
    double uv = dot(u, v);
    for (std::size_t i = 0; i < l; ++i) v[i] -= uv * u[i];
    double nv = std::sqrt(dot(v, v));
    for (auto& x : v) x /= nv;
    Tensor plane({n, 2}), pts({n, l});
    for (std::size_t i = 0; i < n; ++i) {
      plane[2 * i] = rng.normal(0, 3);
      plane[2 * i + 1] = rng.normal(0, 1);
      for (std::size_t k = 0; k < l; ++k) pts[i * l + k] = 5.0 + plane[2 * i] * u[k] + plane[2 * i + 1] * v[k];
    }
    auto res = pca2d(pts);
    CHECK(res.components == 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        CHECK(std::abs(dist(res.embedding, 2, i, j) - dist(plane, 2, i, j)) < 1e-5);
  }

  TEST_CASE("isotropic cloud spreads variance evenly") {
    RandomStream rng(4);
    const std::size_t n = 20000, l = 8;
    Tensor pts({n, l});
    for (auto& x : pts.data()) x = rng.normal();
    auto res = pca2d(pts);
    CHECK(std::abs(res.variance[0] / res.total_variance - 1.0 / l) < 0.015);
    CHECK(std::abs(res.variance[1] / res.total_variance - 1.0 / l) < 0.015);
    CHECK(res.variance[0] >= res.variance[1]);
  }

  TEST_CASE("duplicate rows embed identically and output is deterministic") {
    RandomStream rng(5);
    Tensor pts({6, 4});
    for (auto& x : pts.data()) x = rng.normal();
    for (std::size_t k = 0; k < 4; ++k) pts[5 * 4 + k] = pts[1 * 4 + k];
    Tensor a = pca2d_embed(pts), b = pca2d_embed(pts);
    CHECK(a == b);
    CHECK(a[2] == b[10]);
    CHECK(a[3] == a[11]);
    CHECK(a[2] == a[10]);
  }

  TEST_CASE("rank one pads with zeros and warns") {
    std::vector<std::string> warnings;
    set_log_sink([&](LogLevel lv, std::string_view m) {
      if (lv == LogLevel::Warning) warnings.emplace_back(m);
    });
    Tensor pts({4, 3});
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 3; ++k) pts[i * 3 + k] = static_cast<double>(i) * (k + 1);
    auto res = pca2d(pts);
    set_log_sink({});
    CHECK(res.components == 1);
    for (std::size_t i = 0; i < 4; ++i) CHECK(res.embedding[2 * i + 1] == 0.0);
    CHECK(warnings.size() == 1);
    CHECK_THROWS_AS(pca2d(Tensor({1, 3})), ContractError);
  }
}

TEST_SUITE("targets") {
  TEST_CASE("synthetic digits") {
    RandomStream rng(1);
    Tensor d = synthetic_digits(10, 28, rng);
    CHECK(d.shape() == Shape{10, 28, 28});
    for (double v : d.data()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(row(d, 1).sum() < row(d, 8).sum());
  }

  TEST_CASE("area downsample") {
    Tensor blocks({1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
    CHECK(area_downsample(blocks, 2) == Tensor({1, 2, 2}, {1, 2, 3, 4}));
    RandomStream rng(2);
    Tensor img = synthetic_digits(2, 28, rng);
    Tensor small = area_downsample(img, 16);
    CHECK(small.shape() == Shape{2, 16, 16});
    CHECK(small.sum() * 28.0 * 28.0 / (16.0 * 16.0) == doctest::Approx(img.sum()).epsilon(1e-12));
    CHECK_THROWS_AS(area_downsample(img, 29), DimensionError);
  }

  TEST_CASE("energy matching") {
    Tensor t({2, 3}, {1, 2, 3, 0, 0, 5});
    Tensor e = energy_match(t, 2.0);
    CHECK(slice_rows(e, 0, 1).sum() == doctest::Approx(2.0));
    CHECK(slice_rows(e, 1, 2).sum() == doctest::Approx(2.0));
    CHECK_THROWS_AS(energy_match(Tensor({1, 2}), 1.0), DomainError);
  }

  TEST_CASE("optical digit problem") {
    OpticalConfig oc;
    oc.n = 16;
    oc.m = 64;
    OpticalSystem sys(oc);
    TargetConfig tc;
    tc.count = 4;
    ControlProblem p = build_optical_problem(sys, tc);
    CHECK(p.targets.shape() == Shape{4, 64});
    CHECK(p.target_outputs.shape() == Shape{4, 64});
    RandomStream rng(tc.seed);
    (void)synthetic_digits(tc.count, 28, rng);
    const double energy = 0.5 * mean_output_energy(sys, 256, rng);
    for (std::size_t i = 0; i < 4; ++i) CHECK(row(p.target_outputs, i).sum() == doctest::Approx(energy));
    RandomStream r2(9);
    CHECK(random_input_sigma(sys, p, TaskKind::Optical, r2) > 0.0);
  }

  TEST_CASE("in-range optical problem is reachable") {
    OpticalConfig oc;
    oc.n = 8;
    oc.m = 8;
    oc.mode = MeasurementMode::FullComplex;
    OpticalSystem sys(oc);
    TargetConfig tc;
    tc.source = TargetSource::InRange;
    tc.count = 3;
    ControlProblem p = build_optical_problem(sys, tc);
    CHECK(p.targets.shape() == Shape{3, 16});
    CHECK(p.target_outputs.shape() == Shape{3, 8, 2});
    tc.source = TargetSource::Digits;
    CHECK_THROWS_AS(build_optical_problem(sys, tc), ContractError);
  }

  TEST_CASE("retina problem and likelihood fraction") {
    RetinaConfig rc;
    rc.net = RateNetShape{1, 2, 6, 12, 12, 3, 3, 3, 3};
    RetinaSystem sys(rc);
    TargetConfig tc;
    tc.source = TargetSource::Natural;
    tc.count = 4;
    ControlProblem p = build_retina_problem(sys, tc);
    CHECK(p.targets.shape() == Shape{4, 6, 12, 12});
    CHECK(p.target_outputs.shape() == Shape{4, 6, 3});
    CHECK(ll_fraction(p.target_outputs, p.target_outputs) == doctest::Approx(1.0));
    Tensor null_rates = p.target_outputs;
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < 24; ++r) mean += p.target_outputs[r * 3 + c] / 24.0;
      for (std::size_t r = 0; r < 24; ++r) null_rates[r * 3 + c] = mean;
    }
    CHECK(ll_fraction(p.target_outputs, null_rates) == doctest::Approx(0.0).epsilon(1e-9));
    Tensor worse = p.target_outputs;
    worse *= 3.0;
    CHECK(ll_fraction(p.target_outputs, worse) < 1.0);
  }
}
