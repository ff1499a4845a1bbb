#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"
#include "physctl/error.hpp"
#include "physctl/systems.hpp"

using namespace physctl;

namespace {

// Reference complex matrix-vector product on plain std::complex values.
std::vector<std::complex<double>> naive_field(const Tensor& re, const Tensor& im, const Tensor& phase) {
  const std::size_t m = re.extent(0), n = re.extent(1);
  std::vector<std::complex<double>> u(m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c)
      u[r] += std::complex<double>(re[r * n + c], im[r * n + c]) *
              std::polar(1.0, 2.0 * std::numbers::pi * phase[c]);
  return u;
}

OpticalConfig linear(std::size_t n, std::size_t m, MeasurementMode mode) {
  OpticalConfig c;
  c.n = n;
  c.m = m;
  c.mode = mode;
  return c;
}

// Principal-angle proxy: 1 - |<F0, F>| / (|F0||F|) over flattened complex entries.
double misalignment(const Tensor& ar, const Tensor& ai, const Tensor& br, const Tensor& bi) {
  std::complex<double> dot;
  double na = 0, nb = 0;
  for (std::size_t i = 0; i < ar.size(); ++i) {
    const std::complex<double> a(ar[i], ai[i]), b(br[i], bi[i]);
    dot += std::conj(a) * b;
    na += std::norm(a);
    nb += std::norm(b);
  }
  return 1.0 - std::abs(dot) / std::sqrt(na * nb);
}

}  // namespace

TEST_SUITE("optical") {
  TEST_CASE("identity matrix") {
    Tensor eye({4, 4}), zero({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
    OpticalSystem sys(linear(4, 4, MeasurementMode::Intensity), eye, zero);
    Tensor y = sys.forward(Tensor({4}));
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
  }

  TEST_CASE("unitary energy conservation") {
    RandomStream rng(7);
    for (std::size_t n : {4u, 16u, 64u}) {
      Tensor ur, ui;
      random_unitary(n, rng, ur, ui);
      OpticalSystem sys(linear(n, n, MeasurementMode::Intensity), ur, ui);
      for (int trial = 0; trial < 10; ++trial) {
        Tensor y = sys.forward(rng.uniform_tensor({n}));
        CHECK(std::abs(y.sum() - static_cast<double>(n)) / static_cast<double>(n) < 1e-10);
      }
    }
  }

  TEST_CASE("matches a naive complex matvec") {
    OpticalConfig c = linear(4, 4, MeasurementMode::FullComplex);
    c.seed = 13;
    OpticalSystem sys(c);
    RandomStream rng(3);
    Tensor phase = rng.uniform_tensor({4});
    Tensor u = sys.forward(phase);
    auto want = naive_field(sys.f_real(), sys.f_imag(), phase);
    CHECK(u.shape() == Shape{4, 2});
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(u[2 * k] == doctest::Approx(want[k].real()).epsilon(1e-12));
      CHECK(u[2 * k + 1] == doctest::Approx(want[k].imag()).epsilon(1e-12));
    }
    OpticalConfig ci = c;
    ci.mode = MeasurementMode::Intensity;
    OpticalSystem si(ci);
    Tensor y = si.forward(phase);
    for (std::size_t k = 0; k < 4; ++k) CHECK(y[k] == doctest::Approx(std::norm(want[k])).epsilon(1e-12));
  }

  TEST_CASE("phase domain and shape errors") {
    OpticalSystem sys(linear(4, 6, MeasurementMode::Intensity));
    CHECK_THROWS_AS(sys.forward(Tensor::from({0.1, 0.2, 1.5, 0.0})), DomainError);
    CHECK_THROWS_AS(sys.forward(Tensor::from({0.1, -0.01, 0.5, 0.0})), DomainError);
    CHECK_THROWS_AS(sys.forward(Tensor({5})), DimensionError);
    CHECK_THROWS_AS(OpticalSystem(linear(4, 6, MeasurementMode::Intensity), Tensor({4, 4}), Tensor({4, 4})),
                    DimensionError);
  }

  TEST_CASE("pure function without drift or noise") {
    OpticalConfig c = linear(8, 12, MeasurementMode::Intensity);
    c.seed = 5;
    OpticalSystem sys(c);
    RandomStream rng(1);
    Tensor x = rng.uniform_tensor({8});
    Tensor first = sys.forward(x);
    for (int i = 0; i < 5; ++i) CHECK(sys.forward(x) == first);
    for (int i = 0; i < 50; ++i) {
      const Tensor y = sys.forward(rng.uniform_tensor({8}));
      for (double v : y.data()) CHECK(v >= 0.0);
    }
  }

  TEST_CASE("noise keeps intensities non-negative") {
    OpticalConfig c = linear(8, 12, MeasurementMode::Intensity);
    c.noise_sigma = 0.5;
    OpticalSystem sys(c);
    RandomStream rng(2);
    for (int i = 0; i < 50; ++i) {
      const Tensor y = sys.forward(rng.uniform_tensor({8}));
      for (double v : y.data()) CHECK(v >= 0.0);
    }
  }

  TEST_CASE("saturation knob") {
    OpticalConfig c = linear(8, 12, MeasurementMode::Intensity);
    OpticalSystem lin(c);
    c.nonlinearity = 0.5;
    OpticalSystem sat(c);
    Tensor x({8}, 0.3);
    Tensor a = lin.forward(x), b = sat.forward(x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i] / (1 + 0.5 * a[i])));
  }

  TEST_CASE("drift") {
    OpticalConfig c = linear(8, 8, MeasurementMode::Intensity);
    OpticalSystem still(c);
    const Tensor r0 = still.f_real(), i0 = still.f_imag();
    for (int i = 0; i < 10; ++i) still.drift_step();
    CHECK(still.f_real() == r0);
    CHECK(still.f_imag() == i0);

    double early = 0.0, late = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      c.seed = seed;
      c.drift_rate = 0.01;
      OpticalSystem sys(c);
      const double norm = sys.frobenius_norm();
      const Tensor ar = sys.f_real(), ai = sys.f_imag();
      for (int s = 0; s < 100; ++s) {
        sys.drift_step();
        CHECK(std::abs(sys.frobenius_norm() - norm) / norm < 1e-5);
        if (s == 9) early += misalignment(ar, ai, sys.f_real(), sys.f_imag());
      }
      late += misalignment(ar, ai, sys.f_real(), sys.f_imag());
    }
    CHECK(early > 0.0);
    CHECK(late > early);
  }

  TEST_CASE("random dataset") {
    OpticalSystem sys(linear(8, 12, MeasurementMode::Intensity));
    RandomStream a(4), b(4);
    auto d = sample_random_dataset(sys, 5, a);
    REQUIRE(d.size() == 5);
    for (const auto& t : d) {
      CHECK(t.x.shape() == Shape{8});
      CHECK(t.y.shape() == Shape{12});
      for (double v : t.y.data()) CHECK(v >= 0.0);
    }
    auto e = sample_random_dataset(sys, 5, b);
    for (std::size_t i = 0; i < 5; ++i) CHECK(d[i].y == e[i].y);
    CHECK_THROWS_AS(sample_random_dataset(sys, 0, a), ContractError);
  }
}

TEST_SUITE("pseudo inverse") {
  TEST_CASE("identity") {
    Tensor eye({3, 3}), zero({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    Tensor y = Tensor::from({3, 2}, {1, -2, 0.5, 3, 0, 1});
    auto res = pseudo_inverse_control(eye, zero, y);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(res.x[i] == doctest::Approx(y[i]).epsilon(1e-12));
    CHECK_FALSE(res.regularized);
  }

  TEST_CASE("square and overdetermined round trips") {
    RandomStream rng(21);
    for (std::size_t m : {8u, 20u}) {
      OpticalConfig c = linear(8, m, MeasurementMode::FullComplex);
      c.seed = m;
      OpticalSystem sys(c);
      Tensor x_true = rng.normal_tensor({8, 2});
      Tensor y = complex_matvec(sys.f_real(), sys.f_imag(), x_true);
      auto res = pseudo_inverse_control(sys.f_real(), sys.f_imag(), y);
      double err = 0, norm = 0;
      for (std::size_t i = 0; i < x_true.size(); ++i) {
        err += std::pow(res.x[i] - x_true[i], 2);
        norm += x_true[i] * x_true[i];
      }
      CHECK(std::sqrt(err / norm) < 1e-4);
      Tensor back = complex_matvec(sys.f_real(), sys.f_imag(), res.x);
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(back[i] - y[i]) < 1e-8);
    }
  }

  TEST_CASE("rank deficient matrix is regularised with a warning") {
    Tensor re({3, 3}), im({3, 3});
    re.at({0, 0}) = 1.0;
    re.at({1, 1}) = 1.0;
    auto res = pseudo_inverse_control(re, im, Tensor::from({3, 2}, {1, 0, 2, 0, 0, 0}));
    CHECK(res.regularized);
    CHECK_FALSE(res.warning.empty());
    CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(res.x[2] == doctest::Approx(2.0).epsilon(1e-6));
  }
}

TEST_SUITE("retina") {
  RetinaConfig small() {
    RetinaConfig c;
    c.net.frames = 6;
    c.net.height = c.net.width = 12;
    c.net.k1 = c.net.k2 = 3;
    c.net.kt = 3;
    c.net.cells = 3;
    c.seed = 8;
    return c;
  }

  TEST_CASE("rates are positive and deterministic") {
    RetinaConfig c = small();
    c.mode = SamplingMode::Rate;
    RetinaSystem sys(c);
    RandomStream rng(1);
    const auto before = sys.parameters().checksum();
    for (int i = 0; i < 20; ++i) {
      Tensor x = rng.uniform_tensor(sys.input_shape());
      Tensor a = sys.forward(x), b = sys.forward(x);
      CHECK(a == b);
      CHECK(a.shape() == Shape{6, 3});
      for (double v : a.data()) CHECK(v > 0.0);
    }
    CHECK(sys.parameters().checksum() == before);
  }

  TEST_CASE("calibrated around the base rate") {
    RetinaConfig c = small();
    RetinaSystem sys(c);
    RandomStream rng(2);
    Tensor movies = natural_movies(40, 6, 12, 12, rng);
    Tensor r = sys.rates_batch(movies);
    double log_mean = 0.0;
    for (double v : r.data()) log_mean += std::log(v);
    log_mean /= static_cast<double>(r.size());
    CHECK(std::abs(log_mean - std::log(c.base_rate)) < 0.3);
  }

  TEST_CASE("counts follow the rate") {
    RetinaConfig c = small();
    RetinaSystem sys(c);
    RandomStream rng(3);
    Tensor x = rng.uniform_tensor(sys.input_shape());
    Tensor rate = sys.rates(x);
    const std::size_t draws = 10000;
    Tensor mean(rate.shape());
    for (std::size_t i = 0; i < draws; ++i) {
      Tensor y = sys.forward(x);
      for (double v : y.data()) CHECK(v == std::floor(v));
      mean += y;
    }
    mean *= 1.0 / draws;
    for (std::size_t i = 0; i < rate.size(); ++i) CHECK(std::abs(mean[i] - rate[i]) < 3.0 * std::sqrt(rate[i] / draws) + 1e-9);
  }

  TEST_CASE("shape and range errors") {
    RetinaSystem sys(small());
    CHECK_THROWS_AS(sys.forward(Tensor({6, 12, 11})), DimensionError);
    CHECK_THROWS_AS(sys.forward(Tensor({6, 12, 12}, 1.5)), DomainError);
  }
}
