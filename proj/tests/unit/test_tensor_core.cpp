#include <cmath>
#include <numbers>

#include "doctest.h"
#include "physctl/adam.hpp"
#include "physctl/error.hpp"
#include "physctl/gradcheck.hpp"
#include "physctl/ops.hpp"
#include "physctl/parameters.hpp"

using namespace physctl;

namespace {

Tensor ramp(Shape shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  return t;
}

// Naive reference cross-correlation on a single [C x H x W] input.
Tensor naive_conv(const Tensor& x, const Tensor& k, std::size_t stride, bool same) {
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::size_t o = k.extent(0), kh = k.extent(2), kw = k.extent(3);
  std::size_t oh, ow, pt = 0, pl = 0;
  if (same) {
    oh = (h + stride - 1) / stride;
    ow = (w + stride - 1) / stride;
    const std::size_t nh = (oh - 1) * stride + kh, nw = (ow - 1) * stride + kw;
    pt = nh > h ? (nh - h) / 2 : 0;
    pl = nw > w ? (nw - w) / 2 : 0;
  } else {
    oh = (h - kh) / stride + 1;
    ow = (w - kw) / stride + 1;
  }
  Tensor out({o, oh, ow});
  for (std::size_t f = 0; f < o; ++f)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b) {
              const long long r = static_cast<long long>(i * stride + a) - static_cast<long long>(pt);
              const long long s = static_cast<long long>(j * stride + b) - static_cast<long long>(pl);
              if (r < 0 || s < 0 || r >= static_cast<long long>(h) || s >= static_cast<long long>(w)) continue;
              acc += x.at({ch, static_cast<std::size_t>(r), static_cast<std::size_t>(s)}) * k.at({f, ch, a, b});
            }
        out.at({f, i, j}) = acc;
      }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape validation") {
    CHECK_THROWS_AS(Tensor(Shape{}), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS(t.reshaped({4}));
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  }
}

TEST_SUITE("ops") {
  TEST_CASE("matmul") {
    Graph g;
    auto eye = g.constant(Tensor::from({2, 2}, {1, 0, 0, 1}));
    auto m = g.constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
    CHECK(matmul(eye, m).value() == m.value());
    auto proj = g.constant(Tensor::from({2, 2}, {1, 0, 0, 0}));
    auto b = g.constant(Tensor::from({2, 2}, {5, 6, 7, 8}));
    CHECK(matmul(proj, b).value() == Tensor::from({2, 2}, {5, 6, 0, 0}));

    RandomStream rng(3);
    Tensor a = rng.normal_tensor({3, 4}), c = rng.normal_tensor({4, 2});
    Tensor got = matmul(g.constant(a), g.constant(c)).value();
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.at({i, k}) * c.at({k, j});
        CHECK(got.at({i, j}) == doctest::Approx(acc).epsilon(1e-12));
      }
    try {
      matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3})));
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("(2x3)") != std::string::npos);
    }
  }

  TEST_CASE("conv2d") {
    Graph g;
    auto ones = g.constant(Tensor({1, 3, 3}, 1.0));
    auto k = g.constant(Tensor({1, 1, 3, 3}, 1.0));
    Tensor out = conv2d(ones, k).value();
    CHECK(out.at({0, 1, 1}) == 9.0);
    CHECK(out.at({0, 0, 0}) == 4.0);
    CHECK(out.at({0, 2, 2}) == 4.0);
    CHECK(out.at({0, 0, 1}) == 6.0);

    RandomStream rng(5);
    Tensor x = rng.normal_tensor({1, 4, 5});
    CHECK(conv2d(g.constant(x), g.constant(Tensor({1, 1, 1, 1}, 1.0))).value() == x);

    for (std::size_t stride : {1u, 2u})
      for (bool same : {true, false}) {
        Tensor xi = rng.normal_tensor({2, 7, 6});
        Tensor ki = rng.normal_tensor({3, 2, 3, 2});
        Tensor got = conv2d(g.constant(xi), g.constant(ki), stride, same ? Padding::Same : Padding::None).value();
        Tensor want = naive_conv(xi, ki, stride, same);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
      }

    Tensor batch = rng.normal_tensor({3, 2, 5, 5});
    Tensor kk = rng.normal_tensor({4, 2, 3, 3});
    Tensor bo = conv2d(g.constant(batch), g.constant(kk)).value();
    CHECK(bo.shape() == Shape{3, 4, 5, 5});
    Tensor second = naive_conv(row(batch, 1), kk, 1, true);
    Tensor got_second = row(bo, 1);
    for (std::size_t i = 0; i < second.size(); ++i) CHECK(got_second[i] == doctest::Approx(second[i]).epsilon(1e-12));

    CHECK_THROWS_AS(conv2d(g.constant(Tensor({1, 2, 2})), g.constant(Tensor({1, 1, 3, 3})), 1, Padding::None),
                    DimensionError);
    CHECK_THROWS_AS(conv2d(g.constant(Tensor({2, 4, 4})), g.constant(Tensor({1, 1, 3, 3}))), DimensionError);
  }

  TEST_CASE("maxpool2x2") {
    Graph g;
    CHECK(maxpool2x2(g.constant(Tensor::from({1, 2, 2}, {1, 2, 3, 4}))).value() == Tensor::from({1, 1, 1}, {4}));
    CHECK(maxpool2x2(g.constant(ramp({1, 4, 4}))).value() == Tensor::from({1, 2, 2}, {5, 7, 13, 15}));
    Tensor c = maxpool2x2(g.constant(Tensor({2, 5, 3}, 0.7))).value();
    CHECK(c.shape() == Shape{2, 3, 2});
    for (double v : c.data()) CHECK(v == 0.7);
    // Trailing partial windows.
    CHECK(maxpool2x2(g.constant(ramp({1, 3, 3}))).value() == Tensor::from({1, 2, 2}, {4, 5, 7, 8}));

    // Ties route the gradient to the first occurrence.
    Parameter p("x", Tensor({1, 2, 2}, 1.0));
    Graph h;
    auto pooled = maxpool2x2(h.parameter(p));
    h.backward(sum(pooled));
    CHECK(p.grad == Tensor::from({1, 2, 2}, {1, 0, 0, 0}));
  }

  TEST_CASE("upsample2x2 and zero_pad4") {
    Graph g;
    CHECK(upsample2x2(g.constant(Tensor::from({1, 1, 1}, {1}))).value() == Tensor({1, 2, 2}, 1.0));
    CHECK(upsample2x2(g.constant(Tensor::from({1, 1, 2}, {1, 2}))).value() ==
          Tensor::from({1, 2, 4}, {1, 1, 2, 2, 1, 1, 2, 2}));
    RandomStream rng(9);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor x = rng.normal_tensor({3, 3, 4});
      CHECK(maxpool2x2(upsample2x2(g.constant(x))).value() == x);
    }
    Tensor x = rng.normal_tensor({2, 3, 3});
    CHECK(zero_pad4(g.constant(x), 0).value() == x);
    Tensor p = zero_pad4(g.constant(Tensor::from({1, 1, 1}, {1})), 1).value();
    CHECK(p == Tensor::from({1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0}));
    CHECK(zero_pad4(g.constant(x), 2).value().sum() == doctest::Approx(x.sum()).epsilon(1e-14));
  }

  TEST_CASE("activations") {
    Graph g;
    CHECK(relu(g.constant(Tensor::from({-1, 0, 2}))).value() == Tensor::from({0, 0, 2}));
    CHECK(sigmoid(g.constant(Tensor::scalar(0))).value().item() == 0.5);
    CHECK(exponential(g.constant(Tensor::scalar(1))).value().item() == doctest::Approx(2.718281828).epsilon(1e-9));
    CHECK(sigmoid(g.constant(Tensor::scalar(-800))).value().item() >= 0.0);

    Parameter p("x", Tensor::from({-1, 0, 2}));
    Graph h;
    h.backward(sum(relu(h.parameter(p))));
    CHECK(p.grad == Tensor::from({0, 0, 1}));
  }

  TEST_CASE("mse_loss") {
    Graph g;
    auto t = g.constant(Tensor::from({1, 2, 3}));
    CHECK(mse_loss(t, t).value().item() == 0.0);
    CHECK(mse_loss(g.constant(Tensor::from({0, 0})), g.constant(Tensor::from({1, 1}))).value().item() == 1.0);
    CHECK(mse_loss(t, g.constant(Tensor::from({2, 4, 3}))).value().item() == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(mse_loss(t, g.constant(Tensor::from({1, 2}))), DimensionError);
  }

  TEST_CASE("poisson_nll") {
    Graph g;
    auto nll = [&](double lam, double y) {
      return poisson_nll(g.constant(Tensor::scalar(lam)), g.constant(Tensor::scalar(y))).value().item();
    };
    CHECK(nll(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(nll(1, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(nll(2, 2) - (2.0 - 2.0 * std::log(2.0))) < 1e-6);
    CHECK_THROWS_AS(nll(0, 1), DomainError);
    CHECK_THROWS_AS(nll(-1, 1), DomainError);
    const double clamped = poisson_nll(g.constant(Tensor::scalar(0)), g.constant(Tensor::scalar(1)),
                                       PoissonOptions{true, 1e-8})
                               .value()
                               .item();
    CHECK(clamped == doctest::Approx(1e-8 - std::log(1e-8)));

    // Minimised at lambda = y on a grid.
    for (double y : {0.5, 1.0, 3.0, 7.0}) {
      double best = 1e300, arg = 0.0;
      for (int i = 1; i <= 2000; ++i) {
        const double lam = 0.01 * i;
        const double v = nll(lam, y);
        if (v < best) best = v, arg = lam;
      }
      CHECK(arg == doctest::Approx(y).epsilon(1e-9));
    }
  }

  TEST_CASE("kl_diag_gaussian") {
    Graph g;
    auto kl = [&](Tensor mu, Tensor lv) { return kl_diag_gaussian(g.constant(mu), g.constant(lv)).value().item(); };
    CHECK(kl(Tensor({4}), Tensor({4})) == 0.0);
    CHECK(std::abs(kl(Tensor::from({1}), Tensor::from({0})) - 0.5) < 1e-6);
    CHECK(std::abs(kl(Tensor::from({0}), Tensor::from({std::log(4.0)})) - 0.5 * (4.0 - 1.0 - std::log(4.0))) < 1e-6);
    // Rank-2 batches average the per-row KL.
    CHECK(kl(Tensor::from({2, 1}, {1, 0}), Tensor({2, 1})) == doctest::Approx(0.25));

    RandomStream rng(11);
    for (int i = 0; i < 200; ++i) {
      Tensor mu = rng.normal_tensor({5}, 2.0), lv = rng.normal_tensor({5}, 2.0);
      CHECK(kl(mu, lv) > 0.0);
    }
  }

  TEST_CASE("reparameterize") {
    Graph g;
    RandomStream rng(1);
    Tensor mu = Tensor::from({0.3, -1.2, 2.0});
    Tensor z = reparameterize(g.constant(mu), g.constant(Tensor({3}, -80.0)), rng).value();
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(z[i] - mu[i]) < 1e-6);

    const std::size_t n = 100000;
    RandomStream rs(2);
    Tensor big = reparameterize(g.constant(Tensor({n})), g.constant(Tensor({n})), rs).value();
    const double mean = big.mean();
    double var = 0.0;
    for (double v : big.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);

    RandomStream a(42), b(42);
    CHECK(reparameterize(g.constant(mu), g.constant(Tensor({3})), a).value() ==
          reparameterize(g.constant(mu), g.constant(Tensor({3})), b).value());
  }

  TEST_CASE("shape ops") {
    Graph g;
    Tensor x = ramp({2, 3, 4});
    Tensor p = permute(g.constant(x), {2, 0, 1}).value();
    CHECK(p.shape() == Shape{4, 2, 3});
    CHECK(p.at({3, 1, 2}) == x.at({1, 2, 3}));
    Var parts[] = {g.constant(ramp({2, 1})), g.constant(Tensor({2, 2}, -1.0))};
    CHECK(concat(parts, 1).value() == Tensor::from({2, 3}, {0, -1, -1, 1, -1, -1}));
    CHECK(slice(g.constant(x), 2, 1, 3).value().shape() == Shape{2, 3, 2});
    CHECK(slice(g.constant(x), 2, 1, 3).value().at({1, 2, 0}) == x.at({1, 2, 1}));
    CHECK(repeat_interleave(g.constant(Tensor::from({2, 1}, {1, 2})), 2).value() == Tensor::from({4, 1}, {1, 1, 2, 2}));
    Tensor ph = phasor(g.constant(Tensor::from({0.0, 0.25}))).value();
    CHECK(ph[0] == doctest::Approx(1.0));
    CHECK(std::abs(ph[1]) < 1e-12);
    CHECK(ph[3] == doctest::Approx(1.0));
    CHECK(intensity_pairs(g.constant(Tensor::from({3, 4, 1, 1}))).value() == Tensor::from({25, 2}));
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("quadratic and disconnected") {
    Parameter p("p", Tensor::from({1, 2}));
    Parameter q("q", Tensor::from({5}));
    Graph g;
    auto pv = g.parameter(p);
    g.parameter(q);
    g.backward(sum(mul(pv, pv)));
    CHECK(p.grad == Tensor::from({2, 4}));
    CHECK(q.grad == Tensor::from({0}));

    Graph h;
    h.parameter(p);
    h.backward(h.constant(Tensor::scalar(3.0)));
    CHECK(p.grad == Tensor::from({0, 0}));
  }

  TEST_CASE("non-scalar loss is rejected") {
    Parameter p("p", Tensor::from({1, 2}));
    Graph g;
    auto v = g.parameter(p);
    CHECK_THROWS_AS(g.backward(v), ContractError);
  }

  TEST_CASE("topological order") {
    Parameter p("p", Tensor::from({1, 2}));
    Graph g;
    auto a = g.parameter(p);
    auto b = relu(scale(a, 2.0));
    sum(add(a, b));
    for (NodeId id = 0; id < g.size(); ++id)
      for (NodeId in : g.inputs(id)) CHECK(in < id);
  }

  TEST_CASE("parameter reused twice accumulates") {
    Parameter p("p", Tensor::from({3}));
    Graph g;
    auto a = g.parameter(p);
    auto b = g.parameter(p);
    g.backward(sum(mul(a, b)));
    CHECK(p.grad == Tensor::from({6}));
  }
}

TEST_SUITE("adam") {
  TEST_CASE("first step size") {
    Tensor param = Tensor::scalar(0.5);
    AdamState st(param.shape());
    adam_step(param, Tensor::scalar(1.0), st, AdamConfig{});
    CHECK(param.item() - 0.5 == doctest::Approx(-1e-4).epsilon(1e-6));
    CHECK(st.step_count == 1);
  }

  TEST_CASE("zero gradient leaves the parameter") {
    Tensor param = Tensor::from({0.1, -0.2});
    AdamState st(param.shape());
    adam_step(param, Tensor({2}), st, AdamConfig{});
    CHECK(param == Tensor::from({0.1, -0.2}));
  }

  TEST_CASE("identical inputs give identical trajectories") {
    Tensor a = Tensor::scalar(1.0), b = Tensor::scalar(1.0);
    AdamState sa(a.shape()), sb(b.shape());
    for (int i = 0; i < 50; ++i) {
      adam_step(a, Tensor::scalar(2.0 * a.item()), sa, AdamConfig{1e-2});
      adam_step(b, Tensor::scalar(2.0 * b.item()), sb, AdamConfig{1e-2});
    }
    CHECK(a == b);
    CHECK(sa.step_count == 50);
    CHECK(a.item() < 1.0);
  }

  TEST_CASE("shape mismatch") {
    Tensor param({2});
    AdamState st(param.shape());
    CHECK_THROWS_AS(adam_step(param, Tensor({3}), st, AdamConfig{}), DimensionError);
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("sum of squares") {
    ParameterSet ps;
    ps.add("p", Tensor::from({0.3, -1.7, 2.2, 4.0}));
    auto rep = finite_difference_check(
        "sum_sq", [](Graph& g, ParameterSet& s) { auto v = g.parameter(s[0]); return sum(mul(v, v)); }, ps, 1e-4, 1e-5);
    CHECK(rep.pass);
    CHECK(rep.coordinates == 4);
  }

  TEST_CASE("broken rule is detected") {
    ParameterSet ps;
    ps.add("p", Tensor::from({0.3, -1.7}));
    inject_backward_fault(OpKind::Mul);
    auto rep = finite_difference_check(
        "sum_sq", [](Graph& g, ParameterSet& s) { auto v = g.parameter(s[0]); return sum(mul(v, v)); }, ps);
    inject_backward_fault(std::nullopt);
    CHECK_FALSE(rep.pass);
  }
}

#include "physctl/gradcheck_suite.hpp"

TEST_CASE("gradcheck suite passes on every registered check") {
  auto rows = run_gradcheck_suite(0, 3);
  CHECK(rows.size() == gradcheck_names().size());
  for (const auto& r : rows) {
    INFO(r.name << " max rel error " << r.max_rel_error);
    CHECK(r.pass);
  }
}

TEST_CASE("each injected backward fault is caught by its own row") {
  for (int k = static_cast<int>(OpKind::MatMul); k <= static_cast<int>(OpKind::Mean); ++k) {
    const auto kind = static_cast<OpKind>(k);
    inject_backward_fault(kind);
    auto rows = run_gradcheck_suite(4, 1);
    inject_backward_fault(std::nullopt);
    bool caught = false;
    for (const auto& r : rows)
      if (r.name == op_name(kind)) caught = !r.pass;
    INFO(op_name(kind));
    CHECK(caught);
  }
}
