#include "physctl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "physctl/error.hpp"

namespace physctl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Graph& same_graph(Var a, Var b) {
  if (!a.graph || a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return *a.graph;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

// Leading extents collapsed into a plane count, last two axes kept.
struct Planes {
  std::size_t count, h, w;
};

Planes planes_of(const Tensor& t, const char* op) {
  if (t.rank() < 2) throw DimensionError(std::string(op) + ": needs rank >= 2, got " + shape_str(t.shape()));
  const std::size_t h = t.extent(t.rank() - 2);
  const std::size_t w = t.extent(t.rank() - 1);
  return {t.size() / (h * w), h, w};
}

Shape with_spatial(const Shape& s, std::size_t h, std::size_t w) {
  Shape out = s;
  out[out.size() - 2] = h;
  out[out.size() - 1] = w;
  return out;
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size() - 1; i-- > 0;) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Var unary(OpKind kind, Var x, F f, D df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const NodeId xi = x.id;
  return x.graph->record(kind, std::move(out), {xi}, [xi, df](const Tensor& g, Graph& graph, NodeId self) {
    const Tensor& in = graph.value(xi);
    const Tensor& y = graph.value(self);
    Tensor& dx = graph.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df(in[i], y[i]);
  });
}

Var scalar_node(Graph& graph, OpKind kind, double value, std::vector<NodeId> inputs, Graph::BackwardFn fn) {
  return graph.record(kind, Tensor::scalar(value), std::move(inputs), std::move(fn));
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& graph = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  const std::size_t r = av.extent(0), k = av.extent(1), c = bv.extent(1);
  Tensor out({r, c});
  MapMat(out.raw(), r, c).noalias() = ConstMapMat(av.raw(), r, k) * ConstMapMat(bv.raw(), k, c);
  const NodeId ai = a.id, bi = b.id;
  return graph.record(OpKind::MatMul, std::move(out), {ai, bi}, [ai, bi, r, k, c](const Tensor& g, Graph& gr, NodeId) {
    ConstMapMat dc(g.raw(), r, c);
    if (gr.requires_grad(ai)) {
      Tensor& da = gr.grad_buffer(ai);
      MapMat(da.raw(), r, k).noalias() += dc * ConstMapMat(gr.value(bi).raw(), k, c).transpose();
    }
    if (gr.requires_grad(bi)) {
      Tensor& db = gr.grad_buffer(bi);
      MapMat(db.raw(), k, c).noalias() += ConstMapMat(gr.value(ai).raw(), r, k).transpose() * dc;
    }
  });
}

Var add(Var a, Var b) {
  Graph& graph = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  const NodeId ai = a.id, bi = b.id;
  return graph.record(OpKind::Add, std::move(out), {ai, bi}, [ai, bi](const Tensor& g, Graph& gr, NodeId) {
    gr.accumulate(ai, g);
    gr.accumulate(bi, g);
  });
}

Var sub(Var a, Var b) {
  Graph& graph = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out -= b.value();
  const NodeId ai = a.id, bi = b.id;
  return graph.record(OpKind::Sub, std::move(out), {ai, bi}, [ai, bi](const Tensor& g, Graph& gr, NodeId) {
    gr.accumulate(ai, g);
    if (gr.requires_grad(bi)) gr.grad_buffer(bi) -= g;
  });
}

Var mul(Var a, Var b) {
  Graph& graph = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const NodeId ai = a.id, bi = b.id;
  return graph.record(OpKind::Mul, std::move(out), {ai, bi}, [ai, bi](const Tensor& g, Graph& gr, NodeId) {
    const Tensor& av = gr.value(ai);
    const Tensor& bv = gr.value(bi);
    if (gr.requires_grad(ai)) {
      Tensor& da = gr.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (gr.requires_grad(bi)) {
      Tensor& db = gr.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  out *= s;
  const NodeId ai = a.id;
  return a.graph->record(OpKind::Scale, std::move(out), {ai}, [ai, s](const Tensor& g, Graph& gr, NodeId) {
    Tensor& da = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += s * g[i];
  });
}

Var add_bias(Var x, Var bias) {
  Graph& graph = same_graph(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_rank(bv, 1, "add_bias");
  const std::size_t axis = xv.rank() == 1 ? 0 : (xv.rank() == 3 ? 0 : 1);
  if (xv.extent(axis) != bv.size())
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " does not match " + shape_str(xv.shape()));
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.extent(i);
  const std::size_t c = bv.size();
  const std::size_t outer = xv.size() / (c * inner);
  Tensor out = xv;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < c; ++j) {
      double* p = out.raw() + (o * c + j) * inner;
      for (std::size_t q = 0; q < inner; ++q) p[q] += bv[j];
    }
  const NodeId xi = x.id, bi = bias.id;
  return graph.record(OpKind::AddBias, std::move(out), {xi, bi},
                      [xi, bi, outer, c, inner](const Tensor& g, Graph& gr, NodeId) {
                        gr.accumulate(xi, g);
                        if (!gr.requires_grad(bi)) return;
                        Tensor& db = gr.grad_buffer(bi);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t j = 0; j < c; ++j) {
                            const double* p = g.raw() + (o * c + j) * inner;
                            double acc = 0.0;
                            for (std::size_t q = 0; q < inner; ++q) acc += p[q];
                            db[j] += acc;
                          }
                      });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, pad_top, pad_left, out_h, out_w;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t columns() const { return n * out_h * out_w; }
};

void im2col(const double* in, const ConvGeometry& g, double* cols) {
  const std::size_t np = g.columns();
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* dst = cols + ((c * g.kh + ki) * g.kw + kj) * np;
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* src = in + (n * g.c + c) * g.h * g.w;
          for (std::size_t oi = 0; oi < g.out_h; ++oi) {
            double* d = dst + n * plane + oi * g.out_w;
            const long long ii = static_cast<long long>(oi * g.stride + ki) - static_cast<long long>(g.pad_top);
            if (ii < 0 || ii >= static_cast<long long>(g.h)) {
              std::fill(d, d + g.out_w, 0.0);
              continue;
            }
            const double* srow = src + static_cast<std::size_t>(ii) * g.w;
            for (std::size_t oj = 0; oj < g.out_w; ++oj) {
              const long long jj = static_cast<long long>(oj * g.stride + kj) - static_cast<long long>(g.pad_left);
              d[oj] = (jj < 0 || jj >= static_cast<long long>(g.w)) ? 0.0 : srow[jj];
            }
          }
        }
      }
}

void col2im(const double* cols, const ConvGeometry& g, double* in_grad) {
  const std::size_t np = g.columns();
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* src = cols + ((c * g.kh + ki) * g.kw + kj) * np;
        for (std::size_t n = 0; n < g.n; ++n) {
          double* dst = in_grad + (n * g.c + c) * g.h * g.w;
          for (std::size_t oi = 0; oi < g.out_h; ++oi) {
            const long long ii = static_cast<long long>(oi * g.stride + ki) - static_cast<long long>(g.pad_top);
            if (ii < 0 || ii >= static_cast<long long>(g.h)) continue;
            const double* s = src + n * plane + oi * g.out_w;
            double* drow = dst + static_cast<std::size_t>(ii) * g.w;
            for (std::size_t oj = 0; oj < g.out_w; ++oj) {
              const long long jj = static_cast<long long>(oj * g.stride + kj) - static_cast<long long>(g.pad_left);
              if (jj >= 0 && jj < static_cast<long long>(g.w)) drow[jj] += s[oj];
            }
          }
        }
      }
}

}  // namespace

Var conv2d(Var input, Var kernels, std::size_t stride, Padding padding) {
  Graph& graph = same_graph(input, kernels);
  const Tensor& xv = input.value();
  const Tensor& kv = kernels.value();
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  require_rank(kv, 4, "conv2d kernels");
  if (xv.rank() != 3 && xv.rank() != 4)
    throw DimensionError("conv2d: input must be [C x H x W] or [N x C x H x W], got " + shape_str(xv.shape()));
  const bool batched = xv.rank() == 4;
  ConvGeometry g{};
  g.n = batched ? xv.extent(0) : 1;
  g.c = xv.extent(batched ? 1 : 0);
  g.h = xv.extent(batched ? 2 : 1);
  g.w = xv.extent(batched ? 3 : 2);
  g.o = kv.extent(0);
  g.kh = kv.extent(2);
  g.kw = kv.extent(3);
  g.stride = stride;
  if (kv.extent(1) != g.c)
    throw DimensionError("conv2d: kernel channels " + shape_str(kv.shape()) + " do not match input " +
                         shape_str(xv.shape()));
  if (padding == Padding::Same) {
    g.out_h = (g.h + stride - 1) / stride;
    g.out_w = (g.w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + g.kh;
    const std::size_t need_w = (g.out_w - 1) * stride + g.kw;
    g.pad_top = need_h > g.h ? (need_h - g.h) / 2 : 0;
    g.pad_left = need_w > g.w ? (need_w - g.w) / 2 : 0;
    const std::size_t padded_h = std::max(need_h, g.h), padded_w = std::max(need_w, g.w);
    if (g.kh > padded_h || g.kw > padded_w)
      throw DimensionError("conv2d: kernel larger than padded input");
  } else {
    if (g.kh > g.h || g.kw > g.w)
      throw DimensionError("conv2d: kernel " + shape_str(kv.shape()) + " larger than input " + shape_str(xv.shape()));
    g.out_h = (g.h - g.kh) / stride + 1;
    g.out_w = (g.w - g.kw) / stride + 1;
  }
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<double> cols(g.patch() * g.columns());
  im2col(xv.raw(), g, cols.data());
  RowMat prod = ConstMapMat(kv.raw(), g.o, g.patch()) * ConstMapMat(cols.data(), g.patch(), g.columns());
  Shape out_shape = batched ? Shape{g.n, g.o, g.out_h, g.out_w} : Shape{g.o, g.out_h, g.out_w};
  Tensor out(out_shape);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t o = 0; o < g.o; ++o)
      std::copy_n(prod.data() + o * g.columns() + n * plane, plane, out.raw() + (n * g.o + o) * plane);
  const NodeId xi = input.id, ki = kernels.id;
  return graph.record(OpKind::Conv2d, std::move(out), {xi, ki}, [xi, ki, g](const Tensor& grad, Graph& gr, NodeId) {
    const std::size_t plane = g.out_h * g.out_w;
    RowMat dmat(g.o, g.columns());
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t o = 0; o < g.o; ++o)
        std::copy_n(grad.raw() + (n * g.o + o) * plane, plane, dmat.data() + o * g.columns() + n * plane);
    std::vector<double> cols(g.patch() * g.columns());
    im2col(gr.value(xi).raw(), g, cols.data());
    if (gr.requires_grad(ki)) {
      Tensor& dk = gr.grad_buffer(ki);
      MapMat(dk.raw(), g.o, g.patch()).noalias() += dmat * ConstMapMat(cols.data(), g.patch(), g.columns()).transpose();
    }
    if (gr.requires_grad(xi)) {
      ConstMapMat kmat(gr.value(ki).raw(), g.o, g.patch());
      MapMat(cols.data(), g.patch(), g.columns()).noalias() = kmat.transpose() * dmat;
      col2im(cols.data(), g, gr.grad_buffer(xi).raw());
    }
  });
}

Var maxpool2x2(Var input) {
  const Tensor& xv = input.value();
  const Planes p = planes_of(xv, "maxpool2x2");
  const std::size_t oh = (p.h + 1) / 2, ow = (p.w + 1) / 2;
  Tensor out(with_spatial(xv.shape(), oh, ow));
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t k = 0; k < p.count; ++k) {
    const double* src = xv.raw() + k * p.h * p.w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * p.w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t r = 2 * i + di, c = 2 * j + dj;
            if (r >= p.h || c >= p.w) continue;
            if (src[r * p.w + c] > src[best]) best = r * p.w + c;
          }
        const std::size_t o = (k * oh + i) * ow + j;
        out[o] = src[best];
        argmax[o] = k * p.h * p.w + best;
      }
  }
  const NodeId xi = input.id;
  return input.graph->record(OpKind::MaxPool2x2, std::move(out), {xi},
                             [xi, argmax = std::move(argmax)](const Tensor& g, Graph& gr, NodeId) {
                               Tensor& dx = gr.grad_buffer(xi);
                               for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
                             });
}

Var upsample2x2(Var input) {
  const Tensor& xv = input.value();
  const Planes p = planes_of(xv, "upsample2x2");
  const std::size_t oh = 2 * p.h, ow = 2 * p.w;
  Tensor out(with_spatial(xv.shape(), oh, ow));
  for (std::size_t k = 0; k < p.count; ++k)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) out[(k * oh + i) * ow + j] = xv[(k * p.h + i / 2) * p.w + j / 2];
  const NodeId xi = input.id;
  return input.graph->record(OpKind::Upsample2x2, std::move(out), {xi}, [xi, p](const Tensor& g, Graph& gr, NodeId) {
    Tensor& dx = gr.grad_buffer(xi);
    const std::size_t oh = 2 * p.h, ow = 2 * p.w;
    for (std::size_t k = 0; k < p.count; ++k)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) dx[(k * p.h + i / 2) * p.w + j / 2] += g[(k * oh + i) * ow + j];
  });
}

Var zero_pad4(Var input, std::size_t pad) {
  const Tensor& xv = input.value();
  const Planes p = planes_of(xv, "zero_pad4");
  const std::size_t oh = p.h + 2 * pad, ow = p.w + 2 * pad;
  Tensor out(with_spatial(xv.shape(), oh, ow));
  for (std::size_t k = 0; k < p.count; ++k)
    for (std::size_t i = 0; i < p.h; ++i)
      std::copy_n(xv.raw() + (k * p.h + i) * p.w, p.w, out.raw() + (k * oh + i + pad) * ow + pad);
  const NodeId xi = input.id;
  return input.graph->record(OpKind::ZeroPad4, std::move(out), {xi}, [xi, p, pad](const Tensor& g, Graph& gr, NodeId) {
    Tensor& dx = gr.grad_buffer(xi);
    const std::size_t oh = p.h + 2 * pad, ow = p.w + 2 * pad;
    for (std::size_t k = 0; k < p.count; ++k)
      for (std::size_t i = 0; i < p.h; ++i)
        for (std::size_t j = 0; j < p.w; ++j) dx[(k * p.h + i) * p.w + j] += g[(k * oh + i + pad) * ow + pad + j];
  });
}

Var activation(Var x, Activation kind) {
  switch (kind) {
    case Activation::Relu:
      return unary(
          OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
          [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
    case Activation::Sigmoid:
      return unary(
          OpKind::Sigmoid, x,
          [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
          },
          [](double, double y) { return y * (1.0 - y); });
    case Activation::Exponential:
      return unary(
          OpKind::Exponential, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
    case Activation::Identity:
      return unary(
          OpKind::Identity, x, [](double v) { return v; }, [](double, double) { return 1.0; });
  }
  throw ContractError("unknown activation");
}

Var mse_loss(Var pred, Var target) {
  Graph& graph = same_graph(pred, target);
  const Tensor& pv = pred.value();
  const Tensor& tv = target.value();
  require_same_shape(pv, tv, "mse_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - tv[i];
    acc += d * d;
  }
  const double n = static_cast<double>(pv.size());
  const NodeId pi = pred.id, ti = target.id;
  return scalar_node(graph, OpKind::MseLoss, acc / n, {pi, ti}, [pi, ti, n](const Tensor& g, Graph& gr, NodeId) {
    const Tensor& p = gr.value(pi);
    const Tensor& t = gr.value(ti);
    const double s = 2.0 * g[0] / n;
    if (gr.requires_grad(pi)) {
      Tensor& dp = gr.grad_buffer(pi);
      for (std::size_t i = 0; i < p.size(); ++i) dp[i] += s * (p[i] - t[i]);
    }
    if (gr.requires_grad(ti)) {
      Tensor& dt = gr.grad_buffer(ti);
      for (std::size_t i = 0; i < p.size(); ++i) dt[i] -= s * (p[i] - t[i]);
    }
  });
}

Var poisson_nll(Var rate, Var counts, PoissonOptions options) {
  Graph& graph = same_graph(rate, counts);
  const Tensor& rv = rate.value();
  const Tensor& cv = counts.value();
  require_same_shape(rv, cv, "poisson_nll");
  double acc = 0.0;
  for (std::size_t i = 0; i < rv.size(); ++i) {
    double lam = rv[i];
    if (!(lam > 0.0)) {
      if (!options.clamp) throw DomainError("poisson_nll: non-positive rate " + std::to_string(lam));
    }
    if (options.clamp) lam = std::max(lam, options.floor);
    acc += lam - cv[i] * std::log(lam);
  }
  const double n = static_cast<double>(rv.size());
  const NodeId ri = rate.id, ci = counts.id;
  return scalar_node(graph, OpKind::PoissonNll, acc / n, {ri, ci},
                     [ri, ci, n, options](const Tensor& g, Graph& gr, NodeId) {
                       const Tensor& r = gr.value(ri);
                       const Tensor& c = gr.value(ci);
                       const double s = g[0] / n;
                       if (gr.requires_grad(ri)) {
                         Tensor& dr = gr.grad_buffer(ri);
                         for (std::size_t i = 0; i < r.size(); ++i) {
                           if (options.clamp && r[i] < options.floor) continue;
                           dr[i] += s * (1.0 - c[i] / r[i]);
                         }
                       }
                       if (gr.requires_grad(ci)) {
                         Tensor& dc = gr.grad_buffer(ci);
                         for (std::size_t i = 0; i < r.size(); ++i)
                           dc[i] -= s * std::log(options.clamp ? std::max(r[i], options.floor) : r[i]);
                       }
                     });
}

Var kl_diag_gaussian(Var mu, Var log_var) {
  Graph& graph = same_graph(mu, log_var);
  const Tensor& m = mu.value();
  const Tensor& lv = log_var.value();
  require_same_shape(m, lv, "kl_diag_gaussian");
  const double rows = m.rank() == 2 ? static_cast<double>(m.extent(0)) : 1.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) acc += m[i] * m[i] + std::exp(lv[i]) - 1.0 - lv[i];
  const NodeId mi = mu.id, li = log_var.id;
  return scalar_node(graph, OpKind::KlDiagGaussian, 0.5 * acc / rows, {mi, li},
                     [mi, li, rows](const Tensor& g, Graph& gr, NodeId) {
                       const Tensor& m = gr.value(mi);
                       const Tensor& lv = gr.value(li);
                       const double s = g[0] / rows;
                       if (gr.requires_grad(mi)) {
                         Tensor& dm = gr.grad_buffer(mi);
                         for (std::size_t i = 0; i < m.size(); ++i) dm[i] += s * m[i];
                       }
                       if (gr.requires_grad(li)) {
                         Tensor& dl = gr.grad_buffer(li);
                         for (std::size_t i = 0; i < m.size(); ++i) dl[i] += s * 0.5 * (std::exp(lv[i]) - 1.0);
                       }
                     });
}

Var reparameterize(Var mu, Var log_var, RandomStream& rng) {
  Graph& graph = same_graph(mu, log_var);
  const Tensor& m = mu.value();
  const Tensor& lv = log_var.value();
  require_same_shape(m, lv, "reparameterize");
  Tensor eps = rng.normal_tensor(m.shape());
  Tensor z(m.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = m[i] + std::exp(0.5 * lv[i]) * eps[i];
  const NodeId mi = mu.id, li = log_var.id;
  return graph.record(OpKind::Reparameterize, std::move(z), {mi, li},
                      [mi, li, eps = std::move(eps)](const Tensor& g, Graph& gr, NodeId) {
                        gr.accumulate(mi, g);
                        if (!gr.requires_grad(li)) return;
                        const Tensor& lv = gr.value(li);
                        Tensor& dl = gr.grad_buffer(li);
                        for (std::size_t i = 0; i < g.size(); ++i) dl[i] += g[i] * 0.5 * std::exp(0.5 * lv[i]) * eps[i];
                      });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Reshape, std::move(out), {xi}, [xi](const Tensor& g, Graph& gr, NodeId) {
    Tensor& dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

Var permute(Var x, std::vector<std::size_t> axes) {
  const Tensor& xv = x.value();
  const std::size_t rank = xv.rank();
  if (axes.size() != rank) throw DimensionError("permute: axis count does not match rank");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: invalid axis order");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = xv.extent(axes[i]);
  const auto in_strides = strides_of(xv.shape());
  // Source offset of each output element.
  std::vector<std::size_t> src(xv.size());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t o = 0; o < src.size(); ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_strides[axes[i]];
    src[o] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < src.size(); ++o) out[o] = xv[src[o]];
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Permute, std::move(out), {xi}, [xi, src = std::move(src)](const Tensor& g, Graph& gr, NodeId) {
    Tensor& dx = gr.grad_buffer(xi);
    for (std::size_t o = 0; o < g.size(); ++o) dx[src[o]] += g[o];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Graph& graph = *parts[0].graph;
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<NodeId> ids;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.graph != &graph) throw ContractError("concat operands belong to different graphs");
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i])
        throw DimensionError("concat: shapes " + shape_str(s0) + " and " + shape_str(s) + " disagree off-axis");
    out_shape[axis] += s[axis];
    ids.push_back(p.id);
    widths.push_back(s[axis] * inner);
  }
  const std::size_t total = out_shape[axis] * inner;
  Tensor out(out_shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.raw() + o * widths[k], widths[k], out.raw() + o * total + off);
    off += widths[k];
  }
  return graph.record(OpKind::Concat, std::move(out), ids, [ids, widths, outer, total](const Tensor& g, Graph& gr, NodeId) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.requires_grad(ids[k])) {
        Tensor& d = gr.grad_buffer(ids[k]);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t q = 0; q < widths[k]; ++q) d[o * widths[k] + q] += g[o * total + off + q];
      }
      off += widths[k];
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank() || begin >= end || end > xv.extent(axis))
    throw DimensionError("slice: bad range on " + shape_str(xv.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.extent(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.extent(i);
  Shape out_shape = xv.shape();
  out_shape[axis] = end - begin;
  const std::size_t in_w = xv.extent(axis) * inner, out_w = (end - begin) * inner, off = begin * inner;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xv.raw() + o * in_w + off, out_w, out.raw() + o * out_w);
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Slice, std::move(out), {xi}, [xi, outer, in_w, out_w, off](const Tensor& g, Graph& gr, NodeId) {
    Tensor& dx = gr.grad_buffer(xi);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t q = 0; q < out_w; ++q) dx[o * in_w + off + q] += g[o * out_w + q];
  });
}

Var repeat_interleave(Var x, std::size_t times) {
  const Tensor& xv = x.value();
  if (times == 0) throw DimensionError("repeat_interleave: times must be >= 1");
  const std::size_t lead = xv.extent(0), inner = xv.size() / lead;
  Shape out_shape = xv.shape();
  out_shape[0] = lead * times;
  Tensor out(out_shape);
  for (std::size_t i = 0; i < lead; ++i)
    for (std::size_t r = 0; r < times; ++r) std::copy_n(xv.raw() + i * inner, inner, out.raw() + (i * times + r) * inner);
  const NodeId xi = x.id;
  return x.graph->record(OpKind::RepeatInterleave, std::move(out), {xi}, [xi, lead, inner, times](const Tensor& g, Graph& gr, NodeId) {
    Tensor& dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < lead; ++i)
      for (std::size_t r = 0; r < times; ++r)
        for (std::size_t q = 0; q < inner; ++q) dx[i * inner + q] += g[(i * times + r) * inner + q];
  });
}

Var phasor(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.extent(xv.rank() - 1), outer = xv.size() / n;
  Shape out_shape = xv.shape();
  out_shape.back() = 2 * n;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = kTwoPi * xv[o * n + j];
      out[o * 2 * n + j] = std::cos(a);
      out[o * 2 * n + n + j] = std::sin(a);
    }
  const NodeId xi = x.id;
  return x.graph->record(OpKind::Phasor, std::move(out), {xi}, [xi, n, outer](const Tensor& g, Graph& gr, NodeId self) {
    const Tensor& y = gr.value(self);
    Tensor& dx = gr.grad_buffer(xi);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < n; ++j) {
        const double c = y[o * 2 * n + j], s = y[o * 2 * n + n + j];
        dx[o * n + j] += kTwoPi * (-s * g[o * 2 * n + j] + c * g[o * 2 * n + n + j]);
      }
  });
}

Var intensity_pairs(Var x) {
  const Tensor& xv = x.value();
  const std::size_t w = xv.extent(xv.rank() - 1);
  if (w % 2 != 0) throw DimensionError("intensity_pairs: last axis must be even, got " + shape_str(xv.shape()));
  Shape out_shape = xv.shape();
  out_shape.back() = w / 2;
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[2 * i] * xv[2 * i] + xv[2 * i + 1] * xv[2 * i + 1];
  const NodeId xi = x.id;
  return x.graph->record(OpKind::IntensityPairs, std::move(out), {xi}, [xi](const Tensor& g, Graph& gr, NodeId) {
    const Tensor& h = gr.value(xi);
    Tensor& dx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      dx[2 * i] += 2.0 * h[2 * i] * g[i];
      dx[2 * i + 1] += 2.0 * h[2 * i + 1] * g[i];
    }
  });
}

Var sum(Var x) {
  const NodeId xi = x.id;
  return scalar_node(*x.graph, OpKind::Sum, x.value().sum(), {xi}, [xi](const Tensor& g, Graph& gr, NodeId) {
    Tensor& dx = gr.grad_buffer(xi);
    for (auto& v : dx.data()) v += g[0];
  });
}

Var mean(Var x) {
  const NodeId xi = x.id;
  const double n = static_cast<double>(x.value().size());
  return scalar_node(*x.graph, OpKind::Mean, x.value().mean(), {xi}, [xi, n](const Tensor& g, Graph& gr, NodeId) {
    Tensor& dx = gr.grad_buffer(xi);
    for (auto& v : dx.data()) v += g[0] / n;
  });
}

}  // namespace physctl
