#include "hfc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hfc {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

Graph& common_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw std::logic_error("operands belong to different computation records");
  return a.graph();
}

// C += op(A) * op(B) for row-major operands. Each output row depends only on
// the matching row of op(A), so results do not depend on how many rows are
// batched together.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// B is [n, k].
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// A is [k, m].
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct AxisLayout {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisLayout layout(const Shape& shape, std::size_t axis) {
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

void require_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
}

}  // namespace

Var matmul(Var a, Var b, bool transpose_b) {
  Graph& g = common_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) shape_mismatch("matmul", av.shape(), bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1);
  const std::size_t n = transpose_b ? bv.dim(0) : bv.dim(1);
  const std::size_t bk = transpose_b ? bv.dim(1) : bv.dim(0);
  if (k != bk) shape_mismatch("matmul", av.shape(), bv.shape());
  Tensor out(Shape{m, n});
  if (transpose_b) {
    gemm_nt(m, n, k, av.data().data(), bv.data().data(), out.data().data());
  } else {
    gemm_nn(m, n, k, av.data().data(), bv.data().data(), out.data().data());
  }
  const std::size_t ia = a.id(), ib = b.id();
  return g.emplace("matmul", std::move(out), {a, b}, [=](Graph& gr, const Tensor& go) {
    const Tensor& A = gr.value(ia);
    const Tensor& B = gr.value(ib);
    if (gr.requires_grad(ia)) {
      double* da = gr.grad_buffer(ia).data().data();
      if (transpose_b) {
        gemm_nn(m, k, n, go.data().data(), B.data().data(), da);
      } else {
        gemm_nt(m, k, n, go.data().data(), B.data().data(), da);
      }
    }
    if (gr.requires_grad(ib)) {
      double* db = gr.grad_buffer(ib).data().data();
      if (transpose_b) {
        gemm_tn(n, k, m, go.data().data(), A.data().data(), db);
      } else {
        gemm_tn(k, n, m, A.data().data(), go.data().data(), db);
      }
    }
  });
}

Var bmm(Var a, Var b, bool transpose_b) {
  Graph& g = common_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0)) shape_mismatch("bmm", av.shape(), bv.shape());
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2);
  const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
  const std::size_t bk = transpose_b ? bv.dim(2) : bv.dim(1);
  if (k != bk) shape_mismatch("bmm", av.shape(), bv.shape());
  Tensor out(Shape{batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    const double* ap = av.data().data() + s * m * k;
    const double* bp = bv.data().data() + s * k * n;
    double* cp = out.data().data() + s * m * n;
    if (transpose_b) {
      gemm_nt(m, n, k, ap, bp, cp);
    } else {
      gemm_nn(m, n, k, ap, bp, cp);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return g.emplace("bmm", std::move(out), {a, b}, [=](Graph& gr, const Tensor& go) {
    const Tensor& A = gr.value(ia);
    const Tensor& B = gr.value(ib);
    const bool need_a = gr.requires_grad(ia);
    const bool need_b = gr.requires_grad(ib);
    double* da = need_a ? gr.grad_buffer(ia).data().data() : nullptr;
    double* db = need_b ? gr.grad_buffer(ib).data().data() : nullptr;
    for (std::size_t s = 0; s < batch; ++s) {
      const double* gp = go.data().data() + s * m * n;
      const double* ap = A.data().data() + s * m * k;
      const double* bp = B.data().data() + s * k * n;
      if (need_a) {
        if (transpose_b) {
          gemm_nn(m, k, n, gp, bp, da + s * m * k);
        } else {
          gemm_nt(m, k, n, gp, bp, da + s * m * k);
        }
      }
      if (need_b) {
        if (transpose_b) {
          gemm_tn(n, k, m, gp, ap, db + s * k * n);
        } else {
          gemm_tn(k, n, m, ap, gp, db + s * k * n);
        }
      }
    }
  });
}

namespace {

enum class BinaryKind { add, sub, mul, div };

Var elementwise(const char* op, BinaryKind kind, Var a, Var b) {
  Graph& g = common_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_mismatch(op, av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (kind) {
      case BinaryKind::add: out[i] = av[i] + bv[i]; break;
      case BinaryKind::sub: out[i] = av[i] - bv[i]; break;
      case BinaryKind::mul: out[i] = av[i] * bv[i]; break;
      case BinaryKind::div: out[i] = av[i] / bv[i]; break;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return g.emplace(op, std::move(out), {a, b}, [=](Graph& gr, const Tensor& go) {
    const Tensor& A = gr.value(ia);
    const Tensor& B = gr.value(ib);
    if (gr.requires_grad(ia)) {
      auto da = gr.grad_buffer(ia).data();
      for (std::size_t i = 0; i < da.size(); ++i) {
        switch (kind) {
          case BinaryKind::add:
          case BinaryKind::sub: da[i] += go[i]; break;
          case BinaryKind::mul: da[i] += go[i] * B[i]; break;
          case BinaryKind::div: da[i] += go[i] / B[i]; break;
        }
      }
    }
    if (gr.requires_grad(ib)) {
      auto db = gr.grad_buffer(ib).data();
      for (std::size_t i = 0; i < db.size(); ++i) {
        switch (kind) {
          case BinaryKind::add: db[i] += go[i]; break;
          case BinaryKind::sub: db[i] -= go[i]; break;
          case BinaryKind::mul: db[i] += go[i] * A[i]; break;
          case BinaryKind::div: db[i] -= go[i] * A[i] / (B[i] * B[i]); break;
        }
      }
    }
  });
}

// Elementwise map with derivative computed from input and output values.
template <typename Fwd, typename Deriv>
Var map(const char* op, Var x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t ix = x.id();
  Graph& g = x.graph();
  const std::size_t iy = g.size();
  return g.emplace(op, std::move(out), {x}, [=](Graph& gr, const Tensor& go) {
    const Tensor& X = gr.value(ix);
    const Tensor& Y = gr.value(iy);
    auto dx = gr.grad_buffer(ix).data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go[i] * deriv(X[i], Y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) { return elementwise("add", BinaryKind::add, a, b); }
Var sub(Var a, Var b) { return elementwise("sub", BinaryKind::sub, a, b); }
Var mul(Var a, Var b) { return elementwise("mul", BinaryKind::mul, a, b); }
Var div(Var a, Var b) { return elementwise("div", BinaryKind::div, a, b); }

Var add_broadcast(Var x, Var y) {
  Graph& g = common_graph(x, y);
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  if (yv.rank() > xv.rank() || !std::equal(yv.shape().rbegin(), yv.shape().rend(), xv.shape().rbegin())) {
    shape_mismatch("add_broadcast", xv.shape(), yv.shape());
  }
  const std::size_t inner = yv.size();
  const std::size_t outer = inner ? xv.size() / inner : 0;
  Tensor out = xv;
  for (std::size_t o = 0; o < outer; ++o) {
    double* row = out.data().data() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) row[i] += yv[i];
  }
  const std::size_t ix = x.id(), iy = y.id();
  return g.emplace("add_broadcast", std::move(out), {x, y}, [=](Graph& gr, const Tensor& go) {
    if (gr.requires_grad(ix)) gr.accumulate(ix, go);
    if (gr.requires_grad(iy)) {
      auto dy = gr.grad_buffer(iy).data();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* row = go.data().data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dy[i] += row[i];
      }
    }
  });
}

Var broadcast_to(Var y, std::size_t count) {
  const Tensor& yv = y.value();
  Shape shape{count};
  shape.insert(shape.end(), yv.shape().begin(), yv.shape().end());
  Tensor out(shape);
  const std::size_t inner = yv.size();
  for (std::size_t o = 0; o < count; ++o) std::copy(yv.data().begin(), yv.data().end(), out.data().begin() + o * inner);
  const std::size_t iy = y.id();
  return y.graph().emplace("broadcast_to", std::move(out), {y}, [=](Graph& gr, const Tensor& go) {
    auto dy = gr.grad_buffer(iy).data();
    for (std::size_t o = 0; o < count; ++o) {
      const double* row = go.data().data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dy[i] += row[i];
    }
  });
}

Var scale(Var x, double factor) {
  return map("scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double value) {
  return map("add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Var log(Var x) {
  return map(
      "log", x, [](double v) { return std::log(std::max(v, kLogFloor)); },
      [](double v, double) { return v > kLogFloor ? 1.0 / v : 0.0; });
}

Var exp(Var x) {
  return map("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var gelu(Var x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return map(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + a * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      });
}

Var pow_scalar(Var x, double exponent) {
  for (double v : x.value().data()) {
    if (v < 0.0) throw std::domain_error("pow_scalar: negative base " + std::to_string(v));
  }
  return map(
      "pow", x, [exponent](double v) { return exponent == 0.0 ? 1.0 : std::pow(v, exponent); },
      [exponent](double v, double) {
        if (exponent == 0.0 || v == 0.0) return exponent == 1.0 ? 1.0 : 0.0;
        return exponent * std::pow(v, exponent - 1.0);
      });
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  require_axis("softmax", xv.shape(), axis);
  for (double v : xv.data()) {
    if (!std::isfinite(v)) throw std::domain_error("softmax: non-finite input");
  }
  const AxisLayout l = layout(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.extent * l.inner + in;
      double peak = xv[base];
      for (std::size_t e = 1; e < l.extent; ++e) peak = std::max(peak, xv[base + e * l.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < l.extent; ++e) {
        const double v = std::exp(xv[base + e * l.inner] - peak);
        out[base + e * l.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < l.extent; ++e) out[base + e * l.inner] /= total;
    }
  }
  const std::size_t ix = x.id();
  Graph& g = x.graph();
  const std::size_t iy = g.size();
  return g.emplace("softmax", std::move(out), {x}, [=](Graph& gr, const Tensor& go) {
    const Tensor& Y = gr.value(iy);
    auto dx = gr.grad_buffer(ix).data();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.extent * l.inner + in;
        double dot = 0.0;
        for (std::size_t e = 0; e < l.extent; ++e) dot += go[base + e * l.inner] * Y[base + e * l.inner];
        for (std::size_t e = 0; e < l.extent; ++e) {
          const std::size_t i = base + e * l.inner;
          dx[i] += Y[i] * (go[i] - dot);
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = common_graph(x, gain);
  common_graph(x, bias);
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = xv.shape().back();
  if (d == 0) throw ShapeError("layer_norm: last extent is zero in " + to_string(xv.shape()));
  if (gain.value().shape() != Shape{d}) shape_mismatch("layer_norm", xv.shape(), gain.value().shape());
  if (bias.value().shape() != Shape{d}) shape_mismatch("layer_norm", xv.shape(), bias.value().shape());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  const std::size_t rows = xv.size() / d;
  Tensor out(xv.shape());
  std::vector<double> normalized(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double n = (xr[j] - mu) * is;
      normalized[r * d + j] = n;
      out[r * d + j] = n * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return g.emplace("layer_norm", std::move(out), {x, gain, bias},
                   [=, normalized = std::move(normalized), inv_std = std::move(inv_std)](Graph& gr, const Tensor& go) {
                     const Tensor& G = gr.value(ig);
                     if (gr.requires_grad(ig)) {
                       auto dg = gr.grad_buffer(ig).data();
                       for (std::size_t i = 0; i < go.size(); ++i) dg[i % d] += go[i] * normalized[i];
                     }
                     if (gr.requires_grad(ib)) {
                       auto db = gr.grad_buffer(ib).data();
                       for (std::size_t i = 0; i < go.size(); ++i) db[i % d] += go[i];
                     }
                     if (gr.requires_grad(ix)) {
                       auto dx = gr.grad_buffer(ix).data();
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dn = 0.0, mean_dn_n = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dn = go[r * d + j] * G[j];
                           mean_dn += dn;
                           mean_dn_n += dn * normalized[r * d + j];
                         }
                         mean_dn *= inv_d;
                         mean_dn_n *= inv_d;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double dn = go[r * d + j] * G[j];
                           dx[r * d + j] += inv_std[r] * (dn - mean_dn - normalized[r * d + j] * mean_dn_n);
                         }
                       }
                     }
                   });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Graph& g = parts.front().graph();
  const Shape& first = parts.front().value().shape();
  require_axis("concat", first, axis);
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    common_graph(parts.front(), p);
    const Shape& s = p.value().shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) shape_mismatch("concat", first, s);
    extents.push_back(s[axis]);
    shape[axis] += s[axis];
  }
  const AxisLayout l = layout(shape, axis);
  Tensor out(shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    const std::size_t chunk = extents[k] * l.inner;
    for (std::size_t o = 0; o < l.outer; ++o) {
      std::copy_n(pv.data().begin() + o * chunk, chunk, out.data().begin() + o * l.extent * l.inner + offset * l.inner);
    }
    offset += extents[k];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return g.emplace("concat", std::move(out), parts, [=](Graph& gr, const Tensor& go) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t chunk = extents[k] * l.inner;
      if (gr.requires_grad(ids[k])) {
        auto dp = gr.grad_buffer(ids[k]).data();
        for (std::size_t o = 0; o < l.outer; ++o) {
          const double* src = go.data().data() + o * l.extent * l.inner + off * l.inner;
          for (std::size_t i = 0; i < chunk; ++i) dp[o * chunk + i] += src[i];
        }
      }
      off += extents[k];
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t offset, std::size_t length) {
  const Tensor& xv = x.value();
  require_axis("slice", xv.shape(), axis);
  if (offset + length > xv.dim(axis) || length == 0) {
    throw ShapeError("slice: [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                     ") outside axis " + std::to_string(axis) + " of " + to_string(xv.shape()));
  }
  const AxisLayout l = layout(xv.shape(), axis);
  Shape shape = xv.shape();
  shape[axis] = length;
  Tensor out(shape);
  const std::size_t chunk = length * l.inner;
  for (std::size_t o = 0; o < l.outer; ++o) {
    std::copy_n(xv.data().begin() + o * l.extent * l.inner + offset * l.inner, chunk, out.data().begin() + o * chunk);
  }
  const std::size_t ix = x.id();
  return x.graph().emplace("slice", std::move(out), {x}, [=](Graph& gr, const Tensor& go) {
    auto dx = gr.grad_buffer(ix).data();
    for (std::size_t o = 0; o < l.outer; ++o) {
      double* dst = dx.data() + o * l.extent * l.inner + offset * l.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += go[o * chunk + i];
    }
  });
}

std::vector<Var> split(Var x, std::size_t axis, std::span<const std::size_t> sizes) {
  require_axis("split", x.value().shape(), axis);
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (total != x.value().dim(axis)) {
    throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis " + std::to_string(axis) + " of " +
                     to_string(x.value().shape()) + " differs");
  }
  std::vector<Var> out;
  std::size_t offset = 0;
  for (std::size_t s : sizes) {
    out.push_back(slice(x, axis, offset, s));
    offset += s;
  }
  return out;
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.graph().emplace("reshape", std::move(out), {x}, [=](Graph& gr, const Tensor& go) {
    auto dx = gr.grad_buffer(ix).data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go[i];
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const std::size_t ix = x.id();
  return x.graph().emplace("sum", Tensor::scalar(total), {x}, [=](Graph& gr, const Tensor& go) {
    const double s = go[0];
    for (double& v : gr.grad_buffer(ix).data()) v += s;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const std::size_t ix = x.id();
  return x.graph().emplace("mean", Tensor::scalar(total / static_cast<double>(n)), {x},
                           [=](Graph& gr, const Tensor& go) {
                             const double s = go[0] / static_cast<double>(n);
                             for (double& v : gr.grad_buffer(ix).data()) v += s;
                           });
}

Var sum_axis(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  require_axis("sum_axis", xv.shape(), axis);
  const AxisLayout l = layout(xv.shape(), axis);
  Shape shape = xv.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(shape);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t e = 0; e < l.extent; ++e) {
      for (std::size_t in = 0; in < l.inner; ++in) out[o * l.inner + in] += xv[(o * l.extent + e) * l.inner + in];
    }
  }
  const std::size_t ix = x.id();
  return x.graph().emplace("sum_axis", std::move(out), {x}, [=](Graph& gr, const Tensor& go) {
    auto dx = gr.grad_buffer(ix).data();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t e = 0; e < l.extent; ++e) {
        for (std::size_t in = 0; in < l.inner; ++in) dx[(o * l.extent + e) * l.inner + in] += go[o * l.inner + in];
      }
    }
  });
}

Var pick(Var x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.dim(0) != index.size()) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for shape " + to_string(xv.shape()));
  }
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= cols) {
      throw std::out_of_range("pick: index " + std::to_string(idx[r]) + " >= " + std::to_string(cols));
    }
    out[r] = xv[r * cols + idx[r]];
  }
  const std::size_t ix = x.id();
  return x.graph().emplace("pick", std::move(out), {x}, [=, idx = std::move(idx)](Graph& gr, const Tensor& go) {
    auto dx = gr.grad_buffer(ix).data();
    for (std::size_t r = 0; r < rows; ++r) dx[r * cols + idx[r]] += go[r];
  });
}

Var detach(Var x) { return x.graph().constant(x.value()); }

Var linear(Var x, Var weight) {
  const Shape& xs = x.value().shape();
  const Shape& ws = weight.value().shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) shape_mismatch("linear", xs, ws);
  const std::size_t in = ws[0], out = ws[1];
  const std::size_t rows = x.value().size() / in;
  Var flat = xs.size() == 2 ? x : reshape(x, Shape{rows, in});
  Var y = matmul(flat, weight);
  if (xs.size() == 2) return y;
  Shape out_shape = xs;
  out_shape.back() = out;
  return reshape(y, std::move(out_shape));
}

Var linear(Var x, Var weight, Var bias) { return add_broadcast(linear(x, weight), bias); }

}  // namespace hfc
