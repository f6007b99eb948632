#include "veto/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "veto/errors.hpp"

namespace veto {

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->grad = Tensor(node_->value.shape());
}

void Var::zero_grad() const {
  if (node_ && node_->requires_grad) {
    std::fill(node_->grad.vec().begin(), node_->grad.vec().end(), 0.0);
  }
}

void Tape::backward(Var& loss) {
  if (loss.value().numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

namespace {

bool any_grad(std::initializer_list<const Var*> vars) {
  for (const Var* v : vars) {
    if (v->requires_grad()) return true;
  }
  return false;
}

void require_rank(const Var& v, std::int64_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(v.shape()));
  }
}

// Extent split around an axis for axis-wise loops.
struct AxisView {
  std::int64_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, int axis, const char* op) {
  if (axis < 0) axis += static_cast<int>(shape.size());
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw ShapeError(std::string(op) + ": axis out of range for shape " + shape_str(shape));
  }
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  v.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

// y = f(x) elementwise with analytic df captured for the backward step.
template <typename F, typename DF>
Var unary_elementwise(Tape& tape, const Var& a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  Var c(std::move(out), a.requires_grad());
  if (c.requires_grad()) {
    tape.record([a, c, df]() mutable {
      const Tensor& x = a.value();
      for (std::int64_t i = 0; i < x.numel(); ++i) a.grad()[i] += c.grad()[i] * df(x[i]);
    });
  }
  return c;
}

}  // namespace

Var matmul(Tape& tape, const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::int64_t m = a.value().extent(0), k = a.value().extent(1);
  const std::int64_t k2 = b.value().extent(0), n = b.value().extent(1);
  if (k != k2) {
    throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out({m, n});
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* pc = out.data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t l = 0; l < k; ++l) {
      const double ail = pa[i * k + l];
      if (ail == 0.0) continue;
      const double* brow = pb + l * n;
      double* crow = pc + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }
  }
  Var c(std::move(out), any_grad({&a, &b}));
  if (c.requires_grad()) {
    tape.record([a, b, c, m, k, n]() mutable {
      const double* dc = c.grad().data();
      if (a.requires_grad()) {
        double* da = a.grad().data();
        const double* pb = b.value().data();
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t j = 0; j < n; ++j) {
            const double d = dc[i * n + j];
            if (d == 0.0) continue;
            const double* brow = pb + j;
            for (std::int64_t l = 0; l < k; ++l) da[i * k + l] += d * brow[l * n];
          }
        }
      }
      if (b.requires_grad()) {
        double* db = b.grad().data();
        const double* pa = a.value().data();
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            if (av == 0.0) continue;
            const double* dcrow = dc + i * n;
            double* dbrow = db + l * n;
            for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
          }
        }
      }
    });
  }
  return c;
}

Var transpose(Tape& tape, const Var& a) {
  require_rank(a, 2, "transpose");
  const std::int64_t r = a.value().extent(0), c = a.value().extent(1);
  Tensor out({c, r});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out.at2(j, i) = a.value().at2(i, j);
  Var t(std::move(out), a.requires_grad());
  if (t.requires_grad()) {
    tape.record([a, t, r, c]() mutable {
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) a.grad().at2(i, j) += t.grad().at2(j, i);
    });
  }
  return t;
}

namespace {

Var binary_same_shape(Tape& tape, const Var& a, const Var& b, const char* op, double sign_b,
                      bool hadamard) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shapes disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out(a.value().shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    out[i] = hadamard ? a.value()[i] * b.value()[i] : a.value()[i] + sign_b * b.value()[i];
  }
  Var c(std::move(out), any_grad({&a, &b}));
  if (c.requires_grad()) {
    tape.record([a, b, c, sign_b, hadamard]() mutable {
      for (std::int64_t i = 0; i < c.grad().numel(); ++i) {
        const double d = c.grad()[i];
        if (hadamard) {
          if (a.requires_grad()) a.grad()[i] += d * b.value()[i];
          if (b.requires_grad()) b.grad()[i] += d * a.value()[i];
        } else {
          if (a.requires_grad()) a.grad()[i] += d;
          if (b.requires_grad()) b.grad()[i] += sign_b * d;
        }
      }
    });
  }
  return c;
}

}  // namespace

Var add(Tape& tape, const Var& a, const Var& b) { return binary_same_shape(tape, a, b, "add", 1.0, false); }
Var sub(Tape& tape, const Var& a, const Var& b) { return binary_same_shape(tape, a, b, "sub", -1.0, false); }
Var mul(Tape& tape, const Var& a, const Var& b) { return binary_same_shape(tape, a, b, "mul", 0.0, true); }

Var scale(Tape& tape, const Var& a, double s) {
  return unary_elementwise(tape, a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var linear(Tape& tape, const Var& x, const Var& w, const Var& b) {
  require_rank(w, 2, "linear");
  require_rank(b, 1, "linear");
  const bool vector_input = x.value().rank() == 1;
  const std::int64_t t = vector_input ? 1 : x.value().extent(0);
  const std::int64_t n = vector_input ? x.value().extent(0) : x.value().extent(1);
  const std::int64_t m = w.value().extent(0);
  if (w.value().extent(1) != n || b.value().extent(0) != m) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()) + " / bias " + shape_str(b.shape()));
  }
  Tensor out(vector_input ? Shape{m} : Shape{t, m});
  const double* px = x.value().data();
  const double* pw = w.value().data();
  const double* pbias = b.value().data();
  for (std::int64_t i = 0; i < t; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      double acc = pbias[j];
      const double* xrow = px + i * n;
      const double* wrow = pw + j * n;
      for (std::int64_t l = 0; l < n; ++l) acc += xrow[l] * wrow[l];
      out[i * m + j] = acc;
    }
  }
  Var y(std::move(out), any_grad({&x, &w, &b}));
  if (y.requires_grad()) {
    tape.record([x, w, b, y, t, n, m]() mutable {
      const double* dy = y.grad().data();
      if (x.requires_grad()) {
        double* dx = x.grad().data();
        const double* pw = w.value().data();
        for (std::int64_t i = 0; i < t; ++i)
          for (std::int64_t j = 0; j < m; ++j) {
            const double d = dy[i * m + j];
            if (d == 0.0) continue;
            const double* wrow = pw + j * n;
            for (std::int64_t l = 0; l < n; ++l) dx[i * n + l] += d * wrow[l];
          }
      }
      if (w.requires_grad()) {
        double* dw = w.grad().data();
        const double* px = x.value().data();
        for (std::int64_t i = 0; i < t; ++i)
          for (std::int64_t j = 0; j < m; ++j) {
            const double d = dy[i * m + j];
            if (d == 0.0) continue;
            const double* xrow = px + i * n;
            double* wrow = dw + j * n;
            for (std::int64_t l = 0; l < n; ++l) wrow[l] += d * xrow[l];
          }
      }
      if (b.requires_grad()) {
        double* db = b.grad().data();
        for (std::int64_t i = 0; i < t; ++i)
          for (std::int64_t j = 0; j < m; ++j) db[j] += dy[i * m + j];
      }
    });
  }
  return y;
}

Var relu(Tape& tape, const Var& a) {
  return unary_elementwise(
      tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Tape& tape, const Var& a) {
  constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary_elementwise(
      tape, a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Var softmax(Tape& tape, const Var& a, int axis) {
  const AxisView v = axis_view(a.shape(), axis, "softmax");
  Tensor out(a.value().shape());
  const double* px = a.value().data();
  double* po = out.data();
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t in = 0; in < v.inner; ++in) {
      const std::int64_t base = o * v.n * v.inner + in;
      double mx = px[base];
      for (std::int64_t i = 1; i < v.n; ++i) mx = std::max(mx, px[base + i * v.inner]);
      double z = 0.0;
      for (std::int64_t i = 0; i < v.n; ++i) {
        const double e = std::exp(px[base + i * v.inner] - mx);
        po[base + i * v.inner] = e;
        z += e;
      }
      for (std::int64_t i = 0; i < v.n; ++i) po[base + i * v.inner] /= z;
    }
  }
  Var s(std::move(out), a.requires_grad());
  if (s.requires_grad()) {
    tape.record([a, s, v]() mutable {
      const double* ps = s.value().data();
      const double* ds = s.grad().data();
      double* da = a.grad().data();
      for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t in = 0; in < v.inner; ++in) {
          const std::int64_t base = o * v.n * v.inner + in;
          double dot = 0.0;
          for (std::int64_t i = 0; i < v.n; ++i) {
            const std::int64_t ix = base + i * v.inner;
            dot += ds[ix] * ps[ix];
          }
          for (std::int64_t i = 0; i < v.n; ++i) {
            const std::int64_t ix = base + i * v.inner;
            da[ix] += ps[ix] * (ds[ix] - dot);
          }
        }
      }
    });
  }
  return s;
}

Var layer_norm(Tape& tape, const Var& x, const Var& gain, const Var& bias, double eps) {
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  if (eps <= 0.0) throw ValidationError("layer_norm: eps must be positive");
  const std::int64_t d = x.value().shape().back();
  if (gain.value().extent(0) != d || bias.value().extent(0) != d) {
    throw ShapeError("layer_norm: gain/bias length must match last extent of " +
                     shape_str(x.shape()));
  }
  const std::int64_t rows = x.value().numel() / d;
  Tensor out(x.value().shape());
  Tensor xhat(x.value().shape());     // cached for backward
  std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
  const double* px = x.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * d;
    double mu = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(r)] = is;
    for (std::int64_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mu) * is;
      xhat[r * d + i] = h;
      out[r * d + i] = h * gain.value()[i] + bias.value()[i];
    }
  }
  Var y(std::move(out), any_grad({&x, &gain, &bias}));
  if (y.requires_grad()) {
    auto cache_xhat = std::make_shared<Tensor>(std::move(xhat));
    auto cache_is = std::make_shared<std::vector<double>>(std::move(inv_sigma));
    tape.record([x, gain, bias, y, cache_xhat, cache_is, rows, d]() mutable {
      const Tensor& xh = *cache_xhat;
      const double* dy = y.grad().data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double is = (*cache_is)[static_cast<std::size_t>(r)];
        if (x.requires_grad()) {
          double mean_h = 0.0, mean_hx = 0.0;
          for (std::int64_t i = 0; i < d; ++i) {
            const double h = dy[r * d + i] * gain.value()[i];
            mean_h += h;
            mean_hx += h * xh[r * d + i];
          }
          mean_h /= static_cast<double>(d);
          mean_hx /= static_cast<double>(d);
          for (std::int64_t i = 0; i < d; ++i) {
            const double h = dy[r * d + i] * gain.value()[i];
            x.grad()[r * d + i] += (h - mean_h - xh[r * d + i] * mean_hx) * is;
          }
        }
        if (gain.requires_grad()) {
          for (std::int64_t i = 0; i < d; ++i) gain.grad()[i] += dy[r * d + i] * xh[r * d + i];
        }
        if (bias.requires_grad()) {
          for (std::int64_t i = 0; i < d; ++i) bias.grad()[i] += dy[r * d + i];
        }
      }
    });
  }
  return y;
}

namespace {

std::int64_t block_lo(std::int64_t b, std::int64_t extent, std::int64_t p) {
  return b * extent / p;
}

}  // namespace

Var avg_pool(Tape& tape, const Var& x, std::int64_t p) {
  require_rank(x, 3, "avg_pool");
  const std::int64_t c = x.value().extent(0), h = x.value().extent(1), w = x.value().extent(2);
  if (p <= 0 || p > h || p > w) {
    throw ShapeError("avg_pool: output resolution " + std::to_string(p) +
                     " exceeds input " + shape_str(x.shape()));
  }
  Tensor out({c, p, p});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t by = 0; by < p; ++by) {
      const std::int64_t y0 = block_lo(by, h, p), y1 = block_lo(by + 1, h, p);
      for (std::int64_t bx = 0; bx < p; ++bx) {
        const std::int64_t x0 = block_lo(bx, w, p), x1 = block_lo(bx + 1, w, p);
        double acc = 0.0;
        for (std::int64_t yy = y0; yy < y1; ++yy)
          for (std::int64_t xx = x0; xx < x1; ++xx) acc += x.value().at3(ch, yy, xx);
        out.at3(ch, by, bx) = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  Var y(std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    tape.record([x, y, c, h, w, p]() mutable {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t by = 0; by < p; ++by) {
          const std::int64_t y0 = block_lo(by, h, p), y1 = block_lo(by + 1, h, p);
          for (std::int64_t bx = 0; bx < p; ++bx) {
            const std::int64_t x0 = block_lo(bx, w, p), x1 = block_lo(bx + 1, w, p);
            const double d = y.grad().at3(ch, by, bx) / static_cast<double>((y1 - y0) * (x1 - x0));
            for (std::int64_t yy = y0; yy < y1; ++yy)
              for (std::int64_t xx = x0; xx < x1; ++xx) x.grad().at3(ch, yy, xx) += d;
          }
        }
      }
    });
  }
  return y;
}

Var concat(Tape& tape, const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: nothing to concatenate");
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  std::int64_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != static_cast<std::int64_t>(first.size())) {
      throw ShapeError("concat: rank mismatch between " + shape_str(first) + " and " +
                       shape_str(p.shape()));
    }
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (static_cast<int>(i) != axis && p.shape()[i] != first[i]) {
        throw ShapeError("concat: off-axis extents disagree, " + shape_str(first) + " vs " +
                         shape_str(p.shape()));
      }
    }
    total += p.shape()[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  const AxisView v = axis_view(out_shape, axis, "concat");
  Tensor out(out_shape);
  bool rg = false;
  for (const Var& p : parts) rg = rg || p.requires_grad();
  std::int64_t offset = 0;
  for (const Var& p : parts) {
    const std::int64_t pn = p.shape()[static_cast<std::size_t>(axis)];
    for (std::int64_t o = 0; o < v.outer; ++o)
      for (std::int64_t i = 0; i < pn; ++i)
        for (std::int64_t in = 0; in < v.inner; ++in)
          out[(o * v.n + offset + i) * v.inner + in] = p.value()[(o * pn + i) * v.inner + in];
    offset += pn;
  }
  Var y(std::move(out), rg);
  if (rg) {
    auto parts_copy = parts;
    tape.record([parts_copy, y, v, axis]() mutable {
      std::int64_t offset = 0;
      for (Var& p : parts_copy) {
        const std::int64_t pn = p.shape()[static_cast<std::size_t>(axis)];
        if (p.requires_grad()) {
          for (std::int64_t o = 0; o < v.outer; ++o)
            for (std::int64_t i = 0; i < pn; ++i)
              for (std::int64_t in = 0; in < v.inner; ++in)
                p.grad()[(o * pn + i) * v.inner + in] +=
                    y.grad()[(o * v.n + offset + i) * v.inner + in];
        }
        offset += pn;
      }
    });
  }
  return y;
}

Var stack_rows(Tape& tape, const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: nothing to stack");
  const std::int64_t n = rows.front().value().numel();
  Tensor out({static_cast<std::int64_t>(rows.size()), n});
  bool rg = false;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require_rank(rows[r], 1, "stack_rows");
    if (rows[r].value().numel() != n) {
      throw ShapeError("stack_rows: row lengths disagree");
    }
    rg = rg || rows[r].requires_grad();
    for (std::int64_t i = 0; i < n; ++i) out.at2(static_cast<std::int64_t>(r), i) = rows[r].value()[i];
  }
  Var y(std::move(out), rg);
  if (rg) {
    auto rows_copy = rows;
    tape.record([rows_copy, y, n]() mutable {
      for (std::size_t r = 0; r < rows_copy.size(); ++r) {
        if (!rows_copy[r].requires_grad()) continue;
        for (std::int64_t i = 0; i < n; ++i)
          rows_copy[r].grad()[i] += y.grad().at2(static_cast<std::int64_t>(r), i);
      }
    });
  }
  return y;
}

Var reshape(Tape& tape, const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) {
    throw ShapeError("reshape: element count changes from " + shape_str(a.shape()) + " to " +
                     shape_str(shape));
  }
  Tensor out(std::move(shape), a.value().vec());
  Var y(std::move(out), a.requires_grad());
  if (y.requires_grad()) {
    tape.record([a, y]() mutable {
      for (std::int64_t i = 0; i < y.grad().numel(); ++i) a.grad()[i] += y.grad()[i];
    });
  }
  return y;
}

Var row(Tape& tape, const Var& a, std::int64_t r) {
  require_rank(a, 2, "row");
  const std::int64_t rows = a.value().extent(0), cols = a.value().extent(1);
  if (r < 0 || r >= rows) {
    throw ShapeError("row: index " + std::to_string(r) + " out of range for " +
                     shape_str(a.shape()));
  }
  Tensor out({cols});
  for (std::int64_t i = 0; i < cols; ++i) out[i] = a.value().at2(r, i);
  Var y(std::move(out), a.requires_grad());
  if (y.requires_grad()) {
    tape.record([a, y, r, cols]() mutable {
      for (std::int64_t i = 0; i < cols; ++i) a.grad().at2(r, i) += y.grad()[i];
    });
  }
  return y;
}

std::vector<Var> split_blocks(Tape& tape, const Var& x, std::int64_t k) {
  require_rank(x, 3, "split_blocks");
  const std::int64_t c = x.value().extent(0), p = x.value().extent(1);
  if (x.value().extent(2) != p) {
    throw ShapeError("split_blocks: expected square spatial extents, got " + shape_str(x.shape()));
  }
  if (k <= 0 || p % k != 0) {
    throw ShapeError("split_blocks: patch size " + std::to_string(k) +
                     " must divide resolution " + std::to_string(p));
  }
  const std::int64_t g = p / k;
  std::vector<Var> tiles;
  tiles.reserve(static_cast<std::size_t>(g * g));
  for (std::int64_t by = 0; by < g; ++by) {
    for (std::int64_t bx = 0; bx < g; ++bx) {
      Tensor t({c, k, k});
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < k; ++y)
          for (std::int64_t xx = 0; xx < k; ++xx)
            t.at3(ch, y, xx) = x.value().at3(ch, by * k + y, bx * k + xx);
      Var tile(std::move(t), x.requires_grad());
      if (tile.requires_grad()) {
        tape.record([x, tile, c, k, by, bx]() mutable {
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < k; ++y)
              for (std::int64_t xx = 0; xx < k; ++xx)
                x.grad().at3(ch, by * k + y, bx * k + xx) += tile.grad().at3(ch, y, xx);
        });
      }
      tiles.push_back(std::move(tile));
    }
  }
  return tiles;
}

Var conv2d(Tape& tape, const Var& x, const Var& w, const Var& b, std::int64_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(b, 1, "conv2d");
  if (w.value().rank() != 4) {
    throw ShapeError("conv2d: weight must be [co×ci×kh×kw], got " + shape_str(w.shape()));
  }
  const std::int64_t ci = x.value().extent(0), h = x.value().extent(1), ww = x.value().extent(2);
  const std::int64_t co = w.value().extent(0), kh = w.value().extent(2), kw = w.value().extent(3);
  if (w.value().extent(1) != ci || b.value().extent(0) != co) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  const std::int64_t oh = h + 2 * pad - kh + 1, ow = ww + 2 * pad - kw + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  auto widx = [ci, kh, kw](std::int64_t o, std::int64_t i, std::int64_t y, std::int64_t xx) {
    return ((o * ci + i) * kh + y) * kw + xx;
  };
  Tensor out({co, oh, ow});
  for (std::int64_t o = 0; o < co; ++o) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        double acc = b.value()[o];
        for (std::int64_t i = 0; i < ci; ++i)
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t sy = y + ky - pad;
            if (sy < 0 || sy >= h) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t sx = xx + kx - pad;
              if (sx < 0 || sx >= ww) continue;
              acc += x.value().at3(i, sy, sx) * w.value()[widx(o, i, ky, kx)];
            }
          }
        out.at3(o, y, xx) = acc;
      }
    }
  }
  Var y(std::move(out), any_grad({&x, &w, &b}));
  if (y.requires_grad()) {
    tape.record([x, w, b, y, ci, h, ww, co, kh, kw, oh, ow, pad, widx]() mutable {
      for (std::int64_t o = 0; o < co; ++o) {
        for (std::int64_t yy = 0; yy < oh; ++yy) {
          for (std::int64_t xx = 0; xx < ow; ++xx) {
            const double d = y.grad().at3(o, yy, xx);
            if (d == 0.0) continue;
            if (b.requires_grad()) b.grad()[o] += d;
            for (std::int64_t i = 0; i < ci; ++i)
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t sy = yy + ky - pad;
                if (sy < 0 || sy >= h) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t sx = xx + kx - pad;
                  if (sx < 0 || sx >= ww) continue;
                  if (w.requires_grad())
                    w.grad()[widx(o, i, ky, kx)] += d * x.value().at3(i, sy, sx);
                  if (x.requires_grad())
                    x.grad().at3(i, sy, sx) += d * w.value()[widx(o, i, ky, kx)];
                }
              }
          }
        }
      }
    });
  }
  return y;
}

Var dropout(Tape& tape, const Var& a, double rate, RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(a.value().numel()));
  Tensor out(a.value().shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    (*mask)[static_cast<std::size_t>(i)] = m;
    out[i] = a.value()[i] * m;
  }
  Var y(std::move(out), a.requires_grad());
  if (y.requires_grad()) {
    tape.record([a, y, mask]() mutable {
      for (std::int64_t i = 0; i < y.grad().numel(); ++i)
        a.grad()[i] += y.grad()[i] * (*mask)[static_cast<std::size_t>(i)];
    });
  }
  return y;
}

Var sum(Tape& tape, const Var& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.value().numel(); ++i) acc += a.value()[i];
  Var y(Tensor::scalar(acc), a.requires_grad());
  if (y.requires_grad()) {
    tape.record([a, y]() mutable {
      const double d = y.grad()[0];
      for (std::int64_t i = 0; i < a.grad().numel(); ++i) a.grad()[i] += d;
    });
  }
  return y;
}

Var mean(Tape& tape, const Var& a) {
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.value().numel()));
}

Var cross_entropy(Tape& tape, const Var& logits, const std::vector<int>& labels,
                  const std::vector<double>& weights) {
  const bool vector_input = logits.value().rank() == 1;
  if (!vector_input) require_rank(logits, 2, "cross_entropy");
  const std::int64_t bsz = vector_input ? 1 : logits.value().extent(0);
  const std::int64_t ncls = vector_input ? logits.value().extent(0) : logits.value().extent(1);
  if (static_cast<std::int64_t>(labels.size()) != bsz) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(bsz) + " rows");
  }
  if (!weights.empty() && static_cast<std::int64_t>(weights.size()) != bsz) {
    throw ShapeError("cross_entropy: weight count does not match rows");
  }
  for (int l : labels) {
    if (l < 0 || l >= ncls) {
      throw ValidationError("cross_entropy: label " + std::to_string(l) +
                            " out of range [0, " + std::to_string(ncls) + ")");
    }
  }
  const double* px = logits.value().data();
  double total = 0.0;
  for (std::int64_t i = 0; i < bsz; ++i) {
    const double* xr = px + i * ncls;
    double mx = xr[0];
    for (std::int64_t j = 1; j < ncls; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < ncls; ++j) z += std::exp(xr[j] - mx);
    const double ce = mx + std::log(z) - xr[labels[static_cast<std::size_t>(i)]];
    total += (weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)]) * ce;
  }
  Var y(Tensor::scalar(total / static_cast<double>(bsz)), logits.requires_grad());
  if (y.requires_grad()) {
    tape.record([logits, y, labels, weights, bsz, ncls]() mutable {
      const double d = y.grad()[0] / static_cast<double>(bsz);
      const double* px = logits.value().data();
      double* dx = logits.grad().data();
      for (std::int64_t i = 0; i < bsz; ++i) {
        const double wgt = (weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)]) * d;
        const double* xr = px + i * ncls;
        double mx = xr[0];
        for (std::int64_t j = 1; j < ncls; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < ncls; ++j) z += std::exp(xr[j] - mx);
        for (std::int64_t j = 0; j < ncls; ++j) {
          double g = std::exp(xr[j] - mx) / z;
          if (j == labels[static_cast<std::size_t>(i)]) g -= 1.0;
          dx[i * ncls + j] += wgt * g;
        }
      }
    });
  }
  return y;
}

}  // namespace veto
