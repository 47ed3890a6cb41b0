#include "eatkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace eatkit::ops {
namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t size = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.size = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(Var v, std::size_t rank, const char* op, const char* what) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + to_string(v.shape()));
  }
}

// dst[i] += alpha * src[i]
inline void axpy(std::size_t n, double alpha, const double* src, double* dst) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += alpha * src[i];
}

inline double dot(std::size_t n, const double* a, const double* b) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Permutes `src` (shape `shape`) so that output axis k is input axis perm[k].
Tensor permute_copy(const Tensor& src, const std::vector<std::size_t>& perm) {
  const Shape& in = src.shape();
  const std::size_t rank = in.size();
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank), strides(rank);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = stride;
    stride *= in[i];
  }
  for (std::size_t k = 0; k < rank; ++k) {
    out_shape[k] = in[perm[k]];
    strides[k] = in_strides[perm[k]];
  }
  Tensor out(out_shape);
  std::vector<std::size_t> idx(rank, 0);
  const double* s = src.raw();
  double* d = out.raw();
  const std::size_t last = rank - 1;
  const std::size_t n_last = out_shape[last];
  const std::size_t s_last = strides[last];
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < out.numel(); flat += n_last) {
    for (std::size_t j = 0; j < n_last; ++j) d[flat + j] = s[offset + j * s_last];
    // advance the multi-index, skipping the innermost axis
    for (std::size_t k = last; k-- > 0;) {
      ++idx[k];
      offset += strides[k];
      if (idx[k] < out_shape[k]) break;
      offset -= strides[k] * out_shape[k];
      idx[k] = 0;
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

std::size_t conv_output_size(std::size_t in, std::size_t kernel, const Conv2dOptions& opt) {
  const long span = static_cast<long>(opt.dilation) * (static_cast<long>(kernel) - 1) + 1;
  const long padded = static_cast<long>(in) + 2 * static_cast<long>(opt.padding);
  if (padded < span) return 0;
  return static_cast<std::size_t>((padded - span) / static_cast<long>(opt.stride)) + 1;
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w;      // input
  std::size_t o, kh, kw;       // weight
  std::size_t oh, ow;          // output
  std::size_t groups, cg, og;  // per-group channels
  Conv2dOptions opt;

  bool pointwise() const {
    return kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0 && groups == 1;
  }
  // Valid output range [lo, hi) along one axis for kernel tap k.
  static void valid_range(std::size_t out, std::size_t in, std::size_t k, const Conv2dOptions& opt,
                          std::size_t& lo, std::size_t& hi) {
    const long off = static_cast<long>(k * opt.dilation) - static_cast<long>(opt.padding);
    const long s = static_cast<long>(opt.stride);
    // need 0 <= o*s + off < in
    long l = off >= 0 ? 0 : (-off + s - 1) / s;
    long h = (static_cast<long>(in) - off + s - 1) / s;
    if (static_cast<long>(in) - off <= 0) h = 0;
    l = std::clamp(l, 0L, static_cast<long>(out));
    h = std::clamp(h, l, static_cast<long>(out));
    lo = static_cast<std::size_t>(l);
    hi = static_cast<std::size_t>(h);
  }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Conv2dOptions& opt) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be N×C×H×W, got " + to_string(x.shape()));
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be O×I×kH×kW, got " + to_string(w.shape()));
  if (opt.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (opt.dilation < 1) throw std::invalid_argument("conv2d: dilation must be >= 1");
  if (opt.groups < 1) throw std::invalid_argument("conv2d: groups must be >= 1");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.groups = opt.groups;
  g.opt = opt;
  if (g.c % g.groups != 0) {
    throw ShapeError("conv2d: channel axis (1) of input has " + std::to_string(g.c) +
                     " channels, not divisible by groups=" + std::to_string(g.groups));
  }
  if (g.o % g.groups != 0) {
    throw ShapeError("conv2d: output-channel axis (0) of weight has " + std::to_string(g.o) +
                     " channels, not divisible by groups=" + std::to_string(g.groups));
  }
  g.cg = g.c / g.groups;
  g.og = g.o / g.groups;
  if (w.dim(1) != g.cg) {
    throw ShapeError("conv2d: weight input-channel axis (1) is " + std::to_string(w.dim(1)) +
                     ", expected C/groups = " + std::to_string(g.cg));
  }
  g.oh = conv_output_size(g.h, g.kh, opt);
  g.ow = conv_output_size(g.w, g.kw, opt);
  if (g.oh == 0) throw ShapeError("conv2d: height axis (2) too small for kernel");
  if (g.ow == 0) throw ShapeError("conv2d: width axis (3) too small for kernel");
  return g;
}

// Visits every (input row, output row, weight) triple of the direct convolution.
// fn(in_plane_row, out_plane_row, weight, ow_lo, ow_hi, iw_start)
template <typename Fn>
void conv_taps(const ConvGeometry& g, Fn&& fn) {
  const std::size_t s = g.opt.stride;
  for (std::size_t ki = 0; ki < g.kh; ++ki) {
    std::size_t oh_lo, oh_hi;
    ConvGeometry::valid_range(g.oh, g.h, ki, g.opt, oh_lo, oh_hi);
    for (std::size_t kj = 0; kj < g.kw; ++kj) {
      std::size_t ow_lo, ow_hi;
      ConvGeometry::valid_range(g.ow, g.w, kj, g.opt, ow_lo, ow_hi);
      if (ow_lo >= ow_hi) continue;
      for (std::size_t y = oh_lo; y < oh_hi; ++y) {
        const std::size_t iy = y * s + ki * g.opt.dilation - g.opt.padding;
        const std::size_t ix0 = ow_lo * s + kj * g.opt.dilation - g.opt.padding;
        fn(ki, kj, iy, y, ow_lo, ow_hi, ix0);
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var weight, std::optional<Var> bias, const Conv2dOptions& opt) {
  require_same_tape(input, weight, "conv2d");
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const ConvGeometry g = conv_geometry(x, w, opt);
  if (bias) {
    if (bias->value().rank() != 1 || bias->dim(0) != g.o) {
      throw ShapeError("conv2d: bias axis (0) must have " + std::to_string(g.o) + " entries, got " +
                       to_string(bias->shape()));
    }
  }
  Tensor out(Shape{g.n, g.o, g.oh, g.ow});
  const std::size_t in_plane = g.h * g.w;
  const std::size_t out_plane = g.oh * g.ow;
  const std::size_t s = opt.stride;

  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      double* dst = out.raw() + (n * g.o + o) * out_plane;
      if (bias) std::fill(dst, dst + out_plane, bias->value()[o]);
      const std::size_t grp = o / g.og;
      for (std::size_t ci = 0; ci < g.cg; ++ci) {
        const double* src = x.raw() + (n * g.c + grp * g.cg + ci) * in_plane;
        const double* wk = w.raw() + (o * g.cg + ci) * g.kh * g.kw;
        if (g.pointwise()) {
          axpy(out_plane, wk[0], src, dst);
          continue;
        }
        conv_taps(g, [&](std::size_t ki, std::size_t kj, std::size_t iy, std::size_t y,
                         std::size_t lo, std::size_t hi, std::size_t ix0) {
          const double wv = wk[ki * g.kw + kj];
          const double* srow = src + iy * g.w + ix0;
          double* drow = dst + y * g.ow;
          if (s == 1) {
            axpy(hi - lo, wv, srow, drow + lo);
          } else {
            for (std::size_t xo = lo, k = 0; xo < hi; ++xo, k += s) drow[xo] += wv * srow[k];
          }
        });
      }
    }
  }

  std::vector<Var> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return input.tape().record(
      "conv2d", std::move(out), inputs,
      [input, weight, bias, g](Tape& t, std::uint32_t self) {
        const Tensor& gout = t.grad_of(self);
        const Tensor& x = input.value();
        const Tensor& w = weight.value();
        const std::size_t in_plane = g.h * g.w;
        const std::size_t out_plane = g.oh * g.ow;
        const std::size_t s = g.opt.stride;
        Tensor* gx = input.requires_grad() ? &t.grad_buffer(input.id()) : nullptr;
        Tensor* gw = weight.requires_grad() ? &t.grad_buffer(weight.id()) : nullptr;
        if (bias && bias->requires_grad()) {
          Tensor& gb = t.grad_buffer(bias->id());
          for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t o = 0; o < g.o; ++o) {
              const double* src = gout.raw() + (n * g.o + o) * out_plane;
              gb[o] += std::accumulate(src, src + out_plane, 0.0);
            }
        }
        if (!gx && !gw) return;
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t o = 0; o < g.o; ++o) {
            const double* go = gout.raw() + (n * g.o + o) * out_plane;
            const std::size_t grp = o / g.og;
            for (std::size_t ci = 0; ci < g.cg; ++ci) {
              const std::size_t plane = (n * g.c + grp * g.cg + ci) * in_plane;
              const double* src = x.raw() + plane;
              double* gsrc = gx ? gx->raw() + plane : nullptr;
              const std::size_t wbase = (o * g.cg + ci) * g.kh * g.kw;
              const double* wk = w.raw() + wbase;
              double* gwk = gw ? gw->raw() + wbase : nullptr;
              if (g.pointwise()) {
                if (gsrc) axpy(out_plane, wk[0], go, gsrc);
                if (gwk) gwk[0] += dot(out_plane, go, src);
                continue;
              }
              conv_taps(g, [&](std::size_t ki, std::size_t kj, std::size_t iy, std::size_t y,
                               std::size_t lo, std::size_t hi, std::size_t ix0) {
                const std::size_t tap = ki * g.kw + kj;
                const double* grow = go + y * g.ow;
                const std::size_t row = iy * g.w + ix0;
                if (s == 1) {
                  if (gsrc) axpy(hi - lo, wk[tap], grow + lo, gsrc + row);
                  if (gwk) gwk[tap] += dot(hi - lo, grow + lo, src + row);
                } else {
                  double acc = 0.0;
                  for (std::size_t xo = lo, k = 0; xo < hi; ++xo, k += s) {
                    if (gsrc) gsrc[row + k] += wk[tap] * grow[xo];
                    acc += grow[xo] * src[row + k];
                  }
                  if (gwk) gwk[tap] += acc;
                }
              });
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

Var layer_norm(Var input, int axis_arg, Var gamma, Var beta, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
  const Tensor& x = input.value();
  const std::size_t axis = normalize_axis(axis_arg, x.rank());
  const AxisSplit sp = split_at(x.shape(), axis);
  if (sp.size == 0) throw ShapeError("layer_norm: zero channels");
  if (gamma.value().numel() != sp.size || beta.value().numel() != sp.size) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(sp.size) +
                     " entries (axis " + std::to_string(axis) + ")");
  }
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> rstd(sp.outer * sp.inner);
  std::vector<double> mean(sp.inner), var(sp.inner);
  const double inv_c = 1.0 / static_cast<double>(sp.size);

  for (std::size_t o = 0; o < sp.outer; ++o) {
    const std::size_t base = o * sp.size * sp.inner;
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    for (std::size_t c = 0; c < sp.size; ++c) axpy(sp.inner, 1.0, x.raw() + base + c * sp.inner, mean.data());
    for (double& m : mean) m *= inv_c;
    for (std::size_t c = 0; c < sp.size; ++c) {
      const double* row = x.raw() + base + c * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const double d = row[i] - mean[i];
        var[i] += d * d;
      }
    }
    double* rs = rstd.data() + o * sp.inner;
    for (std::size_t i = 0; i < sp.inner; ++i) rs[i] = 1.0 / std::sqrt(var[i] * inv_c + eps);
    for (std::size_t c = 0; c < sp.size; ++c) {
      const std::size_t off = base + c * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const double h = (x[off + i] - mean[i]) * rs[i];
        xhat[off + i] = h;
        out[off + i] = gm[c] * h + bt[c];
      }
    }
  }

  return input.tape().record(
      "layer_norm", std::move(out), {input, gamma, beta},
      [input, gamma, beta, sp, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t,
                                                                               std::uint32_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& gm = gamma.value();
        if (gamma.requires_grad() || beta.requires_grad()) {
          Tensor* gg = gamma.requires_grad() ? &t.grad_buffer(gamma.id()) : nullptr;
          Tensor* gb = beta.requires_grad() ? &t.grad_buffer(beta.id()) : nullptr;
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t c = 0; c < sp.size; ++c) {
              const std::size_t off = (o * sp.size + c) * sp.inner;
              if (gg) (*gg)[c] += dot(sp.inner, g.raw() + off, xhat.raw() + off);
              if (gb) (*gb)[c] += std::accumulate(g.raw() + off, g.raw() + off + sp.inner, 0.0);
            }
        }
        if (!input.requires_grad()) return;
        Tensor& gx = t.grad_buffer(input.id());
        const double inv_c = 1.0 / static_cast<double>(sp.size);
        std::vector<double> m1(sp.inner), m2(sp.inner);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const std::size_t base = o * sp.size * sp.inner;
          std::fill(m1.begin(), m1.end(), 0.0);
          std::fill(m2.begin(), m2.end(), 0.0);
          for (std::size_t c = 0; c < sp.size; ++c) {
            const std::size_t off = base + c * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) {
              const double dh = g[off + i] * gm[c];
              m1[i] += dh;
              m2[i] += dh * xhat[off + i];
            }
          }
          const double* rs = rstd.data() + o * sp.inner;
          for (std::size_t c = 0; c < sp.size; ++c) {
            const std::size_t off = base + c * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) {
              const double dh = g[off + i] * gm[c];
              gx[off + i] += rs[i] * (dh - m1[i] * inv_c - xhat[off + i] * m2[i] * inv_c);
            }
          }
        }
      });
}

Var softmax(Var input, int axis_arg) {
  const Tensor& x = input.value();
  const std::size_t axis = normalize_axis(axis_arg, x.rank());
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.size * sp.inner + i;
      double mx = x[base];
      for (std::size_t c = 1; c < sp.size; ++c) mx = std::max(mx, x[base + c * sp.inner]);
      double z = 0.0;
      for (std::size_t c = 0; c < sp.size; ++c) {
        const double e = std::exp(x[base + c * sp.inner] - mx);
        out[base + c * sp.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t c = 0; c < sp.size; ++c) out[base + c * sp.inner] *= inv;
    }
  return input.tape().record("softmax", std::move(out), {input}, [input, sp](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(input.id());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.size * sp.inner + i;
        double s = 0.0;
        for (std::size_t c = 0; c < sp.size; ++c) s += g[base + c * sp.inner] * y[base + c * sp.inner];
        for (std::size_t c = 0; c < sp.size; ++c) {
          const std::size_t k = base + c * sp.inner;
          gx[k] += y[k] * (g[k] - s);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Dense algebra

Var linear(Var input, Var weight, std::optional<Var> bias) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  if (w.rank() != 2) throw ShapeError("linear: weight must be Cout×Cin, got " + to_string(w.shape()));
  const std::size_t cin = x.dim(-1);
  const std::size_t cout = w.dim(0);
  if (w.dim(1) != cin) {
    throw ShapeError("linear: input last axis has " + std::to_string(cin) +
                     " features but weight expects " + std::to_string(w.dim(1)));
  }
  if (bias && bias->value().numel() != cout) {
    throw ShapeError("linear: bias must have " + std::to_string(cout) + " entries");
  }
  const std::size_t rows = x.numel() / cin;
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  Tensor out(out_shape);
  for (std::size_t m = 0; m < rows; ++m) {
    const double* xr = x.raw() + m * cin;
    double* yr = out.raw() + m * cout;
    for (std::size_t o = 0; o < cout; ++o) {
      yr[o] = dot(cin, xr, w.raw() + o * cin) + (bias ? bias->value()[o] : 0.0);
    }
  }
  std::vector<Var> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return input.tape().record(
      "linear", std::move(out), inputs, [input, weight, bias, rows, cin, cout](Tape& t, std::uint32_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = input.value();
        const Tensor& w = weight.value();
        if (input.requires_grad()) {
          Tensor& gx = t.grad_buffer(input.id());
          for (std::size_t m = 0; m < rows; ++m) {
            const double* gr = g.raw() + m * cout;
            double* dst = gx.raw() + m * cin;
            for (std::size_t o = 0; o < cout; ++o) axpy(cin, gr[o], w.raw() + o * cin, dst);
          }
        }
        if (weight.requires_grad()) {
          Tensor& gw = t.grad_buffer(weight.id());
          for (std::size_t m = 0; m < rows; ++m) {
            const double* gr = g.raw() + m * cout;
            const double* xr = x.raw() + m * cin;
            for (std::size_t o = 0; o < cout; ++o) axpy(cin, gr[o], xr, gw.raw() + o * cin);
          }
        }
        if (bias && bias->requires_grad()) {
          Tensor& gb = t.grad_buffer(bias->id());
          for (std::size_t m = 0; m < rows; ++m) axpy(cout, 1.0, g.raw() + m * cout, gb.raw());
        }
      });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || av.rank() != bv.rank()) {
    throw ShapeError("matmul: operands must share rank >= 2, got " + to_string(av.shape()) + " and " +
                     to_string(bv.shape()));
  }
  const std::size_t r = av.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (av.dim(static_cast<int>(i)) != bv.dim(static_cast<int>(i))) {
      throw ShapeError("matmul: batch axis " + std::to_string(i) + " differs: " + to_string(av.shape()) +
                       " vs " + to_string(bv.shape()));
    }
  }
  const std::size_t m = av.dim(-2), k = av.dim(-1), n = bv.dim(-1);
  if (bv.dim(-2) != k) {
    throw ShapeError("matmul: inner axis mismatch " + std::to_string(k) + " vs " + std::to_string(bv.dim(-2)));
  }
  const std::size_t batch = av.numel() / (m * k);
  Shape out_shape = av.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const double* A = av.raw() + bi * m * k;
    const double* B = bv.raw() + bi * k * n;
    double* C = out.raw() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) axpy(n, A[i * k + p], B + p * n, C + i * n);
  }
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b, batch, m, k, n](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor* ga = a.requires_grad() ? &t.grad_buffer(a.id()) : nullptr;
    Tensor* gb = b.requires_grad() ? &t.grad_buffer(b.id()) : nullptr;
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const double* A = av.raw() + bi * m * k;
      const double* B = bv.raw() + bi * k * n;
      const double* G = g.raw() + bi * m * n;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          if (ga) ga->raw()[bi * m * k + i * k + p] += dot(n, G + i * n, B + p * n);
          if (gb) axpy(n, A[i * k + p], G + i * n, gb->raw() + bi * k * n + p * n);
        }
    }
  });
}

Var transpose(Var input, int axis0, int axis1) {
  const std::size_t rank = input.value().rank();
  const std::size_t a0 = normalize_axis(axis0, rank);
  const std::size_t a1 = normalize_axis(axis1, rank);
  std::vector<std::size_t> perm(rank);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[a0], perm[a1]);
  Tensor out = permute_copy(input.value(), perm);
  return input.tape().record("transpose", std::move(out), {input}, [input, perm](Tape& t, std::uint32_t self) {
    Tensor back = permute_copy(t.grad_of(self), perm);
    t.grad_buffer(input.id()).add_inplace(back);
  });
}

Var reshape(Var input, Shape shape) {
  Tensor out = input.value().reshaped(std::move(shape));
  return input.tape().record("reshape", std::move(out), {input}, [input](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad_buffer(input.id());
    axpy(g.numel(), 1.0, g.raw(), gx.raw());
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.add_inplace(b.value());
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    if (a.requires_grad()) t.grad_buffer(a.id()).add_inplace(g);
    if (b.requires_grad()) t.grad_buffer(b.id()).add_inplace(g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  axpy(out.numel(), -1.0, b.value().raw(), out.raw());
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    if (a.requires_grad()) t.grad_buffer(a.id()).add_inplace(g);
    if (b.requires_grad()) axpy(g.numel(), -1.0, g.raw(), t.grad_buffer(b.id()).raw());
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a.id());
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b.id());
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

Var mul_broadcast(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != bs.size()) {
    throw ShapeError("mul_broadcast: rank mismatch " + to_string(as) + " vs " + to_string(bs));
  }
  const std::size_t rank = as.size();
  std::vector<std::size_t> bstride(rank);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    if (bs[i] != as[i] && bs[i] != 1) {
      throw ShapeError("mul_broadcast: axis " + std::to_string(i) + " has size " + std::to_string(bs[i]) +
                       ", expected 1 or " + std::to_string(as[i]));
    }
    bstride[i] = bs[i] == 1 ? 0 : stride;
    stride *= bs[i];
  }
  // b index for every element of a, computed once and shared with backward
  std::vector<std::size_t> bindex(a.value().numel());
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < bindex.size(); ++flat) {
      bindex[flat] = off;
      for (std::size_t k = rank; k-- > 0;) {
        ++idx[k];
        off += bstride[k];
        if (idx[k] < as[k]) break;
        off -= bstride[k] * as[k];
        idx[k] = 0;
      }
    }
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[bindex[i]];
  return a.tape().record("mul_broadcast", std::move(out), {a, b},
                         [a, b, bindex = std::move(bindex)](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.grad_of(self);
                           if (a.requires_grad()) {
                             Tensor& ga = t.grad_buffer(a.id());
                             for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * b.value()[bindex[i]];
                           }
                           if (b.requires_grad()) {
                             Tensor& gb = t.grad_buffer(b.id());
                             for (std::size_t i = 0; i < g.numel(); ++i) gb[bindex[i]] += g[i] * a.value()[i];
                           }
                         });
}

Var scale(Var input, double factor) {
  Tensor out = input.value();
  for (double& v : out.data()) v *= factor;
  return input.tape().record("scale", std::move(out), {input}, [input, factor](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    axpy(g.numel(), factor, g.raw(), t.grad_buffer(input.id()).raw());
  });
}

Var gelu(Var input) {
  Tensor out = input.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return input.tape().record("gelu", std::move(out), {input}, [input](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& x = input.value();
    Tensor& gx = t.grad_buffer(input.id());
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var sigmoid(Var input) {
  Tensor out = input.value();
  for (double& v : out.data()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return input.tape().record("sigmoid", std::move(out), {input}, [input](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(input.id());
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var weighted_sum(std::span<const Var> xs, Var weights) {
  if (xs.empty()) throw std::invalid_argument("weighted_sum: no inputs");
  const Tensor& w = weights.value();
  if (w.numel() != xs.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(xs.size()) + " inputs but " +
                     std::to_string(w.numel()) + " weights");
  }
  for (const Var& x : xs) require_same_shape(xs[0], x, "weighted_sum");
  Tensor out = Tensor::zeros_like(xs[0].value());
  for (std::size_t i = 0; i < xs.size(); ++i) axpy(out.numel(), w[i], xs[i].value().raw(), out.raw());
  std::vector<Var> inputs(xs.begin(), xs.end());
  inputs.push_back(weights);
  std::vector<Var> terms(xs.begin(), xs.end());
  return weights.tape().record("weighted_sum", std::move(out), inputs,
                               [terms, weights](Tape& t, std::uint32_t self) {
                                 const Tensor& g = t.grad_of(self);
                                 const Tensor& w = weights.value();
                                 for (std::size_t i = 0; i < terms.size(); ++i) {
                                   if (terms[i].requires_grad()) {
                                     axpy(g.numel(), w[i], g.raw(), t.grad_buffer(terms[i].id()).raw());
                                   }
                                 }
                                 if (weights.requires_grad()) {
                                   Tensor& gw = t.grad_buffer(weights.id());
                                   for (std::size_t i = 0; i < terms.size(); ++i) {
                                     gw[i] += dot(g.numel(), g.raw(), terms[i].value().raw());
                                   }
                                 }
                               });
}

// ---------------------------------------------------------------------------
// Structural

Var concat(std::span<const Var> xs, int axis_arg) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = xs[0].shape();
  const std::size_t axis = normalize_axis(axis_arg, first.size());
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat: axis " + std::to_string(i) + " differs: " + to_string(s) + " vs " +
                         to_string(first));
      }
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const Var& x : xs) {
    offsets.push_back(at);
    const std::size_t chunk = x.dim(static_cast<int>(axis)) * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(x.value().raw() + o * chunk, chunk, out.raw() + o * sp.size * sp.inner + at * sp.inner);
    }
    at += x.dim(static_cast<int>(axis));
  }
  std::vector<Var> parts(xs.begin(), xs.end());
  return xs[0].tape().record("concat", std::move(out), xs, [parts, offsets, sp, axis](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (!parts[p].requires_grad()) continue;
      Tensor& gp = t.grad_buffer(parts[p].id());
      const std::size_t chunk = parts[p].dim(static_cast<int>(axis)) * sp.inner;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        axpy(chunk, 1.0, g.raw() + o * sp.size * sp.inner + offsets[p] * sp.inner, gp.raw() + o * chunk);
      }
    }
  });
}

Var slice(Var input, int axis_arg, std::size_t begin, std::size_t end) {
  const Shape& s = input.shape();
  const std::size_t axis = normalize_axis(axis_arg, s.size());
  if (begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of size " + std::to_string(s[axis]));
  }
  const AxisSplit sp = split_at(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t chunk = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(input.value().raw() + o * sp.size * sp.inner + begin * sp.inner, chunk, out.raw() + o * chunk);
  }
  return input.tape().record("slice", std::move(out), {input}, [input, sp, begin, chunk](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad_buffer(input.id());
    for (std::size_t o = 0; o < sp.outer; ++o) {
      axpy(chunk, 1.0, g.raw() + o * chunk, gx.raw() + o * sp.size * sp.inner + begin * sp.inner);
    }
  });
}

std::vector<Var> split_channels(Var input, std::span<const std::size_t> sizes) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (input.value().rank() < 2 || total != input.dim(1)) {
    throw ShapeError("split_channels: sizes sum to " + std::to_string(total) + " but channel axis (1) of " +
                     to_string(input.shape()) + " differs");
  }
  std::vector<Var> parts;
  std::size_t at = 0;
  for (std::size_t n : sizes) {
    if (n == 0) throw ShapeError("split_channels: empty part");
    parts.push_back(slice(input, 1, at, at + n));
    at += n;
  }
  return parts;
}

Var mean_axis(Var input, int axis_arg) {
  const Shape& s = input.shape();
  const std::size_t axis = normalize_axis(axis_arg, s.size());
  const AxisSplit sp = split_at(s, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(sp.size);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < sp.size; ++c)
      axpy(sp.inner, inv, input.value().raw() + (o * sp.size + c) * sp.inner, out.raw() + o * sp.inner);
  return input.tape().record("mean_axis", std::move(out), {input}, [input, sp, inv](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad_buffer(input.id());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t c = 0; c < sp.size; ++c)
        axpy(sp.inner, inv, g.raw() + o * sp.inner, gx.raw() + (o * sp.size + c) * sp.inner);
  });
}

Var mean_pool_spatial(Var input) {
  require_rank(input, 4, "mean_pool_spatial", "input");
  const Shape& s = input.shape();
  return mean_axis(reshape(input, Shape{s[0], s[1], s[2] * s[3]}), 2);
}

Var sum(Var input) {
  Tensor out = Tensor::scalar(input.value().sum());
  return input.tape().record("sum", std::move(out), {input}, [input](Tape& t, std::uint32_t self) {
    const double g = t.grad_of(self)[0];
    for (double& v : t.grad_buffer(input.id()).data()) v += g;
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  const Tensor& z = logits.value();
  Tensor probs(Shape{n, k});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside [0," +
                              std::to_string(k) + ")");
    }
    const double* row = z.raw() + i * k;
    const double mx = *std::max_element(row, row + k);
    double zsum = 0.0;
    for (std::size_t c = 0; c < k; ++c) zsum += std::exp(row[c] - mx);
    const double lse = mx + std::log(zsum);
    for (std::size_t c = 0; c < k; ++c) probs[i * k + c] = std::exp(row[c] - lse);
    loss += lse - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [logits, probs = std::move(probs), lab = std::move(lab), n, k](Tape& t, std::uint32_t self) {
        const double g = t.grad_of(self)[0] / static_cast<double>(n);
        Tensor& gz = t.grad_buffer(logits.id());
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < k; ++c) gz[i * k + c] += g * probs[i * k + c];
          gz[i * k + static_cast<std::size_t>(lab[i])] -= g;
        }
      });
}

// ---------------------------------------------------------------------------
// Bilinear sampling

namespace {

struct BilinearTaps {
  long y0, x0;
  double ty, tx;
  // row-major (y0,x0) (y0,x0+1) (y0+1,x0) (y0+1,x0+1); -1 when out of bounds
  long index[4];
  double weight[4];
};

BilinearTaps bilinear_taps(double y, double x, std::size_t h, std::size_t w) {
  BilinearTaps b{};
  const double fy = std::floor(y), fx = std::floor(x);
  b.y0 = static_cast<long>(fy);
  b.x0 = static_cast<long>(fx);
  b.ty = y - fy;
  b.tx = x - fx;
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  for (int k = 0; k < 4; ++k) {
    const long yy = b.y0 + (k >> 1);
    const long xx = b.x0 + (k & 1);
    b.index[k] = (yy >= 0 && yy < H && xx >= 0 && xx < W) ? yy * W + xx : -1;
  }
  b.weight[0] = (1.0 - b.ty) * (1.0 - b.tx);
  b.weight[1] = (1.0 - b.ty) * b.tx;
  b.weight[2] = b.ty * (1.0 - b.tx);
  b.weight[3] = b.ty * b.tx;
  return b;
}

inline double tap(const double* plane, long index) { return index < 0 ? 0.0 : plane[index]; }

inline double sample_plane(const double* plane, const BilinearTaps& b) {
  double v = 0.0;
  for (int k = 0; k < 4; ++k)
    if (b.index[k] >= 0) v += b.weight[k] * plane[b.index[k]];
  return v;
}

// d value / d y and d value / d x for one plane
inline void sample_plane_grad(const double* plane, const BilinearTaps& b, double& dy, double& dx) {
  const double v00 = tap(plane, b.index[0]), v01 = tap(plane, b.index[1]);
  const double v10 = tap(plane, b.index[2]), v11 = tap(plane, b.index[3]);
  dy = (1.0 - b.tx) * (v10 - v00) + b.tx * (v11 - v01);
  dx = (1.0 - b.ty) * (v01 - v00) + b.ty * (v11 - v10);
}

}  // namespace

Var bilinear_sample(Var map, Var yx) {
  require_rank(map, 3, "bilinear_sample", "map");
  if (yx.value().numel() != 2) throw ShapeError("bilinear_sample: coordinates must hold (y, x)");
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const BilinearTaps b = bilinear_taps(yx.value()[0], yx.value()[1], h, w);
  Tensor out(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] = sample_plane(map.value().raw() + ch * h * w, b);
  return map.tape().record("bilinear_sample", std::move(out), {map, yx}, [map, yx, b, c, h, w](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_of(self);
    if (map.requires_grad()) {
      Tensor& gm = t.grad_buffer(map.id());
      for (std::size_t ch = 0; ch < c; ++ch)
        for (int k = 0; k < 4; ++k)
          if (b.index[k] >= 0) gm[ch * h * w + static_cast<std::size_t>(b.index[k])] += b.weight[k] * g[ch];
    }
    if (yx.requires_grad()) {
      Tensor& gc = t.grad_buffer(yx.id());
      for (std::size_t ch = 0; ch < c; ++ch) {
        double dy, dx;
        sample_plane_grad(map.value().raw() + ch * h * w, b, dy, dx);
        gc[0] += g[ch] * dy;
        gc[1] += g[ch] * dx;
      }
    }
  });
}

Var deform_resample(Var map, Var offsets) {
  require_rank(map, 4, "deform_resample", "map");
  require_rank(offsets, 4, "deform_resample", "offsets");
  const std::size_t n = map.dim(0), c = map.dim(1), h = map.dim(2), w = map.dim(3);
  const Shape want{n, 2, h, w};
  if (offsets.shape() != want) {
    throw ShapeError("deform_resample: offsets must be " + to_string(want) + ", got " + to_string(offsets.shape()));
  }
  const std::size_t plane = h * w;
  const Tensor& m = map.value();
  const Tensor& off = offsets.value();
  Tensor out(map.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = i * w + j;
        const double y = static_cast<double>(i) + off[(b * 2 + 0) * plane + p];
        const double x = static_cast<double>(j) + off[(b * 2 + 1) * plane + p];
        const BilinearTaps taps = bilinear_taps(y, x, h, w);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (b * c + ch) * plane;
          out[base + p] = sample_plane(m.raw() + base, taps);
        }
      }
  return map.tape().record("deform_resample", std::move(out), {map, offsets},
                           [map, offsets, n, c, h, w](Tape& t, std::uint32_t self) {
                             const std::size_t plane = h * w;
                             const Tensor& g = t.grad_of(self);
                             const Tensor& m = map.value();
                             const Tensor& off = offsets.value();
                             Tensor* gm = map.requires_grad() ? &t.grad_buffer(map.id()) : nullptr;
                             Tensor* go = offsets.requires_grad() ? &t.grad_buffer(offsets.id()) : nullptr;
                             for (std::size_t b = 0; b < n; ++b)
                               for (std::size_t i = 0; i < h; ++i)
                                 for (std::size_t j = 0; j < w; ++j) {
                                   const std::size_t p = i * w + j;
                                   const double y = static_cast<double>(i) + off[(b * 2 + 0) * plane + p];
                                   const double x = static_cast<double>(j) + off[(b * 2 + 1) * plane + p];
                                   const BilinearTaps taps = bilinear_taps(y, x, h, w);
                                   double gy = 0.0, gx = 0.0;
                                   for (std::size_t ch = 0; ch < c; ++ch) {
                                     const std::size_t base = (b * c + ch) * plane;
                                     const double gv = g[base + p];
                                     if (gm) {
                                       for (int k = 0; k < 4; ++k)
                                         if (taps.index[k] >= 0)
                                           (*gm)[base + static_cast<std::size_t>(taps.index[k])] += taps.weight[k] * gv;
                                     }
                                     if (go) {
                                       double dy, dx;
                                       sample_plane_grad(m.raw() + base, taps, dy, dx);
                                       gy += gv * dy;
                                       gx += gv * dx;
                                     }
                                   }
                                   if (go) {
                                     (*go)[(b * 2 + 0) * plane + p] += gy;
                                     (*go)[(b * 2 + 1) * plane + p] += gx;
                                   }
                                 }
                           });
}

Var detach(Var input) { return input.tape().constant(input.value()); }

Var to_tokens(Var input) {
  require_rank(input, 4, "to_tokens", "input");
  const Shape& s = input.shape();
  return transpose(reshape(input, Shape{s[0], s[1], s[2] * s[3]}), 1, 2);
}

Var from_tokens(Var tokens, std::size_t height, std::size_t width) {
  require_rank(tokens, 3, "from_tokens", "tokens");
  const Shape& s = tokens.shape();
  if (s[1] != height * width) {
    throw ShapeError("from_tokens: token axis (1) has " + std::to_string(s[1]) + " entries, expected " +
                     std::to_string(height * width));
  }
  return reshape(transpose(tokens, 1, 2), Shape{s[0], s[2], height, width});
}

}  // namespace eatkit::ops

namespace eatkit {

Tensor bilinear_sample(const Tensor& map, double y, double x) {
  if (map.rank() != 3) throw ShapeError("bilinear_sample: map must be C×H×W, got " + to_string(map.shape()));
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const auto taps = ops::bilinear_taps(y, x, h, w);
  Tensor out(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] = ops::sample_plane(map.raw() + ch * h * w, taps);
  return out;
}

}  // namespace eatkit
