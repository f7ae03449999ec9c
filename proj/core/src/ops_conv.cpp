#include <algorithm>
#include <memory>
#include <utility>

#include "ecgan/error.hpp"
#include "ecgan/ops.hpp"
#include "gemm.hpp"

namespace ecgan::ops {

using detail::TensorData;

namespace {

struct Geometry {
  int n, c, h, w;   // image side ("input" of the forward conv)
  int kh, kw;
  int stride, pad;
  int oh, ow;       // column side ("output" of the forward conv)
  std::size_t rows() const { return static_cast<std::size_t>(c) * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(n) * oh * ow; }
};

// Uninitialized scratch; every element is written before it is read.
std::unique_ptr<Real[]> scratch(std::size_t n) { return std::unique_ptr<Real[]>(new Real[n]); }

// Output columns ox whose input column ox*s-p+j lies inside [0, w).
std::pair<int, int> valid_range(const Geometry& g, int j) {
  const int off = j - g.pad;
  int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  int hi = g.w - off <= 0 ? 0 : (g.w - off + g.stride - 1) / g.stride;
  lo = std::min(lo, g.ow);
  hi = std::clamp(hi, lo, g.ow);
  return {lo, hi};
}

// cols[(ci*kh+i)*kw+j, (b*oh+oy)*ow+ox] = img[b, ci, oy*s-p+i, ox*s-p+j] (0 outside).
void im2col(const Real* img, const Geometry& g, Real* cols) {
  const std::size_t ncols = g.cols();
  const std::size_t plane = static_cast<std::size_t>(g.oh) * g.ow;
  for (int ci = 0; ci < g.c; ++ci) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        Real* row = cols + ((static_cast<std::size_t>(ci) * g.kh + i) * g.kw + j) * ncols;
        for (int b = 0; b < g.n; ++b) {
          const Real* src = img + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
          Real* dst = row + b * plane;
          for (int oy = 0; oy < g.oh; ++oy) {
            const int y = oy * g.stride - g.pad + i;
            Real* drow = dst + static_cast<std::size_t>(oy) * g.ow;
            if (y < 0 || y >= g.h) {
              std::fill_n(drow, g.ow, Real(0));
              continue;
            }
            const Real* srow = src + static_cast<std::size_t>(y) * g.w;
            const auto [lo, hi] = valid_range(g, j);
            std::fill(drow, drow + lo, Real(0));
            if (g.stride == 1) {
              std::copy_n(srow + (lo - g.pad + j), hi - lo, drow + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) drow[ox] = srow[ox * g.stride - g.pad + j];
            }
            std::fill(drow + hi, drow + g.ow, Real(0));
          }
        }
      }
    }
  }
}

// Adjoint of im2col: img += scatter(cols).
void col2im(const Real* cols, const Geometry& g, Real* img) {
  const std::size_t ncols = g.cols();
  const std::size_t plane = static_cast<std::size_t>(g.oh) * g.ow;
  for (int ci = 0; ci < g.c; ++ci) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const Real* row = cols + ((static_cast<std::size_t>(ci) * g.kh + i) * g.kw + j) * ncols;
        for (int b = 0; b < g.n; ++b) {
          Real* dst = img + (static_cast<std::size_t>(b) * g.c + ci) * g.h * g.w;
          const Real* src = row + b * plane;
          for (int oy = 0; oy < g.oh; ++oy) {
            const int y = oy * g.stride - g.pad + i;
            if (y < 0 || y >= g.h) continue;
            Real* drow = dst + static_cast<std::size_t>(y) * g.w;
            const Real* srow = src + static_cast<std::size_t>(oy) * g.ow;
            const auto [lo, hi] = valid_range(g, j);
            for (int ox = lo; ox < hi; ++ox) drow[ox * g.stride - g.pad + j] += srow[ox];
          }
        }
      }
    }
  }
}

// [N, C, P] <-> [C, N*P]
void nchw_to_cnp(const Real* src, int n, int c, std::size_t p, Real* dst) {
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      std::copy_n(src + (static_cast<std::size_t>(b) * c + ci) * p, p, dst + (static_cast<std::size_t>(ci) * n + b) * p);
}

void cnp_to_nchw(const Real* src, int n, int c, std::size_t p, Real* dst) {
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      std::copy_n(src + (static_cast<std::size_t>(ci) * n + b) * p, p, dst + (static_cast<std::size_t>(b) * c + ci) * p);
}

void check_bias(const std::optional<Tensor>& bias, int channels, const char* op) {
  if (bias && bias->numel() != static_cast<std::size_t>(channels)) {
    throw ShapeError(std::string(op) + ": bias " + shape_str(bias->shape()) + " for " + std::to_string(channels) +
                     " output channels");
  }
}

void add_bias(Real* out, const Real* bias, int n, int c, std::size_t p) {
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci) {
      Real* o = out + (static_cast<std::size_t>(b) * c + ci) * p;
      for (std::size_t i = 0; i < p; ++i) o[i] += bias[ci];
    }
}

void bias_grad(const Real* gout, int n, int c, std::size_t p, Real* gb) {
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci) {
      const Real* g = gout + (static_cast<std::size_t>(b) * c + ci) * p;
      Real acc = 0;
      for (std::size_t i = 0; i < p; ++i) acc += g[i];
      gb[ci] += acc;
    }
}

void record_with_bias(Tape& tape, const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, Tensor& out,
                      Tape::BackwardFn fn) {
  if (bias) {
    tape.record({&x, &w, &*bias}, out, std::move(fn));
  } else {
    tape.record({&x, &w}, out, std::move(fn));
  }
}

}  // namespace

int conv_out_size(int in, int kernel, ConvParams p) {
  if (p.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (p.pad < 0) throw ShapeError("conv2d: negative padding");
  if (in + 2 * p.pad < kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * p.pad));
  }
  return (in + 2 * p.pad - kernel) / p.stride + 1;
}

int conv_transpose_out_size(int in, int kernel, ConvParams p) {
  if (p.stride < 1) throw ShapeError("conv_transpose2d: stride must be >= 1");
  if (p.pad < 0) throw ShapeError("conv_transpose2d: negative padding");
  const int out = (in - 1) * p.stride - 2 * p.pad + kernel;
  if (out <= 0) throw ShapeError("conv_transpose2d: output size " + std::to_string(out) + " <= 0");
  return out;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, ConvParams p) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  const int cout = w.dim(0);
  check_bias(bias, cout, "conv2d");
  Geometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), p.stride, p.pad, 0, 0};
  g.oh = conv_out_size(g.h, g.kh, p);
  g.ow = conv_out_size(g.w, g.kw, p);
  const std::size_t plane = static_cast<std::size_t>(g.oh) * g.ow;

  Tensor out = Tensor::zeros({g.n, cout, g.oh, g.ow});
  if (g.n > 0) {
    auto cols = scratch(g.rows() * g.cols());
    im2col(x.data().data(), g, cols.get());
    auto res = scratch(static_cast<std::size_t>(cout) * g.cols());
    gemm::map(res.get(), cout, g.cols()).noalias() =
        gemm::cmap(w.data().data(), cout, g.rows()) * gemm::cmap(cols.get(), g.rows(), g.cols());
    cnp_to_nchw(res.get(), g.n, cout, plane, out.data().data());
    if (bias) add_bias(out.data().data(), bias->data().data(), g.n, cout, plane);
  }

  auto xi = x.impl(), wi = w.impl();
  std::shared_ptr<TensorData> bi = bias ? bias->impl() : nullptr;
  record_with_bias(tape, x, w, bias, out, [xi, wi, bi, g, cout, plane](const TensorData& od) {
    if (g.n == 0) return;
    auto gres = scratch(static_cast<std::size_t>(cout) * g.cols());
    nchw_to_cnp(od.grad.data(), g.n, cout, plane, gres.get());
    auto gr = gemm::cmap(gres.get(), cout, g.cols());
    if (Real* gw = grad_target(wi)) {
      auto cols = scratch(g.rows() * g.cols());
      im2col(xi->data.data(), g, cols.get());
      gemm::map(gw, cout, g.rows()).noalias() += gr * gemm::cmap(cols.get(), g.rows(), g.cols()).transpose();
    }
    if (Real* gx = grad_target(xi)) {
      auto gcols = scratch(g.rows() * g.cols());
      gemm::map(gcols.get(), g.rows(), g.cols()).noalias() =
          gemm::cmap(wi->data.data(), cout, g.rows()).transpose() * gr;
      col2im(gcols.get(), g, gx);
    }
    if (bi) {
      if (Real* gb = grad_target(bi)) bias_grad(od.grad.data(), g.n, cout, plane, gb);
    }
  });
  return out;
}

Tensor conv_transpose2d(Tape& tape, const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
                        ConvParams p) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(0)) {
    throw ShapeError("conv_transpose2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  }
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  check_bias(bias, cout, "conv_transpose2d");
  const int oh = conv_transpose_out_size(h, kh, p);
  const int ow = conv_transpose_out_size(wd, kw, p);
  // Seen from the output side this is a conv2d with the roles of image and columns swapped.
  Geometry g{n, cout, oh, ow, kh, kw, p.stride, p.pad, h, wd};
  if (conv_out_size(oh, kh, p) != h || conv_out_size(ow, kw, p) != wd) {
    throw ShapeError("conv_transpose2d: geometry does not invert");
  }
  const std::size_t in_plane = static_cast<std::size_t>(h) * wd;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;

  Tensor out = Tensor::zeros({n, cout, oh, ow});
  if (n > 0) {
    auto xc = scratch(static_cast<std::size_t>(cin) * g.cols());
    nchw_to_cnp(x.data().data(), n, cin, in_plane, xc.get());
    auto cols = scratch(g.rows() * g.cols());
    gemm::map(cols.get(), g.rows(), g.cols()).noalias() =
        gemm::cmap(w.data().data(), cin, g.rows()).transpose() * gemm::cmap(xc.get(), cin, g.cols());
    col2im(cols.get(), g, out.data().data());
    if (bias) add_bias(out.data().data(), bias->data().data(), n, cout, out_plane);
  }

  auto xi = x.impl(), wi = w.impl();
  std::shared_ptr<TensorData> bi = bias ? bias->impl() : nullptr;
  record_with_bias(tape, x, w, bias, out, [xi, wi, bi, g, cin, in_plane, out_plane](const TensorData& od) {
    if (g.n == 0) return;
    auto gcols = scratch(g.rows() * g.cols());
    im2col(od.grad.data(), g, gcols.get());
    auto gc = gemm::cmap(gcols.get(), g.rows(), g.cols());
    if (Real* gx = grad_target(xi)) {
      const std::size_t gxc_n = static_cast<std::size_t>(cin) * g.cols();
      auto gxc = scratch(gxc_n);
      gemm::map(gxc.get(), cin, g.cols()).noalias() = gemm::cmap(wi->data.data(), cin, g.rows()) * gc;
      auto tmp = scratch(gxc_n);
      cnp_to_nchw(gxc.get(), g.n, cin, in_plane, tmp.get());
      for (std::size_t i = 0; i < gxc_n; ++i) gx[i] += tmp[i];
    }
    if (Real* gw = grad_target(wi)) {
      auto xc = scratch(static_cast<std::size_t>(cin) * g.cols());
      nchw_to_cnp(xi->data.data(), g.n, cin, in_plane, xc.get());
      gemm::map(gw, cin, g.rows()).noalias() += gemm::cmap(xc.get(), cin, g.cols()) * gc.transpose();
    }
    if (bi) {
      if (Real* gb = grad_target(bi)) bias_grad(od.grad.data(), g.n, g.c, out_plane, gb);
    }
  });
  return out;
}

}  // namespace ecgan::ops
