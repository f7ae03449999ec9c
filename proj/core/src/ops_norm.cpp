#include <cmath>

#include "ecgan/error.hpp"
#include "ecgan/ops.hpp"

namespace ecgan::ops {

using detail::TensorData;

Tensor batchnorm2d(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, const BatchNormOptions& opt) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d expects NCHW, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const auto uc = static_cast<std::size_t>(c);
  if (gamma.numel() != uc || beta.numel() != uc || running_mean.numel() != uc || running_var.numel() != uc) {
    throw ShapeError("batchnorm2d: channel count " + std::to_string(c) + " does not match parameters");
  }
  const bool train = opt.mode == Mode::train;
  const std::size_t count = static_cast<std::size_t>(n) * hw;
  if (train && count == 0) throw ShapeError("batchnorm2d: train mode needs N*H*W >= 1");

  auto xv = x.data();
  std::vector<Real> mean(uc), inv_std(uc);
  for (int ci = 0; ci < c; ++ci) {
    if (train) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) {
        const Real* p = xv.data() + (static_cast<std::size_t>(b) * c + ci) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (int b = 0; b < n; ++b) {
        const Real* p = xv.data() + (static_cast<std::size_t>(b) * c + ci) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[ci] = static_cast<Real>(mu);
      inv_std[ci] = static_cast<Real>(1.0 / std::sqrt(var + opt.eps));
      if (opt.update_running) {
        const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
        auto rm = running_mean.data();
        auto rv = running_var.data();
        rm[ci] = static_cast<Real>((1.0 - opt.momentum) * rm[ci] + opt.momentum * mu);
        rv[ci] = static_cast<Real>((1.0 - opt.momentum) * rv[ci] + opt.momentum * unbiased);
      }
    } else {
      mean[ci] = running_mean[ci];
      inv_std[ci] = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(running_var[ci]) + opt.eps));
    }
  }

  Tensor xhat = Tensor::zeros(x.shape());
  Tensor out = Tensor::zeros(x.shape());
  {
    auto xh = xhat.data();
    auto o = out.data();
    for (int b = 0; b < n; ++b)
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + ci) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const Real h = (xv[base + i] - mean[ci]) * inv_std[ci];
          xh[base + i] = h;
          o[base + i] = gamma[ci] * h + beta[ci];
        }
      }
  }

  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  auto xhi = xhat.impl();
  tape.record({&x, &gamma, &beta}, out,
              [xi, gi, bi, xhi, inv_std = std::move(inv_std), n, c, hw, count, train](const TensorData& od) {
                const auto& gy = od.grad;
                const auto& xh = xhi->data;
                Real* gg = grad_target(gi);
                Real* gb = grad_target(bi);
                Real* gx = grad_target(xi);
                for (int ci = 0; ci < c; ++ci) {
                  double sum_dy = 0.0, sum_dy_xhat = 0.0;
                  for (int b = 0; b < n; ++b) {
                    const std::size_t base = (static_cast<std::size_t>(b) * c + ci) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                      sum_dy += gy[base + i];
                      sum_dy_xhat += static_cast<double>(gy[base + i]) * xh[base + i];
                    }
                  }
                  if (gg) gg[ci] += static_cast<Real>(sum_dy_xhat);
                  if (gb) gb[ci] += static_cast<Real>(sum_dy);
                  if (!gx) continue;
                  const Real g = gi->data[ci];
                  const Real k = g * inv_std[ci];
                  if (train) {
                    const Real m_dy = static_cast<Real>(sum_dy / static_cast<double>(count));
                    const Real m_dyx = static_cast<Real>(sum_dy_xhat / static_cast<double>(count));
                    for (int b = 0; b < n; ++b) {
                      const std::size_t base = (static_cast<std::size_t>(b) * c + ci) * hw;
                      for (std::size_t i = 0; i < hw; ++i) {
                        gx[base + i] += k * (gy[base + i] - m_dy - xh[base + i] * m_dyx);
                      }
                    }
                  } else {
                    for (int b = 0; b < n; ++b) {
                      const std::size_t base = (static_cast<std::size_t>(b) * c + ci) * hw;
                      for (std::size_t i = 0; i < hw; ++i) gx[base + i] += k * gy[base + i];
                    }
                  }
                }
              });
  return out;
}

}  // namespace ecgan::ops
