#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "ecgan/error.hpp"
#include "ecgan/ops.hpp"
#include "gemm.hpp"

namespace ecgan::ops {

using detail::TensorData;

Tensor randn(const Shape& shape, Rng& rng) {
  if (shape.empty()) throw ShapeError("randn: empty shape");
  for (int d : shape) {
    if (d <= 0) throw ShapeError("randn: invalid shape " + shape_str(shape));
  }
  Tensor t = Tensor::zeros(shape);
  for (Real& v : t.data()) v = static_cast<Real>(rng.normal());
  return t;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm::map(out.data().data(), m, n) = gemm::cmap(a.data().data(), m, k) * gemm::cmap(b.data().data(), k, n);
  auto ai = a.impl(), bi = b.impl();
  tape.record({&a, &b}, out, [ai, bi, m, k, n](const TensorData& o) {
    auto gout = gemm::cmap(o.grad.data(), m, n);
    if (Real* ga = grad_target(ai)) {
      gemm::map(ga, m, k).noalias() += gout * gemm::cmap(bi->data.data(), k, n).transpose();
    }
    if (Real* gb = grad_target(bi)) {
      gemm::map(gb, k, n).noalias() += gemm::cmap(ai->data.data(), m, k).transpose() * gout;
    }
  });
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  const int n = x.dim(0), in = x.dim(1), outf = w.dim(0);
  if (bias && (bias->numel() != static_cast<std::size_t>(outf))) {
    throw ShapeError("linear: bias " + shape_str(bias->shape()) + " does not match " + std::to_string(outf) +
                     " outputs");
  }
  Tensor out = Tensor::zeros({n, outf});
  auto o = gemm::map(out.data().data(), n, outf);
  if (n > 0) {
    o.noalias() = gemm::cmap(x.data().data(), n, in) * gemm::cmap(w.data().data(), outf, in).transpose();
    if (bias) o.rowwise() += gemm::crow(bias->data().data(), outf);
  }
  auto xi = x.impl(), wi = w.impl();
  std::shared_ptr<TensorData> bi = bias ? bias->impl() : nullptr;
  const Tensor* bias_ptr = bias ? &*bias : nullptr;
  auto fn = [xi, wi, bi, n, in, outf](const TensorData& od) {
    if (n == 0) return;
    auto gout = gemm::cmap(od.grad.data(), n, outf);
    if (Real* gx = grad_target(xi)) {
      gemm::map(gx, n, in).noalias() += gout * gemm::cmap(wi->data.data(), outf, in);
    }
    if (Real* gw = grad_target(wi)) {
      gemm::map(gw, outf, in).noalias() += gout.transpose() * gemm::cmap(xi->data.data(), n, in);
    }
    if (bi) {
      if (Real* gb = grad_target(bi)) gemm::row(gb, outf) += gout.colwise().sum();
    }
  };
  if (bias_ptr) {
    tape.record({&x, &w, bias_ptr}, out, fn);
  } else {
    tape.record({&x, &w}, out, fn);
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  auto ai = a.impl(), bi = b.impl();
  tape.record({&a, &b}, out, [ai, bi](const TensorData& od) {
    for (const auto& in : {ai, bi}) {
      if (Real* g = grad_target(in)) {
        for (std::size_t i = 0; i < od.grad.size(); ++i) g[i] += od.grad[i];
      }
    }
  });
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, Real factor) {
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.data();
  auto av = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * factor;
  auto ai = a.impl();
  tape.record({&a}, out, [ai, factor](const TensorData& od) {
    if (Real* g = grad_target(ai)) {
      for (std::size_t i = 0; i < od.grad.size(); ++i) g[i] += od.grad[i] * factor;
    }
  });
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double acc = 0.0;
  for (Real v : a.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<Real>(acc));
  auto ai = a.impl();
  tape.record({&a}, out, [ai](const TensorData& od) {
    if (Real* g = grad_target(ai)) {
      const Real go = od.grad[0];
      for (std::size_t i = 0; i < ai->data.size(); ++i) g[i] += go;
    }
  });
  return out;
}

Tensor mean(Tape& tape, const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(tape, sum(tape, a), Real(1) / static_cast<Real>(a.numel()));
}

Tensor weighted_sum(Tape& tape, const Tensor& a, std::span<const Real> weights) {
  if (weights.size() != a.numel()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(a.numel()) + " values");
  }
  double acc = 0.0;
  auto av = a.data();
  for (std::size_t i = 0; i < av.size(); ++i) acc += static_cast<double>(av[i]) * weights[i];
  Tensor out = Tensor::scalar(static_cast<Real>(acc));
  auto ai = a.impl();
  std::vector<Real> w(weights.begin(), weights.end());
  tape.record({&a}, out, [ai, w = std::move(w)](const TensorData& od) {
    if (Real* g = grad_target(ai)) {
      const Real go = od.grad[0];
      for (std::size_t i = 0; i < w.size(); ++i) g[i] += go * w[i];
    }
  });
  return out;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor out = Tensor::from(std::move(shape), std::vector<Real>(a.data().begin(), a.data().end()));
  auto ai = a.impl();
  tape.record({&a}, out, [ai](const TensorData& od) {
    if (Real* g = grad_target(ai)) {
      for (std::size_t i = 0; i < od.grad.size(); ++i) g[i] += od.grad[i];
    }
  });
  return out;
}

Tensor flatten(Tape& tape, const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("flatten needs rank >= 2, got " + shape_str(a.shape()));
  const int n = a.dim(0);
  const int rest = n == 0 ? 0 : static_cast<int>(a.numel() / static_cast<std::size_t>(n));
  if (n == 0) {
    int r = 1;
    for (std::size_t i = 1; i < a.rank(); ++i) r *= a.dim(i);
    return reshape(tape, a, {0, r});
  }
  return reshape(tape, a, {n, rest});
}

Tensor select_rows(Tape& tape, const Tensor& a, std::span<const int> rows) {
  if (a.rank() < 1) throw ShapeError("select_rows on a rank-0 tensor");
  const int n = a.dim(0);
  std::size_t row_size = 1;
  for (std::size_t i = 1; i < a.rank(); ++i) row_size *= static_cast<std::size_t>(a.dim(i));
  Shape shape = a.shape();
  shape[0] = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros(shape);
  auto o = out.data();
  auto av = a.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) {
      throw ShapeError("select_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       shape_str(a.shape()));
    }
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(rows[r] * row_size), row_size,
                o.begin() + static_cast<std::ptrdiff_t>(r * row_size));
  }
  auto ai = a.impl();
  std::vector<int> idx(rows.begin(), rows.end());
  tape.record({&a}, out, [ai, idx = std::move(idx), row_size](const TensorData& od) {
    if (Real* g = grad_target(ai)) {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        Real* dst = g + static_cast<std::size_t>(idx[r]) * row_size;
        const Real* src = od.grad.data() + r * row_size;
        for (std::size_t j = 0; j < row_size; ++j) dst[j] += src[j];
      }
    }
  });
  return out;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor out = Tensor::zeros({n, ca + cb, a.dim(2), a.dim(3)});
  auto o = out.data();
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(i * ca * hw), ca * hw,
                o.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) * hw));
    std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(i * cb * hw), cb * hw,
                o.begin() + static_cast<std::ptrdiff_t>((i * (ca + cb) + ca) * hw));
  }
  auto ai = a.impl(), bi = b.impl();
  tape.record({&a, &b}, out, [ai, bi, n, ca, cb, hw](const TensorData& od) {
    Real* ga = grad_target(ai);
    Real* gb = grad_target(bi);
    for (int i = 0; i < n; ++i) {
      const Real* src = od.grad.data() + static_cast<std::size_t>(i) * (ca + cb) * hw;
      if (ga) {
        Real* dst = ga + static_cast<std::size_t>(i) * ca * hw;
        for (std::size_t j = 0; j < ca * hw; ++j) dst[j] += src[j];
      }
      if (gb) {
        Real* dst = gb + static_cast<std::size_t>(i) * cb * hw;
        for (std::size_t j = 0; j < cb * hw; ++j) dst[j] += src[ca * hw + j];
      }
    }
  });
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::zeros({n, c});
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) acc += xv[i * hw + j];
    o[i] = static_cast<Real>(acc / static_cast<double>(hw));
  }
  auto xi = x.impl();
  tape.record({&x}, out, [xi, hw](const TensorData& od) {
    if (Real* g = grad_target(xi)) {
      const Real inv = Real(1) / static_cast<Real>(hw);
      for (std::size_t i = 0; i < od.grad.size(); ++i) {
        const Real go = od.grad[i] * inv;
        for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] += go;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <class F, class D>
Tensor unary(Tape& tape, const Tensor& x, F forward, D derivative) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = forward(xv[i]);
  auto xi = x.impl();
  // derivative(x, y) receives both input and output values.
  tape.record({&x}, out, [xi, derivative](const TensorData& od) {
    if (Real* g = grad_target(xi)) {
      for (std::size_t i = 0; i < od.grad.size(); ++i) g[i] += od.grad[i] * derivative(xi->data[i], od.data[i]);
    }
  });
  return out;
}

thread_local std::vector<std::uint8_t>* g_probe = nullptr;

void probe_signs(const Tensor& x) {
  if (!g_probe) return;
  for (Real v : x.data()) g_probe->push_back(v > 0 ? 1 : 0);
}

}  // namespace

void set_activation_probe(std::vector<std::uint8_t>* probe) { g_probe = probe; }

Tensor relu(Tape& tape, const Tensor& x) {
  probe_signs(x);
  return unary(
      tape, x, [](Real v) { return v > 0 ? v : Real(0); }, [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

Tensor leaky_relu(Tape& tape, const Tensor& x, Real slope) {
  probe_signs(x);
  return unary(
      tape, x, [slope](Real v) { return v > 0 ? v : slope * v; },
      [slope](Real v, Real) { return v > 0 ? Real(1) : slope; });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real(1) - y * y; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = unary(
      tape, x,
      [](Real v) {
        return v >= 0 ? Real(1) / (Real(1) + std::exp(-v)) : std::exp(v) / (Real(1) + std::exp(v));
      },
      [](Real, Real y) { return y * (Real(1) - y); });
  out.impl()->logit = x.impl();
  return out;
}

Tensor activation(Tape& tape, Activation kind, const Tensor& x, Real slope) {
  switch (kind) {
    case Activation::identity:
      return x;
    case Activation::relu:
      return relu(tape, x);
    case Activation::leaky_relu:
      return leaky_relu(tape, x, slope);
    case Activation::tanh:
      return tanh(tape, x);
    case Activation::sigmoid:
      return sigmoid(tape, x);
  }
  throw ContractError("unknown activation");
}

}  // namespace ecgan::ops
