#include <algorithm>
#include <cmath>

#include "ecgan/error.hpp"
#include "ecgan/ops.hpp"

namespace ecgan::ops {

using detail::TensorData;

Tensor softmax(Tape& tape, const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2) {
    throw ShapeError("softmax expects [N,K] with K >= 2, got " + shape_str(logits.shape()));
  }
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor out = Tensor::zeros(logits.shape());
  auto z = logits.data();
  auto o = out.data();
  for (int i = 0; i < n; ++i) {
    const Real* row = z.data() + static_cast<std::size_t>(i) * k;
    Real* orow = o.data() + static_cast<std::size_t>(i) * k;
    const Real mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j] - mx));
    for (int j = 0; j < k; ++j) orow[j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)) / s);
  }
  auto zi = logits.impl();
  tape.record({&logits}, out, [zi, n, k](const TensorData& od) {
    Real* gz = grad_target(zi);
    if (!gz) return;
    for (int i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * k;
      double dot = 0.0;
      for (int j = 0; j < k; ++j) dot += static_cast<double>(od.grad[base + j]) * od.data[base + j];
      for (int j = 0; j < k; ++j) gz[base + j] += od.data[base + j] * (od.grad[base + j] - static_cast<Real>(dot));
    }
  });
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels, std::span<const Real> weights) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects [N,K], got " + shape_str(logits.shape()));
  const int n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  if (!weights.empty() && weights.size() != labels.size()) {
    throw ShapeError("cross_entropy: weight count does not match batch size");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw InvalidLabelError("cross_entropy: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                              " outside [0," + std::to_string(k) + ")");
    }
    if (!weights.empty() && weights[i] < 0) throw ContractError("cross_entropy: negative weight");
  }

  Tensor out = Tensor::scalar(Real(0));
  if (n == 0) {
    tape.record({&logits}, out, [](const TensorData&) {});
    return out;
  }
  auto z = logits.data();
  std::vector<Real> prob(static_cast<std::size_t>(n) * k);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const Real* row = z.data() + static_cast<std::size_t>(i) * k;
    const Real mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j] - mx));
    const double lse = std::log(s) + mx;
    for (int j = 0; j < k; ++j) {
      prob[static_cast<std::size_t>(i) * k + j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)) / s);
    }
    const double w = weights.empty() ? 1.0 : weights[i];
    total += w * (lse - row[labels[i]]);
  }
  out.data()[0] = static_cast<Real>(total / n);

  auto zi = logits.impl();
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<Real> w(weights.begin(), weights.end());
  tape.record({&logits}, out,
              [zi, n, k, prob = std::move(prob), lab = std::move(lab), w = std::move(w)](const TensorData& od) {
                Real* gz = grad_target(zi);
                if (!gz) return;
                const Real go = od.grad[0] / static_cast<Real>(n);
                for (int i = 0; i < n; ++i) {
                  const Real scale = go * (w.empty() ? Real(1) : w[i]);
                  const std::size_t base = static_cast<std::size_t>(i) * k;
                  for (int j = 0; j < k; ++j) {
                    const Real onehot = (j == lab[i]) ? Real(1) : Real(0);
                    gz[base + j] += scale * (prob[base + j] - onehot);
                  }
                }
              });
  return out;
}

Tensor bce(Tape& tape, const Tensor& p, std::span<const Real> targets) {
  const std::size_t n = p.numel();
  if (targets.size() != n) {
    throw ShapeError("bce: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " probabilities");
  }
  if (n == 0) throw ShapeError("bce on an empty batch");
  std::vector<Real> y(targets.begin(), targets.end());
  Tensor out = Tensor::scalar(Real(0));

  const auto& logit = p.impl()->logit;
  if (logit && logit->data.size() == n) {
    // Stable route: -[y log s(z) + (1-y) log(1-s(z))] = max(z,0) - z*y + log1p(exp(-|z|)).
    static const double kLimit = std::log((1.0 - kBceEps) / kBceEps);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double zc = std::clamp(static_cast<double>(logit->data[i]), -kLimit, kLimit);
      total += std::max(zc, 0.0) - zc * y[i] + std::log1p(std::exp(-std::abs(zc)));
    }
    out.data()[0] = static_cast<Real>(total / static_cast<double>(n));
    Tensor logit_tensor(logit);
    tape.record({&logit_tensor}, out, [logit, y = std::move(y)](const TensorData& od) {
      Real* gz = grad_target(logit);
      if (!gz) return;
      const double go = static_cast<double>(od.grad[0]) / static_cast<double>(y.size());
      // d/dz of the unclamped loss; the clamp only floors the reported value.
      // s(z) - y written as (1-y) s(z) - y s(-z) keeps precision near s = 1.
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double z = logit->data[i];
        const double s_pos = 1.0 / (1.0 + std::exp(-z));
        const double s_neg = 1.0 / (1.0 + std::exp(z));
        gz[i] += static_cast<Real>(go * ((1.0 - y[i]) * s_pos - y[i] * s_neg));
      }
    });
    return out;
  }

  auto pv = p.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = std::clamp(static_cast<double>(pv[i]), static_cast<double>(kBceEps), 1.0 - kBceEps);
    total -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  out.data()[0] = static_cast<Real>(total / static_cast<double>(n));
  auto pi = p.impl();
  tape.record({&p}, out, [pi, y = std::move(y)](const TensorData& od) {
    Real* gp = grad_target(pi);
    if (!gp) return;
    const double go = od.grad[0] / static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double pr = pi->data[i];
      if (pr <= kBceEps || pr >= 1.0 - kBceEps) continue;
      gp[i] += static_cast<Real>(go * (-y[i] / pr + (1.0 - y[i]) / (1.0 - pr)));
    }
  });
  return out;
}

Tensor bce(Tape& tape, const Tensor& p, Real target) {
  std::vector<Real> t(p.numel(), target);
  return bce(tape, p, t);
}

}  // namespace ecgan::ops
