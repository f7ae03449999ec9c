#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ecgan/rng.hpp"
#include "ecgan/tensor.hpp"

namespace ecgan::ops {

// ---------------------------------------------------------------------------
// Construction

/// i.i.d. N(0,1) entries. Throws ShapeError for an empty shape or a dimension <= 0.
Tensor randn(const Shape& shape, Rng& rng);

// ---------------------------------------------------------------------------
// Dense algebra

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// x[N,in] * w[out,in]^T + bias[out].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, Real factor);
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
/// Sum of a[i] * weights[i]; weights are constants.
Tensor weighted_sum(Tape& tape, const Tensor& a, std::span<const Real> weights);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);
/// [N, ...] -> [N, prod(...)].
Tensor flatten(Tape& tape, const Tensor& a);
/// Rows (first-axis slices) of `a` in the given order; an empty list gives shape [0, ...].
Tensor select_rows(Tape& tape, const Tensor& a, std::span<const int> rows);
/// Concatenate two NCHW tensors along the channel axis.
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
/// [N,C,H,W] -> [N,C].
Tensor global_avg_pool(Tape& tape, const Tensor& x);

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation, zero padding)

struct ConvParams {
  int stride = 1;
  int pad = 0;
};

/// x[N,Cin,H,W], w[Cout,Cin,kh,kw] -> [N,Cout,H',W'], H' = (H+2p-kh)/s + 1.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
              ConvParams p);

/// x[N,Cin,H,W], w[Cin,Cout,kh,kw] -> [N,Cout,H',W'], H' = (H-1)s - 2p + kh.
/// The forward pass is the input-gradient operator of conv2d with the same weight.
Tensor conv_transpose2d(Tape& tape, const Tensor& x, const Tensor& w,
                        const std::optional<Tensor>& bias, ConvParams p);

/// Output spatial size of conv2d; throws ShapeError when the kernel does not fit.
int conv_out_size(int in, int kernel, ConvParams p);
/// Output spatial size of conv_transpose2d; throws ShapeError when it is <= 0.
int conv_transpose_out_size(int in, int kernel, ConvParams p);

// ---------------------------------------------------------------------------
// Batch normalization

enum class Mode { train, eval };

struct BatchNormOptions {
  Mode mode = Mode::train;
  Real momentum = Real(0.1);
  Real eps = Real(1e-5);
  /// In train mode, fold batch statistics into the running estimates.
  bool update_running = true;
};

/// Per-channel normalization of x[N,C,H,W] followed by gamma/beta affine.
/// running_mean/running_var are updated in place (train mode, update_running).
Tensor batchnorm2d(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, const BatchNormOptions& opt);

// ---------------------------------------------------------------------------
// Activations

enum class Activation { identity, relu, leaky_relu, tanh, sigmoid };

inline constexpr Real kLeakySlope = Real(0.2);

Tensor relu(Tape& tape, const Tensor& x);
Tensor leaky_relu(Tape& tape, const Tensor& x, Real slope = kLeakySlope);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor activation(Tape& tape, Activation kind, const Tensor& x, Real slope = kLeakySlope);

/// Diagnostic hook for finite-difference checks: while set, relu and
/// leaky_relu append one byte (x > 0) per input element to `probe`.
/// Thread-local; pass nullptr to detach.
void set_activation_probe(std::vector<std::uint8_t>* probe);

// ---------------------------------------------------------------------------
// Probabilities and losses

/// Row-wise softmax of logits[N,K] (K >= 2), max-subtracted.
Tensor softmax(Tape& tape, const Tensor& logits);

/// Mean over rows of -log softmax(logits)[label] (times weights[i] when given).
/// N = 0 returns exactly 0. Throws InvalidLabelError for labels outside [0,K).
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels,
                     std::span<const Real> weights = {});

inline constexpr Real kBceEps = Real(1e-7);

/// Mean binary cross-entropy of probabilities p[N,1] against 0/1 targets.
///
/// When p is the output of sigmoid() on the same tape the loss is evaluated
/// from the pre-activation logits with the log-sum-exp form, and the gradient
/// goes straight to the logits. Either way probabilities are clamped to
/// [kBceEps, 1 - kBceEps] for the value.
Tensor bce(Tape& tape, const Tensor& p, std::span<const Real> targets);
Tensor bce(Tape& tape, const Tensor& p, Real target);

}  // namespace ecgan::ops
