#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ecgan/real.hpp"

namespace ecgan {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t tape_uid = 0;  // 0: leaf / not produced on a tape
  std::int64_t node_index = -1;
  // Set on the output of sigmoid(): the pre-activation tensor, so that bce()
  // can take the numerically stable logit route.
  std::shared_ptr<TensorData> logit;

  Real* grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

/// Dense row-major real tensor with an optional gradient.
///
/// Copies are shallow (they share storage), the way parameter handles are
/// passed around in every autograd framework. Use clone() for a deep copy.
class Tensor {
 public:
  /// Empty tensor of shape [0].
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  int dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<Real> data() { return impl_->data; }
  std::span<const Real> data() const { return impl_->data; }
  Real operator[](std::size_t i) const { return impl_->data[i]; }
  /// Value of a single-element tensor.
  Real item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient view; empty span when no gradient has been accumulated yet.
  std::span<Real> grad() { return impl_->grad; }
  std::span<const Real> grad() const { return impl_->grad; }
  void zero_grad();
  /// True when produced by a recording tape.
  bool on_tape() const { return impl_->tape_uid != 0; }

  /// Deep copy of values (and requires_grad); no gradient, no tape link.
  Tensor clone() const;
  /// Deep copy of values only.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Internal handle used by ops and the tape.
  const std::shared_ptr<detail::TensorData>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorData> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorData> impl_;
};

/// Records differentiable operations in execution order and replays them in
/// reverse to accumulate gradients.
///
/// A disabled tape (Tape::inference()) records nothing; ops run forward only.
class Tape {
 public:
  using BackwardFn = std::function<void(const detail::TensorData& out)>;

  explicit Tape(bool enabled = true);
  static Tape inference() { return Tape(false); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool enabled() const { return enabled_; }
  std::size_t size() const { return nodes_.size(); }

  /// Attaches `out` to the tape when recording is enabled and any input needs
  /// a gradient. `fn` reads out.grad and accumulates into the inputs it captured.
  void record(std::initializer_list<const Tensor*> inputs, Tensor& out, BackwardFn fn);

  /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls;
  /// intermediate gradients are reset at the start of every sweep.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::shared_ptr<detail::TensorData> output;
    BackwardFn fn;
  };
  bool enabled_;
  std::uint64_t uid_;
  std::vector<Node> nodes_;
};

/// Accumulation target for an op input: nullptr when the input takes no gradient.
inline Real* grad_target(const std::shared_ptr<detail::TensorData>& t) {
  return t->requires_grad ? t->grad_buffer() : nullptr;
}

}  // namespace ecgan
