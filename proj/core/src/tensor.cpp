#include "ecgan/tensor.hpp"

#include <algorithm>
#include <atomic>

#include "ecgan/error.hpp"

namespace ecgan {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Real* detail::TensorData::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), Real(0));
  return grad.data();
}

Tensor::Tensor() : impl_(std::make_shared<detail::TensorData>()) { impl_->shape = {0}; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), Real(0), requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto d = std::make_shared<detail::TensorData>();
  d->data.assign(shape_numel(shape), value);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                     " values");
  }
  auto d = std::make_shared<detail::TensorData>();
  d->shape = std::move(shape);
  d->data = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  auto t = from(impl_->shape, impl_->data, impl_->requires_grad);
  return t;
}

Tensor Tensor::detach() const { return from(impl_->shape, impl_->data, false); }

namespace {
std::atomic<std::uint64_t> next_tape_uid{1};
}

Tape::Tape(bool enabled) : enabled_(enabled), uid_(next_tape_uid.fetch_add(1)) {}

void Tape::record(std::initializer_list<const Tensor*> inputs, Tensor& out, BackwardFn fn) {
  if (!enabled_) return;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor* t) { return t->requires_grad(); });
  if (!needs) return;
  auto& d = *out.impl();
  d.requires_grad = true;
  d.tape_uid = uid_;
  d.node_index = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{out.impl(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto& ld = *loss.impl();
  if (ld.tape_uid != uid_) {
    if (ld.tape_uid == 0 && ld.requires_grad) {
      // Loss is itself a leaf.
      loss.impl()->grad_buffer()[0] += Real(1);
      return;
    }
    throw ContractError("backward(): loss was not recorded on this tape");
  }
  for (auto& node : nodes_) node.output->grad.clear();
  loss.impl()->grad_buffer()[0] = Real(1);
  for (std::int64_t i = ld.node_index; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.output->grad.empty()) continue;
    node.fn(*node.output);
  }
}

}  // namespace ecgan
