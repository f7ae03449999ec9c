#include "ecgan/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "ecgan/error.hpp"

namespace ecgan {

std::string_view role_name(Role role) {
  switch (role) {
    case Role::generator:
      return "generator";
    case Role::discriminator:
      return "discriminator";
    case Role::classifier:
      return "classifier";
    case Role::shared_discriminator:
      return "shared_discriminator";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  for (Role r : {Role::generator, Role::discriminator, Role::classifier, Role::shared_discriminator}) {
    if (role_name(r) == name) return r;
  }
  throw SpecError("unknown network role '" + std::string(name) + "'");
}

void NetworkSpec::validate() const {
  if (image_size < 16 || !std::has_single_bit(static_cast<unsigned>(image_size))) {
    throw SpecError("image_size must be a power of two >= 16, got " + std::to_string(image_size));
  }
  if (channels != 1 && channels != 3) throw SpecError("channels must be 1 or 3, got " + std::to_string(channels));
  if (num_classes < 2) throw SpecError("num_classes must be >= 2, got " + std::to_string(num_classes));
  if (base_width < 8) throw SpecError("base_width must be >= 8, got " + std::to_string(base_width));
  if (role == Role::classifier && depth < 1) throw SpecError("classifier depth must be >= 1");
  if (conditional && role != Role::generator && role != Role::discriminator) {
    throw SpecError("conditional is only defined for generator and discriminator");
  }
}

namespace {

int log2i(int v) { return std::bit_width(static_cast<unsigned>(v)) - 1; }

ConvUnit unit(std::string name, bool transpose, int in, int out, int kernel, int stride, int pad, bool norm,
              ops::Activation act, bool bias = false) {
  ConvUnit u;
  u.name = std::move(name);
  u.transpose = transpose;
  u.in = in;
  u.out = out;
  u.kernel = kernel;
  u.stride = stride;
  u.pad = pad;
  u.norm = norm;
  u.act = act;
  u.bias = bias;
  return u;
}

bool is_gan_role(Role r) { return r != Role::classifier; }

}  // namespace

Network::Network(NetworkSpec spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const int s = spec_.image_size;
  const int bw = spec_.base_width;
  using ops::Activation;

  switch (spec_.role) {
    case Role::generator: {
      // z[N,100,1,1] -> 4x4 -> ... -> S x S. Widths halve per doubling and reach
      // base_width just before the output layer.
      const int ups = log2i(s / 4);
      int width = bw << (ups - 1);
      units_.push_back(unit("proj", true, kLatentDim, width, 4, 1, 0, true, Activation::relu));
      for (int i = 1; i < ups; ++i) {
        units_.push_back(unit("up" + std::to_string(i), true, width, width / 2, 4, 2, 1, true, Activation::relu));
        width /= 2;
      }
      units_.push_back(unit("out", true, width, spec_.channels, 4, 2, 1, false, Activation::tanh));
      break;
    }
    case Role::discriminator:
    case Role::shared_discriminator: {
      const int downs = log2i(s / 4);
      int in = spec_.channels;
      int width = bw;
      for (int i = 1; i <= downs; ++i) {
        int unit_in = in;
        if (spec_.conditional && i == 2) unit_in += 1;  // class channel
        units_.push_back(unit("down" + std::to_string(i), false, unit_in, width, 4, 2, 1, i > 1,
                              Activation::leaky_relu));
        in = width;
        width *= 2;
      }
      if (spec_.role == Role::discriminator) {
        heads_.push_back(unit("head", false, in, 1, 4, 1, 0, false, Activation::identity));
      } else {
        heads_.push_back(unit("head_d", false, in, 1, 4, 1, 0, false, Activation::identity));
        heads_.push_back(unit("head_c", false, in, spec_.num_classes, 4, 1, 0, false, Activation::identity, true));
      }
      break;
    }
    case Role::classifier: {
      units_.push_back(unit("stem", false, spec_.channels, bw, 3, 1, 1, true, Activation::relu));
      int in = bw;
      for (int stage = 1; stage <= 4; ++stage) {
        const int width = bw << (stage - 1);
        for (int b = 1; b <= spec_.depth; ++b) {
          const int stride = (stage > 1 && b == 1) ? 2 : 1;
          const std::string base = "layer" + std::to_string(stage) + "." + std::to_string(b);
          ResidualBlock blk;
          blk.conv1 = unit(base + ".conv1", false, in, width, 3, stride, 1, true, Activation::relu);
          blk.conv2 = unit(base + ".conv2", false, width, width, 3, 1, 1, true, Activation::identity);
          if (stride != 1 || in != width) {
            blk.projection = unit(base + ".skip", false, in, width, 1, stride, 0, true, Activation::identity);
          }
          blocks_.push_back(std::move(blk));
          in = width;
        }
      }
      break;
    }
  }

  for (const auto& u : units_) add_unit_params(u);
  for (const auto& b : blocks_) {
    add_unit_params(b.conv1);
    add_unit_params(b.conv2);
    if (b.projection) add_unit_params(*b.projection);
  }
  for (const auto& h : heads_) add_unit_params(h);
  if (spec_.role == Role::classifier) {
    const int feat = bw << 3;
    add_param("fc.weight", {spec_.num_classes, feat});
    add_param("fc.bias", {spec_.num_classes});
  }
  init(rng);
}

void Network::add_param(std::string name, Shape shape, bool trainable) {
  params_.push_back(NamedTensor{std::move(name), Tensor::zeros(std::move(shape), trainable), trainable});
}

void Network::add_unit_params(const ConvUnit& u) {
  if (u.transpose) {
    add_param(u.name + ".weight", {u.in, u.out, u.kernel, u.kernel});
  } else {
    add_param(u.name + ".weight", {u.out, u.in, u.kernel, u.kernel});
  }
  if (u.bias) add_param(u.name + ".bias", {u.out});
  if (u.norm) {
    add_param(u.name + ".bn.gamma", {u.out});
    add_param(u.name + ".bn.beta", {u.out});
    add_param(u.name + ".bn.running_mean", {u.out}, false);
    add_param(u.name + ".bn.running_var", {u.out}, false);
  }
}

namespace {
bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}
}  // namespace

void Network::init(Rng& rng) {
  // GAN roles: N(0, 0.02) weights, gamma ~ N(1, 0.02). Classifier: fan-in
  // scaled normal weights, gamma = 1. Biases and beta start at zero.
  const bool gan = is_gan_role(spec_.role);
  for (auto& p : params_) {
    auto d = p.value.data();
    const std::string& n = p.name;
    if (ends_with(n, ".running_var")) {
      std::fill(d.begin(), d.end(), Real(1));
    } else if (ends_with(n, ".running_mean") || ends_with(n, ".bias") || ends_with(n, ".beta")) {
      std::fill(d.begin(), d.end(), Real(0));
    } else if (ends_with(n, ".gamma")) {
      for (Real& v : d) v = gan ? static_cast<Real>(rng.normal(1.0, 0.02)) : Real(1);
    } else if (ends_with(n, ".weight")) {
      double stddev = 0.02;
      if (!gan) {
        const auto& sh = p.value.shape();
        const std::size_t fan_in = p.value.numel() / static_cast<std::size_t>(sh[0]);
        stddev = (n == "fc.weight") ? std::sqrt(1.0 / fan_in) : std::sqrt(2.0 / fan_in);
      }
      for (Real& v : d) v = static_cast<Real>(rng.normal(0.0, stddev));
    }
  }
}

Tensor& Network::param(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw ContractError("network has no parameter '" + std::string(name) + "'");
}

const Tensor& Network::param(std::string_view name) const {
  return const_cast<Network*>(this)->param(name);
}

bool Network::has_param(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const NamedTensor& p) { return p.name == name; });
}

std::size_t Network::parameter_count() const { return parameter_count(""); }

std::size_t Network::parameter_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable && std::string_view(p.name).substr(0, prefix.size()) == prefix) n += p.value.numel();
  }
  return n;
}

void Network::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Network Network::clone() const {
  Network copy = *this;
  for (auto& p : copy.params_) p.value = p.value.clone();
  return copy;
}

Tensor Network::run_unit(Tape& tape, const ConvUnit& u, const Tensor& x, const ForwardOptions& opt) {
  std::optional<Tensor> bias;
  if (u.bias) bias = param(u.name + ".bias");
  const ops::ConvParams cp{u.stride, u.pad};
  Tensor y = u.transpose ? ops::conv_transpose2d(tape, x, param(u.name + ".weight"), bias, cp)
                         : ops::conv2d(tape, x, param(u.name + ".weight"), bias, cp);
  if (u.norm) {
    ops::BatchNormOptions bn;
    bn.mode = mode_;
    bn.update_running = opt.update_running_stats;
    y = ops::batchnorm2d(tape, y, param(u.name + ".bn.gamma"), param(u.name + ".bn.beta"),
                         param(u.name + ".bn.running_mean"), param(u.name + ".bn.running_var"), bn);
  }
  return ops::activation(tape, u.act, y);
}

Tensor Network::block_forward(Tape& tape, const ResidualBlock& b, const Tensor& x, const ForwardOptions& opt) {
  Tensor h = run_unit(tape, b.conv1, x, opt);
  h = run_unit(tape, b.conv2, h, opt);
  Tensor skip = b.projection ? run_unit(tape, *b.projection, x, opt) : x;
  return ops::relu(tape, ops::add(tape, h, skip));
}

namespace {
void check_images(const NetworkSpec& spec, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != spec.channels || x.dim(2) != spec.image_size || x.dim(3) != spec.image_size) {
    throw ShapeError(std::string(role_name(spec.role)) + " expects [N," + std::to_string(spec.channels) + "," +
                     std::to_string(spec.image_size) + "," + std::to_string(spec.image_size) + "], got " +
                     shape_str(x.shape()));
  }
}
}  // namespace

Tensor Network::trunk(Tape& tape, const Tensor& x, std::span<const int> labels, const ForwardOptions& opt) {
  check_images(spec_, x);
  Tensor h = x;
  for (std::size_t i = 0; i < units_.size(); ++i) {
    if (spec_.conditional && i == 1) {
      const int n = h.dim(0);
      Tensor cls = Tensor::zeros({n, 1, h.dim(2), h.dim(3)});
      const std::size_t plane = static_cast<std::size_t>(h.dim(2)) * h.dim(3);
      auto cd = cls.data();
      for (int b = 0; b < n; ++b) {
        const Real v = encode_class(labels[static_cast<std::size_t>(b)], spec_.num_classes);
        std::fill_n(cd.begin() + static_cast<std::ptrdiff_t>(b * plane), plane, v);
      }
      h = ops::concat_channels(tape, h, cls);
    }
    h = run_unit(tape, units_[i], h, opt);
  }
  return h;
}

Tensor Network::forward(Tape& tape, const Tensor& x, const ForwardOptions& opt) {
  switch (spec_.role) {
    case Role::generator: {
      if (x.rank() != 2 || x.dim(1) != kLatentDim) {
        throw ShapeError("generator expects z of shape [N,100], got " + shape_str(x.shape()));
      }
      Tensor h = ops::reshape(tape, x, {x.dim(0), kLatentDim, 1, 1});
      for (const auto& u : units_) h = run_unit(tape, u, h, opt);
      return h;
    }
    case Role::discriminator: {
      if (spec_.conditional) throw ContractError("conditional discriminator needs labels");
      Tensor h = trunk(tape, x, {}, opt);
      h = run_unit(tape, heads_[0], h, opt);
      return ops::sigmoid(tape, ops::flatten(tape, h));
    }
    case Role::classifier: {
      check_images(spec_, x);
      Tensor h = run_unit(tape, units_[0], x, opt);
      for (const auto& b : blocks_) h = block_forward(tape, b, h, opt);
      h = ops::global_avg_pool(tape, h);
      return ops::linear(tape, h, param("fc.weight"), param("fc.bias"));
    }
    case Role::shared_discriminator:
      return forward_shared(tape, x, opt).logits;
  }
  throw ContractError("unknown role");
}

Tensor Network::forward_conditional(Tape& tape, const Tensor& images, std::span<const int> labels,
                                    const ForwardOptions& opt) {
  if (spec_.role != Role::discriminator || !spec_.conditional) {
    throw ContractError("forward_conditional needs a conditional discriminator");
  }
  if (labels.size() != static_cast<std::size_t>(images.rank() > 0 ? images.dim(0) : 0) || labels.empty()) {
    throw ContractError("conditional discriminator needs one label per image");
  }
  for (int l : labels) {
    if (l < 0 || l >= spec_.num_classes) throw InvalidLabelError("label " + std::to_string(l) + " out of range");
  }
  Tensor h = trunk(tape, images, labels, opt);
  h = run_unit(tape, heads_[0], h, opt);
  return ops::sigmoid(tape, ops::flatten(tape, h));
}

SharedOutput Network::forward_shared(Tape& tape, const Tensor& images, const ForwardOptions& opt) {
  if (spec_.role != Role::shared_discriminator) throw ContractError("forward_shared needs a shared discriminator");
  Tensor h = trunk(tape, images, {}, opt);
  Tensor d = run_unit(tape, heads_[0], h, opt);
  Tensor c = run_unit(tape, heads_[1], h, opt);
  return SharedOutput{ops::flatten(tape, c), ops::sigmoid(tape, ops::flatten(tape, d))};
}

namespace {
Network build_role(const NetworkSpec& spec, Role role, Rng& rng) {
  if (spec.role != role) {
    throw SpecError("spec role is " + std::string(role_name(spec.role)) + ", expected " +
                    std::string(role_name(role)));
  }
  return Network(spec, rng);
}
}  // namespace

Network build_generator(const NetworkSpec& spec, Rng& rng) { return build_role(spec, Role::generator, rng); }
Network build_discriminator(const NetworkSpec& spec, Rng& rng) { return build_role(spec, Role::discriminator, rng); }
Network build_classifier(const NetworkSpec& spec, Rng& rng) { return build_role(spec, Role::classifier, rng); }
Network build_shared_discriminator(const NetworkSpec& spec, Rng& rng) {
  return build_role(spec, Role::shared_discriminator, rng);
}
Network build_network(const NetworkSpec& spec, Rng& rng) { return Network(spec, rng); }

Real encode_class(int label, int num_classes) {
  if (num_classes < 2) throw SpecError("num_classes must be >= 2");
  if (label < 0 || label >= num_classes) {
    throw InvalidLabelError("label " + std::to_string(label) + " outside [0," + std::to_string(num_classes) + ")");
  }
  const double half = (num_classes - 1) / 2.0;
  return static_cast<Real>((label - half) / half);
}

LatentVector latent(int n, Rng& rng) { return LatentVector{ops::randn({n, kLatentDim}, rng), {}}; }

LatentVector conditional_latent(std::span<const int> labels, int num_classes, Rng& rng) {
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw InvalidLabelError("label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
    }
  }
  const int n = static_cast<int>(labels.size());
  LatentVector z = latent(n, rng);
  auto d = z.values.data();
  for (int i = 0; i < n; ++i) {
    d[static_cast<std::size_t>(i) * kLatentDim + kLatentDim - 1] = encode_class(labels[i], num_classes);
  }
  z.conditional_class.assign(labels.begin(), labels.end());
  return z;
}

std::vector<int> balanced_labels(int n, int num_classes) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[i] = i % num_classes;
  return out;
}

Tensor conditional_discriminator_forward(Network& net, Tape& tape, const Tensor& images,
                                         std::span<const int> labels, const ForwardOptions& opt) {
  return net.forward_conditional(tape, images, labels, opt);
}

}  // namespace ecgan
