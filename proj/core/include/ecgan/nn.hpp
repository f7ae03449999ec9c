#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgan/ops.hpp"
#include "ecgan/rng.hpp"
#include "ecgan/tensor.hpp"

namespace ecgan {

inline constexpr int kLatentDim = 100;

enum class Role { generator, discriminator, classifier, shared_discriminator };

std::string_view role_name(Role role);
Role parse_role(std::string_view name);

struct NetworkSpec {
  Role role = Role::classifier;
  int image_size = 32;   // power of two, >= 16
  int channels = 3;      // 1 or 3
  int num_classes = 10;  // K >= 2
  int base_width = 16;   // >= 8
  bool conditional = false;
  int depth = 1;         // residual blocks per stage (classifier only)

  /// Throws SpecError when the spec cannot be built.
  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
  bool trainable = true;  // false for batch-norm running statistics
};

/// One convolution-like layer with its optional batch norm and activation.
struct ConvUnit {
  std::string name;
  bool transpose = false;
  int in = 0, out = 0, kernel = 0, stride = 1, pad = 0;
  bool bias = false;
  bool norm = false;
  ops::Activation act = ops::Activation::identity;
};

struct ResidualBlock {
  ConvUnit conv1;  // conv -> bn -> relu
  ConvUnit conv2;  // conv -> bn
  std::optional<ConvUnit> projection;  // 1x1 conv -> bn, when shape changes
};

struct ForwardOptions {
  /// Batch-norm layers in train mode fold batch statistics into running stats.
  bool update_running_stats = true;
};

/// Classifier-head and real/fake-head outputs of the shared discriminator.
struct SharedOutput {
  Tensor logits;  // [N,K]
  Tensor prob;    // [N,1]
};

/// Instantiated network: spec, ordered named parameters, and the layer plan
/// derived from the spec.
class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, Rng& rng);

  const NetworkSpec& spec() const { return spec_; }
  ops::Mode mode() const { return mode_; }
  void set_mode(ops::Mode m) { mode_ = m; }

  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  Tensor& param(std::string_view name);
  const Tensor& param(std::string_view name) const;
  bool has_param(std::string_view name) const;

  /// Number of trainable scalars (running statistics excluded).
  std::size_t parameter_count() const;
  /// Trainable scalars whose names start with `prefix`.
  std::size_t parameter_count(std::string_view prefix) const;
  void zero_grad();
  /// Deep copy of all parameters; the copy shares nothing with this network.
  Network clone() const;

  /// generator: z[N,100] -> images [N,C,S,S] in [-1,1]
  /// discriminator: images -> probabilities [N,1] (unconditional only)
  /// classifier: images -> logits [N,K]
  Tensor forward(Tape& tape, const Tensor& x, const ForwardOptions& opt = {});
  /// Discriminator forward with the class channel appended after the first block.
  Tensor forward_conditional(Tape& tape, const Tensor& images, std::span<const int> labels,
                             const ForwardOptions& opt = {});
  SharedOutput forward_shared(Tape& tape, const Tensor& images, const ForwardOptions& opt = {});

  const std::vector<ConvUnit>& units() const { return units_; }
  const std::vector<ResidualBlock>& blocks() const { return blocks_; }
  /// One residual block: relu(conv2(conv1(x)) + skip(x)).
  Tensor block_forward(Tape& tape, const ResidualBlock& b, const Tensor& x, const ForwardOptions& opt = {});

  // Parameter names that belong to the shared trunk / each head.
  static constexpr std::string_view kClassHead = "head_c.";
  static constexpr std::string_view kDiscHead = "head_d.";

 private:
  void add_unit_params(const ConvUnit& u);
  void add_param(std::string name, Shape shape, bool trainable = true);
  void init(Rng& rng);
  Tensor run_unit(Tape& tape, const ConvUnit& u, const Tensor& x, const ForwardOptions& opt);
  Tensor trunk(Tape& tape, const Tensor& x, std::span<const int> labels, const ForwardOptions& opt);

  NetworkSpec spec_;
  ops::Mode mode_ = ops::Mode::train;
  std::vector<NamedTensor> params_;
  std::vector<ConvUnit> units_;         // generator / discriminator trunk / classifier stem
  std::vector<ResidualBlock> blocks_;   // classifier
  std::vector<ConvUnit> heads_;         // discriminator head(s)
};

Network build_generator(const NetworkSpec& spec, Rng& rng);
Network build_discriminator(const NetworkSpec& spec, Rng& rng);
Network build_classifier(const NetworkSpec& spec, Rng& rng);
Network build_shared_discriminator(const NetworkSpec& spec, Rng& rng);
/// Dispatches on spec.role.
Network build_network(const NetworkSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Conditional latents

struct LatentVector {
  Tensor values;                       // [N,100]
  std::vector<int> conditional_class;  // empty when unconditional
};

/// Class k of K mapped to (k - (K-1)/2) / ((K-1)/2): evenly spaced in [-1,1], endpoints at -1 and 1.
Real encode_class(int label, int num_classes);
/// Unconditional z ~ N(0,1), shape [n,100].
LatentVector latent(int n, Rng& rng);
/// z ~ N(0,1) with z[:,99] = encode_class(label).
LatentVector conditional_latent(std::span<const int> labels, int num_classes, Rng& rng);
/// n labels cycling through 0..K-1 (each class gets floor or ceil of n/K).
std::vector<int> balanced_labels(int n, int num_classes);

/// Discriminator forward for conditional networks; throws ContractError
/// when labels are missing or the network is not conditional.
Tensor conditional_discriminator_forward(Network& net, Tape& tape, const Tensor& images,
                                         std::span<const int> labels, const ForwardOptions& opt = {});

}  // namespace ecgan
