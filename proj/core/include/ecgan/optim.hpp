#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ecgan/nn.hpp"

namespace ecgan {

struct AdamConfig {
  Real lr = Real(0.0002);
  Real beta1 = Real(0.5);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

struct AdamMoments {
  std::vector<Real> m;
  std::vector<Real> v;
};

/// Adam with bias correction. Moments are keyed by parameter name, so the
/// order in which parameters are presented does not matter.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update of every trainable parameter. Throws ContractError when a
  /// trainable parameter has no gradient.
  void step(std::vector<NamedTensor>& params);
  void step(Network& net) { step(net.parameters()); }

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }
  std::map<std::string, AdamMoments>& moments() { return moments_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  std::int64_t step_count_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

/// Biases and batch-norm gamma/beta.
bool default_decay_exempt(std::string_view name);

struct DecayPolicy {
  Real coefficient = 0;
  std::function<bool(std::string_view)> exempt = default_decay_exempt;
};

/// Coupled L2: grad += coefficient * theta for every non-exempt trainable
/// parameter. coefficient == 0 leaves gradients untouched.
void apply_weight_decay(std::vector<NamedTensor>& params, const DecayPolicy& policy);

}  // namespace ecgan
