#include "ecgan/optim.hpp"

#include <cmath>

#include "ecgan/error.hpp"

namespace ecgan {

void Adam::step(std::vector<NamedTensor>& params) {
  for (const auto& p : params) {
    if (p.trainable && !p.value.has_grad()) {
      throw ContractError("adam: parameter '" + p.name + "' has no gradient");
    }
  }
  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  const double lr = config_.lr, eps = config_.eps;
  for (auto& p : params) {
    if (!p.trainable) continue;
    auto& st = moments_[p.name];
    const std::size_t n = p.value.numel();
    if (st.m.size() != n) {
      st.m.assign(n, Real(0));
      st.v.assign(n, Real(0));
    }
    auto theta = p.value.data();
    auto g = p.value.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double m = b1 * st.m[i] + (1.0 - b1) * gi;
      const double v = b2 * st.v[i] + (1.0 - b2) * gi * gi;
      st.m[i] = static_cast<Real>(m);
      st.v[i] = static_cast<Real>(v);
      theta[i] = static_cast<Real>(theta[i] - lr * (m / c1) / (std::sqrt(v / c2) + eps));
    }
  }
}

bool default_decay_exempt(std::string_view name) {
  auto ends = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
  };
  return ends(".bias") || ends(".gamma") || ends(".beta");
}

void apply_weight_decay(std::vector<NamedTensor>& params, const DecayPolicy& policy) {
  if (policy.coefficient == Real(0)) return;
  for (auto& p : params) {
    if (!p.trainable || (policy.exempt && policy.exempt(p.name))) continue;
    auto theta = p.value.data();
    Real* g = p.value.impl()->grad_buffer();
    for (std::size_t i = 0; i < theta.size(); ++i) g[i] += policy.coefficient * theta[i];
  }
}

}  // namespace ecgan
