#include <cstdio>

#include "doctest.h"
#include "grad_suite.hpp"

using namespace ecgan;
using namespace ecgan::testing;

TEST_CASE("analytic gradients agree with central differences") {
  for (const auto& entry : gradient_suite()) {
    const SuiteResult r = run_entry(entry, 10, 20261018);
    INFO(entry.name << " worst " << r.worst << " rel err " << r.max_rel_err);
    CHECK(r.max_rel_err < kGradTol);
  }
}

TEST_CASE("matmul 5x4 by 4x3 gradients") {
  Rng rng(5);
  Tensor a = random_tensor({5, 4}, rng), b = random_tensor({4, 3}, rng);
  const auto rep = gradcheck([&](Tape& t) { return ops::matmul(t, a, b); }, {{"a", a}, {"b", b}}, rng, {1e-3, 100});
  CHECK(rep.max_rel_err < kGradTol);
}

TEST_CASE("first discriminator layer gradient of bce(D(x), 1)") {
  Rng rng(11);
  NetworkSpec spec{Role::discriminator, 32, 3, 2, 8, false, 1};
  Network d = build_discriminator(spec, rng);
  Tensor x = random_tensor({2, 3, 32, 32}, rng);
  Tensor w = d.param("down1.weight");
  const auto rep = gradcheck(
      [&](Tape& t) { return ops::bce(t, d.forward(t, x, {false}), Real(1)); }, {{"down1.weight", w}}, rng, {1e-3, 48});
  INFO(rep.worst);
  CHECK(rep.max_rel_err < kGradTol);
}
