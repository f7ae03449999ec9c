#include <benchmark/benchmark.h>

#include "ecgan/trainer.hpp"

using namespace ecgan;

namespace {

Tensor noise(const Shape& shape, Rng& rng, bool grad = false) {
  Tensor t = Tensor::zeros(shape, grad);
  for (Real& v : t.data()) v = static_cast<Real>(rng.normal());
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor x = noise({16, c, 16, 16}, rng), w = noise({2 * c, c, 4, 4}, rng), b = noise({2 * c}, rng);
  for (auto _ : state) {
    Tape tape = Tape::inference();
    Tensor y = ops::conv2d(tape, x, w, b, {2, 1});
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor x = noise({16, c, 16, 16}, rng, true), w = noise({2 * c, c, 4, 4}, rng, true), b = noise({2 * c}, rng, true);
  for (auto _ : state) {
    Tape tape;
    tape.backward(ops::mean(tape, ops::conv2d(tape, x, w, b, {2, 1})));
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(32);

void BM_ConvTransposeForward(benchmark::State& state) {
  Rng rng(3);
  const Tensor x = noise({16, 32, 8, 8}, rng), w = noise({32, 16, 4, 4}, rng), b = noise({16}, rng);
  for (auto _ : state) {
    Tape tape = Tape::inference();
    Tensor y = ops::conv_transpose2d(tape, x, w, b, {2, 1});
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_ConvTransposeForward);

// One full EC-GAN minibatch: D step, G step, classifier step.
void BM_EcganStep(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(4);
  Network d = build_discriminator({Role::discriminator, size, 1, 3, 16, false, 1}, rng);
  Network g = build_generator({Role::generator, size, 1, 3, 16, false, 1}, rng);
  Network c = build_classifier({Role::classifier, size, 1, 3, 16, false, 1}, rng);
  Adam opt_d, opt_g, opt_c;
  HyperParams hp;
  const Dataset ds = synth_shapes(6, 3, size, 0.2, 1);
  Batch batch;
  batch.images = normalize(ds.images);
  batch.labels = ds.labels;
  for (int i = 0; i < ds.size(); ++i) batch.indices.push_back(i);
  for (auto _ : state) {
    discriminator_step(d, g, batch, opt_d, rng);
    generator_step(g, d, ds.size(), opt_g, rng);
    benchmark::DoNotOptimize(classifier_step(c, g, batch, hp, opt_c, rng));
  }
}
BENCHMARK(BM_EcganStep)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
