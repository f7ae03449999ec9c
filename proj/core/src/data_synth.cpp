#include <algorithm>
#include <cmath>

#include "ecgan/data.hpp"
#include "ecgan/error.hpp"

namespace ecgan {
namespace {

// Inside-test for one class, in coordinates relative to the shape centre,
// with `r` the half-extent.
bool inside(int cls, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (cls) {
    case 0:  // filled square
      return ax <= r && ay <= r;
    case 1:  // disk
      return dx * dx + dy * dy <= r * r;
    case 2: {  // cross
      const double arm = 0.3 * r;
      return (ax <= r && ay <= arm) || (ay <= r && ax <= arm);
    }
    case 3: {  // upward triangle, apex at top
      if (dy < -r || dy > r) return false;
      return ax <= 0.5 * (dy + r);
    }
    case 4: {  // square with horizontal stripes
      if (ax > r || ay > r) return false;
      const double band = (2.0 * r) / 5.0;
      return static_cast<int>(std::floor((dy + r) / band)) % 2 == 0;
    }
  }
  return false;
}

}  // namespace

Dataset synth_shapes(const SynthOptions& opt) {
  if (opt.num_classes < 2 || opt.num_classes > 5) {
    throw SpecError("synth_shapes: num_classes must be in 2..5, got " + std::to_string(opt.num_classes));
  }
  if (opt.image_size != 16 && opt.image_size != 32) {
    throw SpecError("synth_shapes: size must be 16 or 32, got " + std::to_string(opt.image_size));
  }
  if (opt.n_per_class < 1) throw SpecError("synth_shapes: n_per_class must be >= 1");
  if (opt.channels != 1 && opt.channels != 3) throw SpecError("synth_shapes: channels must be 1 or 3");
  if (opt.noise_sigma < 0) throw SpecError("synth_shapes: noise_sigma must be >= 0");

  const int s = opt.image_size;
  const int c = opt.channels;
  const int n = opt.n_per_class * opt.num_classes;
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  Dataset ds;
  ds.name = "synth_shapes";
  ds.num_classes = opt.num_classes;
  ds.images = Tensor::zeros({n, c, s, s});
  ds.labels.resize(static_cast<std::size_t>(n));
  auto px = ds.images.data();
  Rng rng(opt.seed);

  // Labels interleave classes: sample i has class i % K.
  for (int i = 0; i < n; ++i) {
    const int cls = i % opt.num_classes;
    ds.labels[static_cast<std::size_t>(i)] = cls;
    // Jitter: centre within +-15% of the image, half-extent in [22%, 38%].
    const double cx = (s - 1) / 2.0 + rng.uniform(-0.15, 0.15) * s;
    const double cy = (s - 1) / 2.0 + rng.uniform(-0.15, 0.15) * s;
    const double r = rng.uniform(0.22, 0.38) * s;
    const double bg = rng.uniform(0.0, 0.3);
    const double fg = rng.uniform(0.7, 1.0);
    double tint[3] = {1.0, 1.0, 1.0};
    if (c == 3) {
      for (double& t : tint) t = rng.uniform(0.6, 1.0);
    }
    Real* img = px.data() + static_cast<std::size_t>(i) * c * plane;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const bool on = inside(cls, x - cx, y - cy, r);
        for (int ch = 0; ch < c; ++ch) {
          double v = on ? fg * tint[ch] : bg;
          if (opt.noise_sigma > 0) v += rng.normal(0.0, opt.noise_sigma);
          img[ch * plane + static_cast<std::size_t>(y) * s + x] = static_cast<Real>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return ds;
}

Dataset synth_shapes(int n_per_class, int num_classes, int size, double noise_sigma, std::uint64_t seed) {
  SynthOptions o;
  o.n_per_class = n_per_class;
  o.num_classes = num_classes;
  o.image_size = size;
  o.noise_sigma = noise_sigma;
  o.seed = seed;
  return synth_shapes(o);
}

}  // namespace ecgan
