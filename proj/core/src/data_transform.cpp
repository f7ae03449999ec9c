#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "ecgan/data.hpp"
#include "ecgan/error.hpp"
#include "ecgan/ops.hpp"

namespace ecgan {

Tensor normalize(const Tensor& images) {
  Tensor out = images.detach();
  for (Real& v : out.data()) v = (v - kNormMean) / kNormStd;
  return out;
}

Tensor denormalize(const Tensor& images) {
  Tensor out = images.detach();
  for (Real& v : out.data()) v = v * kNormStd + kNormMean;
  return out;
}

std::vector<Real> resize_nearest(std::span<const Real> image, int channels, int height, int width, int out_h,
                                 int out_w) {
  std::vector<Real> out(static_cast<std::size_t>(channels) * out_h * out_w);
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const int sy = static_cast<int>(static_cast<long>(y) * height / out_h);
      for (int x = 0; x < out_w; ++x) {
        const int sx = static_cast<int>(static_cast<long>(x) * width / out_w);
        out[(static_cast<std::size_t>(c) * out_h + y) * out_w + x] =
            image[(static_cast<std::size_t>(c) * height + sy) * width + sx];
      }
    }
  }
  return out;
}

std::vector<Real> rotate_image(std::span<const Real> image, int channels, int height, int width, double degrees) {
  std::vector<Real> out(image.size(), Real(0));
  const double th = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  auto at = [&](int c, int y, int x) -> double {
    if (x < 0 || y < 0 || x >= width || y >= height) return 0.0;
    return image[c * plane + static_cast<std::size_t>(y) * width + x];
  };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      // Inverse map: the output pixel samples the source rotated by -theta.
      const double dx = x - cx, dy = y - cy;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < channels; ++c) {
        const double v = (1 - fy) * ((1 - fx) * at(c, y0, x0) + fx * at(c, y0, x0 + 1)) +
                         fy * ((1 - fx) * at(c, y0 + 1, x0) + fx * at(c, y0 + 1, x0 + 1));
        out[c * plane + static_cast<std::size_t>(y) * width + x] = static_cast<Real>(v);
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& images, const AugmentPolicy& policy, Rng& rng) {
  if (!policy.enabled) return images;
  if (images.rank() != 4) throw ShapeError("augment expects NCHW, got " + shape_str(images.shape()));
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t sz = static_cast<std::size_t>(c) * h * w;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out = Tensor::zeros(images.shape());
  auto src = images.data();
  auto dst = out.data();
  const int pad = std::max(policy.crop_pad, 0);
  for (int i = 0; i < n; ++i) {
    std::span<const Real> img = src.subspan(i * sz, sz);
    // Crop offset in [0, 2*pad] on the padded canvas == shift in [-pad, pad].
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad;
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad;
    std::vector<Real> shifted(sz, Real(0));
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sy = y + oy, sx = x + ox;
          if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
            shifted[ch * plane + static_cast<std::size_t>(y) * w + x] = img[ch * plane + static_cast<std::size_t>(sy) * w + sx];
          }
        }
    const double angle = rng.uniform(-policy.rotation_deg, policy.rotation_deg);
    auto rotated = policy.rotation_deg > 0 ? rotate_image(shifted, c, h, w, angle) : shifted;
    std::copy(rotated.begin(), rotated.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * sz));
  }
  return out;
}

Dataset subsample(const Dataset& ds, double percent, std::uint64_t seed) {
  if (!(percent > 0.0 && percent <= 100.0)) {
    throw SpecError("subsample: percent must be in (0,100], got " + std::to_string(percent));
  }
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[static_cast<std::size_t>(i)]].push_back(i);
  Rng root(seed);
  std::vector<int> keep;
  for (auto& [cls, rows] : by_class) {
    const auto take = static_cast<std::size_t>(std::llround(percent / 100.0 * static_cast<double>(rows.size())));
    if (take == 0) {
      throw UnderflowError("subsample: class " + std::to_string(cls) + " (" + std::to_string(rows.size()) +
                           " samples) rounds to 0 at " + std::to_string(percent) + "%");
    }
    Rng rng = root.fork("class" + std::to_string(cls));
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng.below(rows.size() - i);
      std::swap(rows[i], rows[j]);
    }
    keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(keep.begin(), keep.end());
  Dataset out = ds.select(keep);
  return out;
}

std::vector<Batch> batches(const Dataset& ds, int batch_size, std::uint64_t shuffle_seed, const BatchOptions& opt) {
  if (batch_size < 1) throw SpecError("batch_size must be >= 1");
  const int n = ds.size();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(shuffle_seed);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  Rng aug_rng(opt.augment_seed);
  Tape tape = Tape::inference();
  std::vector<Batch> out;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    Batch b;
    b.indices.assign(order.begin() + start, order.begin() + end);
    for (int r : b.indices) b.labels.push_back(ds.labels[static_cast<std::size_t>(r)]);
    Tensor imgs = ops::select_rows(tape, ds.images, b.indices);
    if (opt.augment.enabled) imgs = augment(imgs, opt.augment, aug_rng);
    b.images = normalize(imgs);
    out.push_back(std::move(b));
  }
  return out;
}

Batch full_batch(const Dataset& ds) {
  Batch b;
  b.indices.resize(static_cast<std::size_t>(ds.size()));
  std::iota(b.indices.begin(), b.indices.end(), 0);
  b.labels = ds.labels;
  b.images = normalize(ds.images);
  return b;
}

}  // namespace ecgan
