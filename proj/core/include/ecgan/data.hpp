#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ecgan/rng.hpp"
#include "ecgan/tensor.hpp"

namespace ecgan {

/// Labeled images with pixels in [0,1] (before normalization).
struct Dataset {
  Tensor images;            // [N,C,H,W]
  std::vector<int> labels;  // N entries in [0,num_classes)
  int num_classes = 0;
  std::string name;

  int size() const { return static_cast<int>(labels.size()); }
  int channels() const { return images.dim(1); }
  int image_size() const { return images.dim(2); }
  /// Per-class sample counts.
  std::vector<int> class_counts() const;
  /// Throws SpecError when labels/shape/range invariants do not hold.
  void validate() const;
  /// Rows in the given order as a new dataset.
  Dataset select(const std::vector<int>& rows) const;
};

/// Normalized minibatch: images in [-1,1].
struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<int> indices;  // rows of the source dataset
  int size() const { return static_cast<int>(labels.size()); }
};

struct AugmentPolicy {
  int crop_pad = 4;           // zero-pad, then crop back at a random offset
  double rotation_deg = 10.0; // uniform in [-rotation_deg, +rotation_deg]
  bool enabled = false;
};

struct ResizeOptions {
  int image_size = 0;  // 0 keeps the source size
  int channels = 0;    // 0 keeps the source channel count; 1 -> 3 replicates gray
};

// ---------------------------------------------------------------------------
// Loaders

/// MNIST-style IDX pair (magic 0x00000803 / 0x00000801, big-endian dims).
/// Throws FormatError (CountMismatchError for differing counts) with the byte
/// offset of the problem.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const ResizeOptions& resize = {});

/// Directory of P5/P6 images plus a `filename,label` CSV (header row required).
/// Errors name the offending CSV row or file.
Dataset load_image_dir(const std::filesystem::path& root, const std::filesystem::path& labels_csv,
                       const ResizeOptions& resize = {});

struct SynthOptions {
  int n_per_class = 100;
  int num_classes = 3;   // 2..5
  int image_size = 32;   // 16 or 32
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  int channels = 1;      // 1 or 3
};

/// Procedural shapes, one class each: filled square, disk, cross, triangle,
/// striped square. Position and size are jittered per sample, then Gaussian
/// pixel noise is added and values clamped to [0,1].
Dataset synth_shapes(const SynthOptions& opt);
Dataset synth_shapes(int n_per_class, int num_classes, int size, double noise_sigma, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Transforms

inline constexpr Real kNormMean = Real(0.5);
inline constexpr Real kNormStd = Real(0.5);

/// (x - 0.5) / 0.5, mapping [0,1] onto [-1,1].
Tensor normalize(const Tensor& images);
/// Inverse of normalize.
Tensor denormalize(const Tensor& images);

/// Pad-and-crop then rotate each image independently (bilinear, zero fill).
/// Expects [0,1] pixels; returns the input unchanged when the policy is disabled.
Tensor augment(const Tensor& images, const AugmentPolicy& policy, Rng& rng);
/// Rotation of one [C,H,W] image about its center by `degrees` (bilinear, zero fill).
std::vector<Real> rotate_image(std::span<const Real> image, int channels, int height, int width, double degrees);
/// Nearest-neighbour resize of one [C,H,W] image.
std::vector<Real> resize_nearest(std::span<const Real> image, int channels, int height, int width, int out_h,
                                 int out_w);

/// Stratified subsample: round(percent/100 * count) rows per class, drawn
/// without replacement. Throws UnderflowError when a class would be empty.
Dataset subsample(const Dataset& ds, double percent, std::uint64_t seed);

struct BatchOptions {
  AugmentPolicy augment;
  std::uint64_t augment_seed = 0;
};

/// One epoch: a seeded permutation cut into batches (last batch may be short),
/// augmented when enabled, then normalized.
std::vector<Batch> batches(const Dataset& ds, int batch_size, std::uint64_t shuffle_seed,
                           const BatchOptions& opt = {});

/// The whole dataset normalized, in order, as one batch.
Batch full_batch(const Dataset& ds);

}  // namespace ecgan
