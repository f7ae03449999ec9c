#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ecgan/error.hpp"

namespace ecgan::testing {

using Bytes = std::vector<unsigned char>;

inline void put_be32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

inline Bytes idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, const Bytes& pixels,
                        std::uint32_t magic = 0x00000803) {
  Bytes b;
  put_be32(b, magic);
  put_be32(b, n);
  put_be32(b, rows);
  put_be32(b, cols);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

inline Bytes idx_labels(const Bytes& labels, std::uint32_t magic = 0x00000801) {
  Bytes b;
  put_be32(b, magic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

inline void write_bytes(const std::filesystem::path& p, const Bytes& b) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

/// Scratch directory under the build tree, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(ECGAN_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

struct MalformedIdx {
  std::string name;
  std::filesystem::path images, labels;
  bool count_mismatch = false;  // CountMismatchError rather than plain FormatError
  std::int64_t offset = -1;     // expected byte offset, -1 when any offset is fine
};

/// Ten 4x4 images with labels 0..9, then the canonical malformed variants.
inline std::vector<MalformedIdx> malformed_idx_files(const std::filesystem::path& dir) {
  Bytes pixels(10 * 16);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<unsigned char>(i * 7);
  Bytes labels(10);
  for (int i = 0; i < 10; ++i) labels[i] = static_cast<unsigned char>(i % 3);
  const Bytes good_i = idx_images(10, 4, 4, pixels), good_l = idx_labels(labels);
  write_bytes(dir / "good-images.idx", good_i);
  write_bytes(dir / "good-labels.idx", good_l);

  std::vector<MalformedIdx> cases;
  auto add = [&](std::string name, const Bytes& img, const Bytes& lbl, bool count, std::int64_t offset) {
    const auto ip = dir / (name + "-images.idx"), lp = dir / (name + "-labels.idx");
    write_bytes(ip, img);
    write_bytes(lp, lbl);
    cases.push_back({std::move(name), ip, lp, count, offset});
  };
  add("bad-image-magic", idx_images(10, 4, 4, pixels, 0x00000804), good_l, false, 0);
  add("bad-label-magic", good_i, idx_labels(labels, 0x00000803), false, 0);
  add("truncated-header", Bytes(good_i.begin(), good_i.begin() + 10), good_l, false, 10);
  add("truncated-pixels", Bytes(good_i.begin(), good_i.end() - 5), good_l, false,
      static_cast<std::int64_t>(good_i.size() - 5));
  add("count-mismatch", good_i, idx_labels(Bytes(labels.begin(), labels.begin() + 9)), true, -1);
  return cases;
}

}  // namespace ecgan::testing
