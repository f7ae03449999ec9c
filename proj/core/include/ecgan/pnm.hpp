#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace ecgan {

/// 8-bit binary PGM (P5, 1 channel) or PPM (P6, 3 channels), interleaved rows.
struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;  // height * width * channels
};

/// Parses P5/P6 with maxval <= 255; comments allowed in the header.
/// Throws FormatError naming the problem and byte offset.
PnmImage read_pnm(std::istream& in);
PnmImage read_pnm(const std::filesystem::path& path);

void write_pnm(std::ostream& out, const PnmImage& image);
void write_pnm(const std::filesystem::path& path, const PnmImage& image);

}  // namespace ecgan
