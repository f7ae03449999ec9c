#include "ecgan/pnm.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "ecgan/error.hpp"

namespace ecgan {
namespace {

class HeaderParser {
 public:
  explicit HeaderParser(std::istream& in) : in_(in) {}

  int get() {
    const int c = in_.get();
    if (c != EOF) ++offset_;
    return c;
  }

  // Skips whitespace and '#' comments, then reads an unsigned decimal.
  int number(const char* what) {
    int c = get();
    for (;;) {
      if (c == '#') {
        while (c != '\n' && c != EOF) c = get();
      } else if (c != EOF && std::isspace(c)) {
        c = get();
      } else {
        break;
      }
    }
    if (c == EOF || !std::isdigit(c)) throw FormatError(std::string("PNM header: expected ") + what, offset_);
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
      v = v * 10 + (c - '0');
      if (v > 1'000'000) throw FormatError(std::string("PNM header: ") + what + " too large", offset_);
      c = get();
    }
    // Exactly one whitespace byte separates the header from the raster.
    if (c == EOF || !std::isspace(c)) throw FormatError(std::string("PNM header: bad delimiter after ") + what, offset_);
    return static_cast<int>(v);
  }

  std::int64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::int64_t offset_ = 0;
};

}  // namespace

PnmImage read_pnm(std::istream& in) {
  HeaderParser h(in);
  const int p = h.get();
  const int kind = h.get();
  if (p != 'P' || (kind != '5' && kind != '6')) throw FormatError("not a binary PGM/PPM file (bad magic)", 0);
  PnmImage img;
  img.channels = kind == '5' ? 1 : 3;
  img.width = h.number("width");
  img.height = h.number("height");
  const int maxval = h.number("maxval");
  if (img.width <= 0 || img.height <= 0) throw FormatError("PNM header: zero image dimension", h.offset());
  if (maxval <= 0 || maxval > 255) throw FormatError("PNM: only 8-bit maxval is supported", h.offset());
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.pixels.resize(n);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != n) throw FormatError("PNM raster truncated", h.offset() + static_cast<std::int64_t>(got));
  if (maxval != 255) {
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(std::min<int>(255, v * 255 / maxval));
  }
  return img;
}

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image '" + path.string() + "'");
  try {
    return read_pnm(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_pnm(std::ostream& out, const PnmImage& image) {
  if (image.channels != 1 && image.channels != 3) throw FormatError("PNM supports 1 or 3 channels");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw FormatError("PNM pixel buffer does not match dimensions");
  }
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw FormatError("failed writing PNM image");
}

void write_pnm(const std::filesystem::path& path, const PnmImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  write_pnm(out, image);
}

}  // namespace ecgan
