#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "ecgan/data.hpp"
#include "ecgan/error.hpp"
#include "ecgan/ops.hpp"
#include "ecgan/pnm.hpp"

namespace ecgan {

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int l : labels) {
    if (l >= 0 && l < num_classes) ++counts[static_cast<std::size_t>(l)];
  }
  return counts;
}

void Dataset::validate() const {
  if (labels.empty()) throw SpecError("dataset '" + name + "' is empty");
  if (images.rank() != 4 || images.dim(0) != size()) {
    throw SpecError("dataset '" + name + "': images " + shape_str(images.shape()) + " do not match " +
                    std::to_string(size()) + " labels");
  }
  if (num_classes < 2) throw SpecError("dataset '" + name + "' needs at least 2 classes");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw SpecError("dataset '" + name + "': label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " outside [0," + std::to_string(num_classes) + ")");
    }
  }
  for (Real v : images.data()) {
    if (!(v >= Real(0) && v <= Real(1))) throw SpecError("dataset '" + name + "': pixel outside [0,1]");
  }
}

Dataset Dataset::select(const std::vector<int>& rows) const {
  Tape tape = Tape::inference();
  Dataset out;
  out.images = ops::select_rows(tape, images, rows);
  out.labels.reserve(rows.size());
  for (int r : rows) out.labels.push_back(labels.at(static_cast<std::size_t>(r)));
  out.num_classes = num_classes;
  out.name = name;
  return out;
}

namespace {

// Converts one [C,H,W] image from the source geometry to the requested one.
std::vector<Real> reshape_image(std::vector<Real> img, int c, int h, int w, const ResizeOptions& r, int& out_c,
                                int& out_s) {
  if (h != w && r.image_size == 0) throw SpecError("non-square image needs an explicit image_size");
  out_s = r.image_size ? r.image_size : h;
  if (out_s != h || out_s != w) img = resize_nearest(img, c, h, w, out_s, out_s);
  out_c = r.channels ? r.channels : c;
  if (out_c == c) return img;
  const std::size_t plane = static_cast<std::size_t>(out_s) * out_s;
  if (c == 1 && out_c == 3) {
    std::vector<Real> rgb(3 * plane);
    for (int k = 0; k < 3; ++k) std::copy(img.begin(), img.end(), rgb.begin() + static_cast<std::ptrdiff_t>(k * plane));
    return rgb;
  }
  if (c == 3 && out_c == 1) {
    std::vector<Real> gray(plane);
    for (std::size_t i = 0; i < plane; ++i) gray[i] = (img[i] + img[plane + i] + img[2 * plane + i]) / Real(3);
    return gray;
  }
  throw SpecError("cannot convert " + std::to_string(c) + " channels to " + std::to_string(out_c));
}

std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at, const std::string& file, const char* what) {
  if (b.size() < at + 4) {
    throw FormatError(file + ": truncated header while reading " + what, static_cast<std::int64_t>(b.size()));
  }
  return std::uint32_t(b[at]) << 24 | std::uint32_t(b[at + 1]) << 16 | std::uint32_t(b[at + 2]) << 8 |
         std::uint32_t(b[at + 3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const ResizeOptions& resize) {
  const auto ib = read_file(images_path);
  const auto lb = read_file(labels_path);
  const std::string iname = images_path.filename().string();
  const std::string lname = labels_path.filename().string();

  const std::uint32_t imagic = be32(ib, 0, iname, "magic");
  if (imagic != 0x00000803) {
    std::ostringstream os;
    os << iname << ": bad image magic 0x" << std::hex << imagic << " (expected 0x00000803)";
    throw FormatError(os.str(), 0);
  }
  const std::uint32_t n = be32(ib, 4, iname, "image count");
  const std::uint32_t rows = be32(ib, 8, iname, "row count");
  const std::uint32_t cols = be32(ib, 12, iname, "column count");
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) throw FormatError(iname + ": invalid image dimensions", 8);

  const std::uint32_t lmagic = be32(lb, 0, lname, "magic");
  if (lmagic != 0x00000801) {
    std::ostringstream os;
    os << lname << ": bad label magic 0x" << std::hex << lmagic << " (expected 0x00000801)";
    throw FormatError(os.str(), 0);
  }
  const std::uint32_t nl = be32(lb, 4, lname, "label count");
  if (nl != n) {
    throw CountMismatchError(iname + " holds " + std::to_string(n) + " images but " + lname + " holds " +
                                 std::to_string(nl) + " labels",
                             4);
  }
  if (n == 0) throw FormatError(iname + ": zero images", 4);

  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  const std::size_t need_i = 16 + static_cast<std::size_t>(n) * pixels;
  if (ib.size() < need_i) throw FormatError(iname + ": image data truncated", static_cast<std::int64_t>(ib.size()));
  if (ib.size() > need_i) throw FormatError(iname + ": trailing bytes after image data", static_cast<std::int64_t>(need_i));
  const std::size_t need_l = 8 + static_cast<std::size_t>(n);
  if (lb.size() < need_l) throw FormatError(lname + ": label data truncated", static_cast<std::int64_t>(lb.size()));
  if (lb.size() > need_l) throw FormatError(lname + ": trailing bytes after label data", static_cast<std::int64_t>(need_l));

  Dataset ds;
  ds.name = iname;
  ds.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = lb[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max(2, max_label + 1);

  int out_c = 1, out_s = static_cast<int>(rows);
  std::vector<Real> all;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::vector<Real> img(pixels);
    const unsigned char* src = ib.data() + 16 + static_cast<std::size_t>(i) * pixels;
    for (std::size_t j = 0; j < pixels; ++j) img[j] = static_cast<Real>(src[j]) / Real(255);
    auto out = reshape_image(std::move(img), 1, static_cast<int>(rows), static_cast<int>(cols), resize, out_c, out_s);
    all.insert(all.end(), out.begin(), out.end());
  }
  ds.images = Tensor::from({static_cast<int>(n), out_c, out_s, out_s}, std::move(all));
  return ds;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_image_dir(const std::filesystem::path& root, const std::filesystem::path& labels_csv,
                       const ResizeOptions& resize) {
  std::ifstream in(labels_csv);
  if (!in) throw FormatError("cannot open label file '" + labels_csv.string() + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line) != "filename,label") {
    throw FormatError(labels_csv.string() + ": first row must be the header 'filename,label'");
  }
  Dataset ds;
  ds.name = root.filename().string();
  std::vector<Real> all;
  int out_c = 0, out_s = 0;
  int row = 1;
  int max_label = 0;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const std::string where = labels_csv.filename().string() + " row " + std::to_string(row);
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw FormatError(where + ": expected 'filename,label', got '" + line + "'");
    }
    const std::string file = trim(line.substr(0, comma));
    const std::string label_str = trim(line.substr(comma + 1));
    int label = -1;
    const auto [ptr, ec] = std::from_chars(label_str.data(), label_str.data() + label_str.size(), label);
    if (ec != std::errc() || ptr != label_str.data() + label_str.size() || label < 0 || label > 255) {
      throw FormatError(where + ": unknown label '" + label_str + "' (expected a class index 0..255)");
    }
    const auto path = root / file;
    if (!std::filesystem::exists(path)) throw FormatError(where + ": missing image file '" + path.string() + "'");
    PnmImage img;
    try {
      img = read_pnm(path);
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
    // Interleaved bytes -> planar [C,H,W] in [0,1].
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    std::vector<Real> planar(plane * img.channels);
    for (std::size_t p = 0; p < plane; ++p) {
      for (int ch = 0; ch < img.channels; ++ch) {
        planar[ch * plane + p] = static_cast<Real>(img.pixels[p * img.channels + ch]) / Real(255);
      }
    }
    ResizeOptions r = resize;
    if (r.image_size == 0 && out_s != 0) r.image_size = out_s;  // later files follow the first
    if (r.channels == 0 && out_c != 0) r.channels = out_c;
    int c = 0, s = 0;
    try {
      planar = reshape_image(std::move(planar), img.channels, img.height, img.width, r, c, s);
    } catch (const SpecError& e) {
      throw FormatError(where + ": " + e.what());
    }
    out_c = c;
    out_s = s;
    all.insert(all.end(), planar.begin(), planar.end());
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  if (ds.labels.empty()) throw FormatError(labels_csv.string() + ": no image rows");
  ds.num_classes = std::max(2, max_label + 1);
  ds.images = Tensor::from({ds.size(), out_c, out_s, out_s}, std::move(all));
  return ds;
}

}  // namespace ecgan
