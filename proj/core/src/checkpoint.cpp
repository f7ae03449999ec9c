#include "ecgan/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "ecgan/error.hpp"

namespace ecgan {
namespace {

constexpr std::array<char, 8> kMagic = {'E', 'C', 'G', 'A', 'N', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                            static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    bytes(b.data(), 4);
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void record(const std::string& name, const Shape& shape, std::span<const Real> values) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) u32(static_cast<std::uint32_t>(d));
    for (Real v : values) f32(static_cast<float>(v));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, offset_);
    }
    offset_ += static_cast<std::int64_t>(n);
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint32_t u32(const char* what) {
    std::array<unsigned char, 4> b;
    bytes(b.data(), 4, what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
  }
  std::uint64_t u64(const char* what) {
    const std::uint64_t lo = u32(what);
    return lo | static_cast<std::uint64_t>(u32(what)) << 32;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::int64_t offset() const { return offset_; }

  struct Record {
    std::string name;
    Shape shape;
    std::vector<Real> values;
  };
  Record record() {
    Record r;
    const std::uint32_t len = u32("record name length");
    if (len > 4096) throw FormatError("implausible record name length " + std::to_string(len), offset_ - 4);
    r.name.resize(len);
    bytes(r.name.data(), len, "record name");
    const std::uint32_t rank = u32("record rank");
    if (rank == 0 || rank > 8) throw FormatError("record '" + r.name + "' has invalid rank", offset_ - 4);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = u32("record dimension");
      if (d == 0 || d > (1u << 24)) throw FormatError("record '" + r.name + "' has invalid dimension", offset_ - 4);
      r.shape.push_back(static_cast<int>(d));
      n *= d;
    }
    r.values.resize(n);
    for (auto& v : r.values) v = static_cast<Real>(f32("record values"));
    return r;
  }

 private:
  std::istream& in_;
  std::int64_t offset_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Network& net, const Adam* optimizer) {
  Writer w(out);
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kCheckpointVersion);
  const auto& s = net.spec();
  w.u32(static_cast<std::uint32_t>(s.role));
  w.u32(static_cast<std::uint32_t>(s.image_size));
  w.u32(static_cast<std::uint32_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(s.num_classes));
  w.u32(static_cast<std::uint32_t>(s.base_width));
  w.u32(s.conditional ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(s.depth));
  w.u32(static_cast<std::uint32_t>(net.parameters().size()));
  for (const auto& p : net.parameters()) w.record(p.name, p.value.shape(), p.value.data());
  w.u8(optimizer ? 1 : 0);
  if (optimizer) {
    const auto& c = optimizer->config();
    w.u64(static_cast<std::uint64_t>(optimizer->step_count()));
    w.f32(static_cast<float>(c.lr));
    w.f32(static_cast<float>(c.beta1));
    w.f32(static_cast<float>(c.beta2));
    w.f32(static_cast<float>(c.eps));
    w.u32(static_cast<std::uint32_t>(2 * optimizer->moments().size()));
    for (const auto& [name, mom] : optimizer->moments()) {
      const Shape shape{static_cast<int>(mom.m.size())};
      w.record("m." + name, shape, mom.m);
      w.record("v." + name, shape, mom.v);
    }
  }
  if (!out) throw FormatError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  std::array<char, 8> magic;
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw FormatError("not a checkpoint file (bad magic)", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), r.offset() - 4);
  }
  NetworkSpec spec;
  const std::uint32_t role = r.u32("role");
  if (role > static_cast<std::uint32_t>(Role::shared_discriminator)) {
    throw FormatError("unknown role id " + std::to_string(role), r.offset() - 4);
  }
  spec.role = static_cast<Role>(role);
  spec.image_size = static_cast<int>(r.u32("image_size"));
  spec.channels = static_cast<int>(r.u32("channels"));
  spec.num_classes = static_cast<int>(r.u32("num_classes"));
  spec.base_width = static_cast<int>(r.u32("base_width"));
  spec.conditional = r.u32("conditional") != 0;
  spec.depth = static_cast<int>(r.u32("depth"));
  const std::int64_t spec_end = r.offset();

  Rng rng(0);
  Checkpoint ckpt{Network{}, std::nullopt};
  try {
    ckpt.network = build_network(spec, rng);
  } catch (const SpecError& e) {
    throw FormatError(std::string("invalid network spec: ") + e.what(), spec_end);
  }
  auto& params = ckpt.network.parameters();
  const std::uint32_t count = r.u32("record count");
  if (count != params.size()) {
    throw FormatError("expected " + std::to_string(params.size()) + " parameter records, found " +
                          std::to_string(count),
                      r.offset() - 4);
  }
  for (auto& p : params) {
    const std::int64_t at = r.offset();
    auto rec = r.record();
    if (rec.name != p.name || rec.shape != p.value.shape()) {
      throw FormatError("record '" + rec.name + "' " + shape_str(rec.shape) + " does not match expected '" + p.name +
                            "' " + shape_str(p.value.shape()),
                        at);
    }
    std::copy(rec.values.begin(), rec.values.end(), p.value.data().begin());
  }
  if (r.u8("optimizer flag")) {
    AdamConfig c;
    const std::uint64_t steps = r.u64("optimizer step count");
    c.lr = static_cast<Real>(r.f32("lr"));
    c.beta1 = static_cast<Real>(r.f32("beta1"));
    c.beta2 = static_cast<Real>(r.f32("beta2"));
    c.eps = static_cast<Real>(r.f32("eps"));
    Adam adam(c);
    adam.set_step_count(static_cast<std::int64_t>(steps));
    const std::uint32_t n = r.u32("optimizer record count");
    if (n % 2 != 0) throw FormatError("odd optimizer record count", r.offset() - 4);
    for (std::uint32_t i = 0; i < n / 2; ++i) {
      auto m = r.record();
      auto v = r.record();
      if (m.name.rfind("m.", 0) != 0 || v.name.rfind("v.", 0) != 0 || m.name.substr(2) != v.name.substr(2)) {
        throw FormatError("malformed optimizer record pair '" + m.name + "'/'" + v.name + "'", r.offset());
      }
      adam.moments()[m.name.substr(2)] = AdamMoments{std::move(m.values), std::move(v.values)};
    }
    ckpt.optimizer = std::move(adam);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const Adam* optimizer) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, net, optimizer);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace ecgan
