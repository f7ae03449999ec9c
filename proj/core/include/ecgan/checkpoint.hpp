#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "ecgan/nn.hpp"
#include "ecgan/optim.hpp"

namespace ecgan {

// Binary layout, all integers and floats little-endian:
//
//   "ECGANCKP"  u32 version(=1)
//   u32 role  u32 image_size  u32 channels  u32 num_classes  u32 base_width
//   u32 conditional  u32 depth
//   u32 record_count, then per record:
//     u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 values[prod(dims)]
//   u8 has_optimizer; when 1:
//     u64 step_count  f32 lr beta1 beta2 eps
//     u32 record_count, records named "m.<param>" / "v.<param>"

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Network network;
  std::optional<Adam> optimizer;
};

void write_checkpoint(std::ostream& out, const Network& net, const Adam* optimizer = nullptr);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Network& net, const Adam* optimizer = nullptr);
/// Throws FormatError for unreadable or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ecgan
