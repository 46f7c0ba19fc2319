#pragma once

// Binary checkpoint container. All integers and floats are little-endian.
//
//   bytes  field
//   8      magic "MTLSTMCK"
//   u32    format version (currently 1)
//   u64    input size D
//   u64    hidden size H
//   u64    output size
//   u64    seed
//   u32    connectivity (0 = full, 1 = clockwork)
//   u32    group count k
//   k x    (u64 size, i64 period)
//   u32    tensor count
//   per tensor:
//     u32  name length, then name bytes (ASCII, no terminator)
//     u64  rows, u64 cols
//     f64  rows*cols values, row-major
//
// Tensors appear in the order W_i W_f W_o W_g b_i b_f b_o b_g W_y b_y; biases
// are stored as (n x 1).

#include "mtlstm/lstm.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>

namespace mtlstm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Network network;
  std::uint64_t seed = 0;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mtlstm
