#include "mtlstm/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace mtlstm {
namespace {

constexpr std::array<char, 8> kMagic = {'M', 'T', 'L', 'S', 'T', 'M', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  out.write(bytes, sizeof(T));
}

void put_f64(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw CheckpointError("checkpoint: truncated file");
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<std::make_unsigned_t<T>>(bytes[i]) << (8 * i);
  }
  return static_cast<T>(u);
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get<std::uint64_t>(in)); }

void expect_shape(const std::string& name, std::uint64_t rows, std::uint64_t cols, Index want_rows,
                  Index want_cols) {
  if (rows != static_cast<std::uint64_t>(want_rows) ||
      cols != static_cast<std::uint64_t>(want_cols)) {
    throw CheckpointError("checkpoint: tensor " + name + " has shape " + std::to_string(rows) +
                          "x" + std::to_string(cols) + ", expected " + std::to_string(want_rows) +
                          "x" + std::to_string(want_cols));
  }
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& net = ckpt.network;
  net.validate();
  const auto& p = net.params;
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(p.input_size));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(p.hidden_size));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(p.output_size));
  put<std::uint64_t>(out, ckpt.seed);
  put<std::uint32_t>(out, net.connectivity == Connectivity::Full ? 0u : 1u);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.schedule.group_count()));
  for (std::size_t g = 0; g < net.schedule.sizes.size(); ++g) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(net.schedule.sizes[g]));
    put<std::int64_t>(out, net.schedule.periods[g]);
  }
  put<std::uint32_t>(out, 10u);
  p.for_each_named([&](const std::string& name, Eigen::Ref<const Matrix> m) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
    }
  });
  if (!out) throw CheckpointError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw CheckpointError("checkpoint: bad magic");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto D = static_cast<Index>(get<std::uint64_t>(in));
  const auto H = static_cast<Index>(get<std::uint64_t>(in));
  const auto out_size = static_cast<Index>(get<std::uint64_t>(in));
  if (D <= 0 || H <= 0 || out_size <= 0 || D > (1 << 20) || H > (1 << 20) || out_size > (1 << 20)) {
    throw CheckpointError("checkpoint: implausible dimensions");
  }
  Checkpoint ckpt;
  ckpt.seed = get<std::uint64_t>(in);
  const auto conn = get<std::uint32_t>(in);
  if (conn > 1) throw CheckpointError("checkpoint: unknown connectivity code");
  ckpt.network.connectivity = conn == 0 ? Connectivity::Full : Connectivity::Clockwork;
  const auto k = get<std::uint32_t>(in);
  if (k == 0 || k > static_cast<std::uint32_t>(H)) throw CheckpointError("checkpoint: bad group count");
  for (std::uint32_t g = 0; g < k; ++g) {
    ckpt.network.schedule.sizes.push_back(static_cast<Index>(get<std::uint64_t>(in)));
    ckpt.network.schedule.periods.push_back(get<std::int64_t>(in));
  }

  auto& p = ckpt.network.params;
  p = LstmParams::zeros(D, H, out_size);
  const auto count = get<std::uint32_t>(in);
  if (count != 10u) throw CheckpointError("checkpoint: expected 10 tensors");
  static const char* gate_names = "ifog";
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    if (len > 64) throw CheckpointError("checkpoint: tensor name too long");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);

    auto read_into = [&](auto&& dst) {
      for (Index r = 0; r < dst.rows(); ++r) {
        for (Index c = 0; c < dst.cols(); ++c) dst(r, c) = get_f64(in);
      }
    };
    if (name.size() == 3 && name[0] == 'W' && name[1] == '_' && name[2] != 'y') {
      const char* pos = std::strchr(gate_names, name[2]);
      if (!pos) throw CheckpointError("checkpoint: unknown tensor " + name);
      expect_shape(name, rows, cols, H, D + H);
      read_into(p.gate_block(static_cast<LstmParams::Gate>(pos - gate_names)));
    } else if (name.size() == 3 && name[0] == 'b' && name[1] == '_' && name[2] != 'y') {
      const char* pos = std::strchr(gate_names, name[2]);
      if (!pos) throw CheckpointError("checkpoint: unknown tensor " + name);
      expect_shape(name, rows, cols, H, 1);
      read_into(p.gate_bias.segment((pos - gate_names) * H, H));
    } else if (name == "W_y") {
      expect_shape(name, rows, cols, out_size, H);
      read_into(p.head_weights);
    } else if (name == "b_y") {
      expect_shape(name, rows, cols, out_size, 1);
      read_into(p.head_bias);
    } else {
      throw CheckpointError("checkpoint: unknown tensor " + name);
    }
  }
  try {
    ckpt.network.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace mtlstm
