#include "qclass/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "qclass/errors.hpp"

namespace qclass {

namespace binio {

namespace {

template <class U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
    }
    return out;
  }
}

void require(std::istream& is, const char* what) {
  if (!is) throw FormatError(std::string("truncated binary file while reading ") + what);
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f32s(std::ostream& os, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) write_u32(os, std::bit_cast<std::uint32_t>(data[i]));
  }
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(is, "u32");
  return to_little(v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(is, "u64");
  return to_little(v);
}

void read_f32s(std::istream& is, float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    require(is, "float data");
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(read_u32(is));
  }
}

}  // namespace binio

namespace {
constexpr std::array<char, 8> kMagic = {'Q', 'C', 'L', 'S', 'C', 'K', 'P', 'T'};
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  binio::write_u32(os, kCheckpointVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    binio::write_u32(os, static_cast<std::uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    binio::write_u32(os, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) binio::write_u64(os, d);
    binio::write_f32s(os, nt.tensor.data(), nt.tensor.size());
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  const std::uint32_t version = binio::read_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = binio::read_u32(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor nt;
    nt.name.resize(binio::read_u32(is));
    is.read(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    if (!is) throw FormatError("truncated checkpoint name");
    const std::uint32_t rank = binio::read_u32(is);
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank) + " in checkpoint");
    Shape shape(rank);
    for (auto& d : shape) d = binio::read_u64(is);
    nt.tensor = Tensor<float>(shape);
    binio::read_f32s(is, nt.tensor.data(), nt.tensor.size());
    out.push_back(std::move(nt));
  }
  return out;
}

}  // namespace qclass
