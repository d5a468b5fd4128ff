#pragma once

// Binary parameter checkpoints.
//
//   magic    8 bytes  "QCLSCKPT"
//   version  u32      currently 1
//   count    u32      number of tensors
//   per tensor:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64 x rank
//     data     f32 x prod(dims), row-major
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qclass/tensor.hpp"

namespace qclass {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

namespace binio {

// Little-endian primitives shared by the checkpoint and the embedding cache.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32s(std::ostream& os, const float* data, std::size_t n);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
void read_f32s(std::istream& is, float* data, std::size_t n);

}  // namespace binio

}  // namespace qclass
