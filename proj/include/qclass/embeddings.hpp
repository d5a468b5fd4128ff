#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "qclass/corpus.hpp"
#include "qclass/tensor.hpp"

namespace qclass {

// |V| x D matrix aligned with a Vocabulary. Row 0 (PAD) is zero; row 1 is the shared
// out-of-vocabulary vector, copied into every vocabulary row the pre-trained file lacks.
struct EmbeddingTable {
  Tensor<float> matrix;
  std::size_t dim = 0;
  std::size_t oov_count = 0;      // vocabulary tokens (index >= 2) absent from the file
  std::size_t skipped_lines = 0;  // file lines whose token contains spaces

  std::size_t vocab_size() const { return matrix.rank() == 2 ? matrix.dim(0) : 0; }
};

inline constexpr float kUnkInitRange = 0.25f;

// Streams a GloVe text file ("token v1 ... vD" per line), keeping only vocabulary hits.
// Throws DataError when unreadable and FormatError (with line number) on a short or unparsable line.
EmbeddingTable load_glove(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t dim,
                          std::uint64_t seed);

// indices has batch * time entries; result is [batch][time][dim]. Throws std::out_of_range on a bad index.
Tensor<float> embed_lookup(const EmbeddingTable& table, std::span<const std::int32_t> indices, std::size_t batch,
                           std::size_t time);

// Binary cache: u64 |V|, u64 D, then |V| * D little-endian f32, row-major.
void write_embedding_cache(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embedding_cache(const std::filesystem::path& path);

}  // namespace qclass
