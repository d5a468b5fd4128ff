#include "qclass/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <stdexcept>
#include <vector>

#include "qclass/checkpoint.hpp"
#include "qclass/errors.hpp"

namespace qclass {

namespace {

std::size_t count_fields(std::string_view line) {
  std::size_t n = 0;
  bool in_field = false;
  for (char c : line) {
    if (c == ' ') {
      in_field = false;
    } else if (!in_field) {
      in_field = true;
      ++n;
    }
  }
  return n;
}

}  // namespace

EmbeddingTable load_glove(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t dim,
                          std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read embedding file " + path.string());

  EmbeddingTable table;
  table.dim = dim;
  table.matrix = Tensor<float>({vocab.size(), dim});

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unk_dist(-kUnkInitRange, kUnkInitRange);
  for (std::size_t c = 0; c < dim; ++c) table.matrix.at(Vocabulary::unk_index, c) = unk_dist(rng);

  std::vector<char> found(vocab.size(), 0);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t fields = count_fields(line);
    if (fields < dim + 1) {
      throw FormatError("expected a token and " + std::to_string(dim) + " values, found " +
                        std::to_string(fields == 0 ? 0 : fields - 1) + " values",
                        line_number);
    }
    if (fields > dim + 1) {
      ++table.skipped_lines;
      continue;
    }
    const std::size_t space = line.find(' ');
    const std::string_view token(line.data(), space);
    if (!vocab.contains(token)) continue;
    const auto id = static_cast<std::size_t>(vocab.index(token));
    if (found[id]) continue;

    const char* p = line.data() + space;
    const char* end = line.data() + line.size();
    float* row = table.matrix.data() + id * dim;
    for (std::size_t c = 0; c < dim; ++c) {
      while (p < end && *p == ' ') ++p;
      auto [next, ec] = std::from_chars(p, end, row[c]);
      if (ec != std::errc{}) throw FormatError("unparsable value in column " + std::to_string(c + 1), line_number);
      p = next;
    }
    found[id] = 1;
  }

  for (std::size_t id = 2; id < vocab.size(); ++id) {
    if (found[id]) continue;
    ++table.oov_count;
    std::copy_n(table.matrix.data() + Vocabulary::unk_index * dim, dim, table.matrix.data() + id * dim);
  }
  return table;
}

Tensor<float> embed_lookup(const EmbeddingTable& table, std::span<const std::int32_t> indices, std::size_t batch,
                           std::size_t time) {
  if (indices.size() != batch * time) throw ShapeError("embed_lookup: index count does not match batch x time");
  const std::size_t vocab = table.vocab_size();
  Tensor<float> out({batch, time, table.dim});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= vocab) {
      throw std::out_of_range("embedding index " + std::to_string(indices[i]) + " outside vocabulary of size " +
                              std::to_string(vocab));
    }
    std::copy_n(table.matrix.data() + static_cast<std::size_t>(indices[i]) * table.dim, table.dim,
                out.data() + i * table.dim);
  }
  return out;
}

void write_embedding_cache(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  binio::write_u64(os, table.vocab_size());
  binio::write_u64(os, table.dim);
  binio::write_f32s(os, table.matrix.data(), table.matrix.size());
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

EmbeddingTable read_embedding_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read embedding cache " + path.string());
  const std::uint64_t rows = binio::read_u64(is);
  const std::uint64_t dim = binio::read_u64(is);
  if (rows < 2 || dim == 0 || rows * dim > (std::uint64_t{1} << 34)) {
    throw FormatError("implausible embedding cache header in " + path.string());
  }
  EmbeddingTable table;
  table.dim = dim;
  table.matrix = Tensor<float>({rows, dim});
  binio::read_f32s(is, table.matrix.data(), table.matrix.size());
  for (std::size_t id = 2; id < rows; ++id) {
    if (std::equal(table.matrix.data() + id * dim, table.matrix.data() + (id + 1) * dim,
                   table.matrix.data() + Vocabulary::unk_index * dim)) {
      ++table.oov_count;
    }
  }
  return table;
}

}  // namespace qclass
