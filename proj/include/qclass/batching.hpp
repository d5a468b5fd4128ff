#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qclass/corpus.hpp"

namespace qclass {

// Right-padded index matrix. time = max(longest sentence in the batch, min_length).
struct Batch {
  std::vector<std::int32_t> indices;  // size() x time, row-major
  std::vector<std::size_t> lengths;
  std::vector<int> labels;
  std::size_t time = 0;

  std::size_t size() const noexcept { return lengths.size(); }
  std::int32_t at(std::size_t row, std::size_t t) const { return indices[row * time + t]; }
};

struct BatchOptions {
  std::size_t batch_size = 64;
  std::size_t min_length = 1;
  bool shuffle = false;     // permutes batch order only
  std::uint64_t seed = 0;   // callers vary it per epoch
};

// Sorts by length (ties by input position), cuts consecutive groups, pads each to
// max(group maximum, min_length). All groups hold batch_size sentences except the first, which
// takes the remainder (the shortest sentences). Empty input yields no batches.
std::vector<Batch> make_batches(std::span<const LabeledQuestion> data, const Vocabulary& vocab,
                                const BatchOptions& options);

// One batch holding exactly the given sentences, in order.
Batch make_batch(std::span<const LabeledQuestion> data, const Vocabulary& vocab, std::size_t min_length);

// Copy of batch with every row extended by extra PAD positions.
Batch pad_batch(const Batch& batch, std::size_t extra);

std::size_t padding_tokens(std::span<const Batch> batches);

}  // namespace qclass
