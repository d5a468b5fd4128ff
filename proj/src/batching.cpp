#include "qclass/batching.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace qclass {

namespace {

Batch build(std::span<const LabeledQuestion> data, std::span<const std::size_t> order, const Vocabulary& vocab,
            std::size_t min_length) {
  Batch batch;
  std::size_t longest = 0;
  for (std::size_t i : order) longest = std::max(longest, data[i].tokens.size());
  batch.time = std::max(longest, min_length);
  batch.indices.assign(order.size() * batch.time, Vocabulary::pad_index);
  for (std::size_t row = 0; row < order.size(); ++row) {
    const LabeledQuestion& q = data[order[row]];
    for (std::size_t t = 0; t < q.tokens.size(); ++t) batch.indices[row * batch.time + t] = vocab.index(q.tokens[t]);
    batch.lengths.push_back(q.tokens.size());
    batch.labels.push_back(label_id(q.label));
  }
  return batch;
}

}  // namespace

std::vector<Batch> make_batches(std::span<const LabeledQuestion> data, const Vocabulary& vocab,
                                const BatchOptions& options) {
  if (options.batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (options.min_length == 0) throw std::invalid_argument("min_length must be at least 1");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data[a].tokens.size() < data[b].tokens.size(); });

  // The partial batch takes the shortest sentences; any other placement can cost extra padding.
  std::vector<Batch> batches;
  const std::size_t remainder = order.size() % options.batch_size;
  for (std::size_t start = 0; start < order.size();) {
    const std::size_t n = start == 0 && remainder ? remainder : options.batch_size;
    batches.push_back(build(data, std::span(order).subspan(start, n), vocab, options.min_length));
    start += n;
  }
  if (options.shuffle) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(batches.begin(), batches.end(), rng);
  }
  return batches;
}

Batch make_batch(std::span<const LabeledQuestion> data, const Vocabulary& vocab, std::size_t min_length) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return build(data, order, vocab, std::max<std::size_t>(min_length, 1));
}

Batch pad_batch(const Batch& batch, std::size_t extra) {
  Batch out = batch;
  out.time = batch.time + extra;
  out.indices.assign(batch.size() * out.time, Vocabulary::pad_index);
  for (std::size_t row = 0; row < batch.size(); ++row) {
    std::copy_n(batch.indices.begin() + static_cast<std::ptrdiff_t>(row * batch.time), batch.time,
                out.indices.begin() + static_cast<std::ptrdiff_t>(row * out.time));
  }
  return out;
}

std::size_t padding_tokens(std::span<const Batch> batches) {
  std::size_t total = 0;
  for (const auto& b : batches) {
    for (std::size_t len : b.lengths) total += b.time - len;
  }
  return total;
}

}  // namespace qclass
