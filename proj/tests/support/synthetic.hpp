#pragma once

// Synthetic stand-ins for the TREC files and GloVe vectors, used by tests and the CI-scale
// acceptance run. Each class has its own cue words; fillers are shared. Cue vectors carry a
// class direction so frozen-embedding models can learn the task.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qclass/corpus.hpp"
#include "qclass/embeddings.hpp"

namespace qclass::synth {

// n lines in TREC label format ("HUM:ind Who ... ?").
std::string synthetic_trec_text(std::size_t n, std::uint64_t seed);
void write_synthetic_trec(const std::filesystem::path& path, std::size_t n, std::uint64_t seed);

// Every generator word except a deterministic ~oov_fraction share, plus some unrelated words.
void write_synthetic_glove(const std::filesystem::path& path, std::size_t dim, std::uint64_t seed,
                           double oov_fraction = 0.05);

std::vector<LabeledQuestion> synthetic_questions(std::size_t n, std::uint64_t seed);

// In-memory prepared dataset built from the synthetic files through the real loaders.
struct SyntheticDataset {
  DatasetSplits splits;
  Vocabulary vocab;
  EmbeddingTable table;
};
SyntheticDataset make_synthetic_dataset(std::size_t n_train, std::size_t n_test, std::size_t dim,
                                        std::uint64_t seed, const SplitSizes& sizes);

// Fresh empty directory under the system temp dir.
std::filesystem::path make_temp_dir(const std::string& tag);

}  // namespace qclass::synth
