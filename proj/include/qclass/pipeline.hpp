#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qclass/corpus.hpp"
#include "qclass/embeddings.hpp"
#include "qclass/manifest.hpp"

namespace qclass {

// Artifact names inside a prepared data directory.
inline constexpr const char* kVocabFile = "vocab.json";
inline constexpr const char* kSplitsFile = "splits.json";
inline constexpr const char* kEmbeddingsFile = "embeddings.bin";
inline constexpr const char* kManifestFile = "manifest.json";

struct PrepareOptions {
  std::filesystem::path train_file;
  std::filesystem::path test_file;
  std::filesystem::path glove_file;
  std::filesystem::path out_dir;
  std::size_t dim = 300;
  std::uint64_t seed = 1;
  bool lowercase = false;
  SplitSizes sizes;
  bool force = false;
};

struct PrepareOutcome {
  bool cache_hit = false;
  RunManifest manifest;
};

// Reads and splits the TREC files, builds the vocabulary, loads GloVe rows and writes the four
// artifacts. A re-run with identical inputs and options is a no-op (cache_hit). A re-run with
// different inputs into a populated directory throws DataError unless options.force is set.
PrepareOutcome prepare_dataset(const PrepareOptions& options, const std::vector<std::string>& argv = {});

// Train-split tokens in first-appearance order, then the remaining splits' tokens.
Vocabulary build_split_vocab(const DatasetSplits& splits);

struct PreparedData {
  Vocabulary vocab;
  DatasetSplits splits;
  EmbeddingTable table;
  RunManifest manifest;
  TokenizerOptions tokenizer;
};

// Loads a prepared directory, verifying artifact checksums against its manifest (DataError on mismatch).
PreparedData load_prepared(const std::filesystem::path& dir);

}  // namespace qclass
