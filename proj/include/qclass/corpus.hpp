#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace qclass {

// TREC coarse classes, in fixed id order.
enum class CoarseLabel : int { ABBR = 0, DESC = 1, ENTY = 2, HUM = 3, LOC = 4, NUM = 5 };

inline constexpr int kNumClasses = 6;
inline constexpr std::array<std::string_view, kNumClasses> kLabelNames = {"ABBR", "DESC", "ENTY",
                                                                          "HUM",  "LOC",  "NUM"};

inline std::string_view label_name(CoarseLabel label) { return kLabelNames[static_cast<int>(label)]; }
inline int label_id(CoarseLabel label) { return static_cast<int>(label); }
std::optional<CoarseLabel> label_from_name(std::string_view name);
CoarseLabel label_from_id(int id);

struct LabeledQuestion {
  std::vector<std::string> tokens;
  CoarseLabel label = CoarseLabel::ABBR;
  std::string fine_label;
  std::size_t source_index = 0;  // 0-based position among the examples of its source file
};

struct TokenizerOptions {
  bool lowercase = false;
};

// Whitespace split, then leading/trailing punctuation marks become their own tokens.
// A trailing '.' stays attached when the rest of the word already contains a '.' (U.S.).
std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& options = {});

// "COARSE:fine question text". line_number is only used for error messages.
LabeledQuestion parse_trec_line(std::string_view line, std::size_t line_number = 0,
                                const TokenizerOptions& options = {});

// Reads a TREC label file. Blank lines are skipped; bytes that are not valid UTF-8 are decoded as
// Latin-1. Throws DataError when unreadable and ParseError (with line number) on a malformed line.
std::vector<LabeledQuestion> read_trec_file(const std::filesystem::path& path, const TokenizerOptions& options = {});

// Keeps valid UTF-8 sequences and re-encodes every other byte as the Latin-1 code point.
std::string to_utf8_lenient(std::string_view bytes);

class Vocabulary {
 public:
  static constexpr std::int32_t pad_index = 0;
  static constexpr std::int32_t unk_index = 1;
  static constexpr std::string_view pad_symbol = "<pad>";
  static constexpr std::string_view unk_symbol = "<unk>";

  Vocabulary() = default;

  // Returns the index of token, adding it if new.
  std::int32_t add(const std::string& token);
  std::int32_t index(std::string_view token) const;
  bool contains(std::string_view token) const;
  // Surface token for indices >= 2, the reserved symbols for 0 and 1.
  std::string_view token(std::int32_t index) const;
  std::size_t size() const noexcept { return surface_.size() + 2; }

  std::vector<std::int32_t> encode(std::span<const std::string> tokens) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept { return std::hash<std::string_view>{}(s); }
  };
  std::unordered_map<std::string, std::int32_t, Hash, std::equal_to<>> ids_;
  std::vector<std::string> surface_;  // surface_[i] has index i + 2
};

// Indices in first-appearance order over the questions. Throws std::invalid_argument when empty.
Vocabulary build_vocab(std::span<const LabeledQuestion> questions);

struct DatasetSplits {
  std::vector<LabeledQuestion> train;
  std::vector<LabeledQuestion> validation;
  std::vector<LabeledQuestion> internal_test;
  std::vector<LabeledQuestion> official_test;
};

struct SplitSizes {
  std::size_t validation = 500;
  std::size_t internal_test = 500;
  std::size_t min_total = 5000;
};

// Seeded shuffle of full_train; the last internal_test examples become the internal test set, the
// preceding validation examples the validation set, the rest train. official_test passes through.
DatasetSplits split_dataset(std::vector<LabeledQuestion> full_train, std::vector<LabeledQuestion> official_test,
                            std::uint64_t seed, const SplitSizes& sizes = {});

// List of {tokens, label, fine, index, split} records.
nlohmann::json splits_to_json(const DatasetSplits& splits);
DatasetSplits splits_from_json(const nlohmann::json& j);

}  // namespace qclass
