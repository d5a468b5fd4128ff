#include "qclass/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <stdexcept>

#include "qclass/errors.hpp"

namespace qclass {

std::optional<CoarseLabel> label_from_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kLabelNames[i] == name) return static_cast<CoarseLabel>(i);
  }
  return std::nullopt;
}

CoarseLabel label_from_id(int id) {
  if (id < 0 || id >= kNumClasses) throw std::out_of_range("label id " + std::to_string(id) + " outside [0, 6)");
  return static_cast<CoarseLabel>(id);
}

namespace {

constexpr std::array<std::string_view, 4> kLeadingMarks = {"``", "`", "\"", "("};
constexpr std::array<std::string_view, 10> kTrailingMarks = {"''", "?", "!", ",", ".", "'", "\"", ")", ";", ":"};

bool is_mark(std::string_view w) {
  return std::find(kLeadingMarks.begin(), kLeadingMarks.end(), w) != kLeadingMarks.end() ||
         std::find(kTrailingMarks.begin(), kTrailingMarks.end(), w) != kTrailingMarks.end();
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

void split_word(std::string_view word, std::vector<std::string>& out) {
  std::vector<std::string_view> leading;
  std::vector<std::string_view> trailing;  // innermost last
  bool changed = true;
  while (changed && !is_mark(word)) {
    changed = false;
    for (std::string_view m : kLeadingMarks) {
      if (word.size() > m.size() && word.starts_with(m)) {
        leading.push_back(m);
        word.remove_prefix(m.size());
        changed = true;
        break;
      }
    }
    if (changed || is_mark(word)) continue;
    for (std::string_view m : kTrailingMarks) {
      if (word.size() > m.size() && word.ends_with(m)) {
        const std::string_view core = word.substr(0, word.size() - m.size());
        if (m == "." && core.find('.') != std::string_view::npos) continue;
        trailing.push_back(m);
        word = core;
        changed = true;
        break;
      }
    }
  }
  for (auto m : leading) out.emplace_back(m);
  out.emplace_back(word);
  for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) out.emplace_back(*it);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& options) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) split_word(text.substr(start, i - start), out);
  }
  if (out.empty()) throw ParseError("empty sentence");
  if (options.lowercase) {
    for (auto& tok : out) {
      for (char& c : tok) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      }
    }
  }
  return out;
}

LabeledQuestion parse_trec_line(std::string_view line, std::size_t line_number, const TokenizerOptions& options) {
  line = trim(line);
  const std::size_t colon = line.find(':');
  const std::size_t first_space = line.find_first_of(" \t");
  if (colon == std::string_view::npos || (first_space != std::string_view::npos && colon > first_space)) {
    throw ParseError("missing ':' after the coarse label", line_number);
  }
  const std::string_view coarse = line.substr(0, colon);
  const auto label = label_from_name(coarse);
  if (!label) throw ParseError("unknown coarse label '" + std::string(coarse) + "'", line_number);

  std::string_view rest = line.substr(colon + 1);
  const std::size_t fine_end = rest.find_first_of(" \t");
  const std::string_view fine = rest.substr(0, fine_end);
  const std::string_view question = fine_end == std::string_view::npos ? std::string_view{} : trim(rest.substr(fine_end));
  if (question.empty()) throw ParseError("empty question", line_number);

  LabeledQuestion q;
  q.label = *label;
  q.fine_label = std::string(fine);
  q.tokens = tokenize(question, options);
  return q;
}

std::string to_utf8_lenient(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  while (i < bytes.size()) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    std::size_t len = 0;
    if (c < 0x80) {
      len = 1;
    } else if (c >= 0xC2 && c <= 0xDF) {
      len = 2;
    } else if (c >= 0xE0 && c <= 0xEF) {
      len = 3;
    } else if (c >= 0xF0 && c <= 0xF4) {
      len = 4;
    }
    bool valid = len > 0 && i + len <= bytes.size();
    for (std::size_t k = 1; valid && k < len; ++k) {
      valid = (static_cast<unsigned char>(bytes[i + k]) & 0xC0) == 0x80;
    }
    if (valid) {
      out.append(bytes.substr(i, len));
      i += len;
    } else {
      out.push_back(static_cast<char>(0xC0 | (c >> 6)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
      ++i;
    }
  }
  return out;
}

std::vector<LabeledQuestion> read_trec_file(const std::filesystem::path& path, const TokenizerOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read TREC file " + path.string());
  std::vector<LabeledQuestion> out;
  std::string raw;
  std::size_t line_number = 0;
  while (std::getline(in, raw)) {
    ++line_number;
    const std::string line = to_utf8_lenient(raw);
    if (trim(line).empty()) continue;
    LabeledQuestion q = parse_trec_line(line, line_number, options);
    q.source_index = out.size();
    out.push_back(std::move(q));
  }
  return out;
}

std::int32_t Vocabulary::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(surface_.size() + 2);
  surface_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::int32_t Vocabulary::index(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk_index : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.find(token) != ids_.end(); }

std::string_view Vocabulary::token(std::int32_t index) const {
  if (index == pad_index) return pad_symbol;
  if (index == unk_index) return unk_symbol;
  if (index < 0 || static_cast<std::size_t>(index) >= size()) {
    throw std::out_of_range("vocabulary index " + std::to_string(index) + " out of range");
  }
  return surface_[static_cast<std::size_t>(index) - 2];
}

std::vector<std::int32_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(index(t));
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  return nlohmann::json{{"pad_index", pad_index}, {"unk_index", unk_index}, {"tokens", surface_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  for (const auto& t : j.at("tokens")) {
    const std::string tok = t.get<std::string>();
    if (v.contains(tok)) throw FormatError("duplicate token '" + tok + "' in vocabulary file");
    v.add(tok);
  }
  return v;
}

Vocabulary build_vocab(std::span<const LabeledQuestion> questions) {
  if (questions.empty()) throw std::invalid_argument("build_vocab: no questions");
  Vocabulary v;
  for (const auto& q : questions) {
    for (const auto& t : q.tokens) v.add(t);
  }
  return v;
}

DatasetSplits split_dataset(std::vector<LabeledQuestion> full_train, std::vector<LabeledQuestion> official_test,
                            std::uint64_t seed, const SplitSizes& sizes) {
  const std::size_t held_out = sizes.validation + sizes.internal_test;
  if (full_train.size() < std::max(sizes.min_total, held_out + 1)) {
    throw DataError("split_dataset: " + std::to_string(full_train.size()) + " training examples, need at least " +
                    std::to_string(std::max(sizes.min_total, held_out + 1)));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(full_train.begin(), full_train.end(), rng);

  DatasetSplits s;
  const std::size_t n_train = full_train.size() - held_out;
  auto first = std::make_move_iterator(full_train.begin());
  s.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(first + static_cast<std::ptrdiff_t>(n_train),
                      first + static_cast<std::ptrdiff_t>(n_train + sizes.validation));
  s.internal_test.assign(first + static_cast<std::ptrdiff_t>(n_train + sizes.validation),
                         std::make_move_iterator(full_train.end()));
  s.official_test = std::move(official_test);
  return s;
}

namespace {

void append_records(nlohmann::json& out, const std::vector<LabeledQuestion>& qs, const char* split) {
  for (const auto& q : qs) {
    out.push_back({{"tokens", q.tokens},
                   {"label", std::string(label_name(q.label))},
                   {"fine", q.fine_label},
                   {"index", q.source_index},
                   {"split", split}});
  }
}

}  // namespace

nlohmann::json splits_to_json(const DatasetSplits& splits) {
  nlohmann::json out = nlohmann::json::array();
  append_records(out, splits.train, "train");
  append_records(out, splits.validation, "validation");
  append_records(out, splits.internal_test, "internal_test");
  append_records(out, splits.official_test, "official_test");
  return out;
}

DatasetSplits splits_from_json(const nlohmann::json& j) {
  DatasetSplits s;
  for (const auto& rec : j) {
    LabeledQuestion q;
    q.tokens = rec.at("tokens").get<std::vector<std::string>>();
    const auto label = label_from_name(rec.at("label").get<std::string>());
    if (!label || q.tokens.empty()) throw FormatError("malformed record in splits file");
    q.label = *label;
    q.fine_label = rec.value("fine", "");
    q.source_index = rec.value("index", std::size_t{0});
    const std::string split = rec.at("split").get<std::string>();
    if (split == "train") {
      s.train.push_back(std::move(q));
    } else if (split == "validation") {
      s.validation.push_back(std::move(q));
    } else if (split == "internal_test") {
      s.internal_test.push_back(std::move(q));
    } else if (split == "official_test") {
      s.official_test.push_back(std::move(q));
    } else {
      throw FormatError("unknown split '" + split + "' in splits file");
    }
  }
  return s;
}

}  // namespace qclass
