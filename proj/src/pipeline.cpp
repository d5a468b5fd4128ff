#include "qclass/pipeline.hpp"

#include <fstream>

#include "qclass/errors.hpp"

namespace qclass {

namespace fs = std::filesystem;

Vocabulary build_split_vocab(const DatasetSplits& splits) {
  Vocabulary vocab = build_vocab(splits.train);
  for (const auto* part : {&splits.validation, &splits.internal_test, &splits.official_test}) {
    for (const auto& q : *part) {
      for (const auto& t : q.tokens) vocab.add(t);
    }
  }
  return vocab;
}

namespace {

nlohmann::json prepare_options_json(const PrepareOptions& o) {
  return {{"dim", o.dim},
          {"seed", o.seed},
          {"lowercase", o.lowercase},
          {"validation_size", o.sizes.validation},
          {"internal_test_size", o.sizes.internal_test},
          {"min_total", o.sizes.min_total}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace

PrepareOutcome prepare_dataset(const PrepareOptions& o, const std::vector<std::string>& argv) {
  for (const auto& p : {o.train_file, o.test_file, o.glove_file}) {
    if (!fs::is_regular_file(p)) throw DataError("missing input file " + p.string());
  }
  RunManifest m;
  m.command = "prepare";
  m.argv = argv;
  m.git_revision = git_revision();
  m.started_at = utc_timestamp();
  m.seed = o.seed;
  m.input_checksums = {{"train", sha256_file(o.train_file)},
                       {"test", sha256_file(o.test_file)},
                       {"glove", sha256_file(o.glove_file)}};
  m.extra["options"] = prepare_options_json(o);

  const fs::path manifest_path = o.out_dir / kManifestFile;
  if (fs::exists(manifest_path) && !o.force) {
    const RunManifest old = RunManifest::from_json(read_json(manifest_path));
    const bool same = old.input_checksums == m.input_checksums && old.extra.value("options", nlohmann::json()) ==
                                                                      m.extra["options"];
    if (!same) {
      throw DataError("inputs or options differ from the existing preparation in " + o.out_dir.string() +
                      "; rerun with --force to overwrite");
    }
    bool intact = true;
    for (const auto& [name, sum] : old.output_checksums) {
      const fs::path p = o.out_dir / name;
      intact = intact && fs::exists(p) && sha256_file(p) == sum;
    }
    if (intact && old.output_checksums.size() == 3) return {true, old};
  }

  fs::create_directories(o.out_dir);
  const TokenizerOptions tok{o.lowercase};
  DatasetSplits splits = split_dataset(read_trec_file(o.train_file, tok), read_trec_file(o.test_file, tok), o.seed,
                                       o.sizes);
  const Vocabulary vocab = build_split_vocab(splits);
  const EmbeddingTable table = load_glove(o.glove_file, vocab, o.dim, o.seed);

  write_text(o.out_dir / kVocabFile, vocab.to_json().dump() + "\n");
  write_text(o.out_dir / kSplitsFile, splits_to_json(splits).dump() + "\n");
  write_embedding_cache(o.out_dir / kEmbeddingsFile, table);
  for (const char* name : {kVocabFile, kSplitsFile, kEmbeddingsFile}) {
    m.output_checksums[name] = sha256_file(o.out_dir / name);
  }
  m.extra["counts"] = {{"train", splits.train.size()},
                       {"validation", splits.validation.size()},
                       {"internal_test", splits.internal_test.size()},
                       {"official_test", splits.official_test.size()},
                       {"vocab", vocab.size()},
                       {"oov", table.oov_count},
                       {"glove_lines_skipped", table.skipped_lines}};
  m.finished_at = utc_timestamp();
  m.write(manifest_path);
  return {false, m};
}

PreparedData load_prepared(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestFile;
  if (!fs::exists(manifest_path)) throw DataError("no prepared data in " + dir.string() + " (run prepare first)");
  PreparedData d;
  d.manifest = RunManifest::from_json(read_json(manifest_path));
  for (const auto& [name, sum] : d.manifest.output_checksums) {
    if (sha256_file(dir / name) != sum) throw DataError("checksum mismatch for " + (dir / name).string());
  }
  d.vocab = Vocabulary::from_json(read_json(dir / kVocabFile));
  d.splits = splits_from_json(read_json(dir / kSplitsFile));
  d.table = read_embedding_cache(dir / kEmbeddingsFile);
  d.tokenizer.lowercase = d.manifest.extra.value("options", nlohmann::json::object()).value("lowercase", false);
  if (d.table.vocab_size() != d.vocab.size()) throw DataError("embedding cache does not match the vocabulary");
  return d;
}

}  // namespace qclass
