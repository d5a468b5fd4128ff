#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "qclass/embeddings.hpp"
#include "qclass/errors.hpp"
#include "synthetic.hpp"

using namespace qclass;
namespace fs = std::filesystem;

namespace {

Vocabulary vocab_of(std::vector<std::string> tokens) {
  Vocabulary v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

class GloveTest : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = synth::make_temp_dir("glove"); }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name, std::ios::binary) << text;
    return dir_ / name;
  }
  fs::path dir_;
};

}  // namespace

TEST_F(GloveTest, PassThroughUnkAndPad) {
  const auto path = write("g.txt", "the 0.1 0.2 -0.3\nzebra 1 2 3\nWho 0.5 0.5 0.5\n");
  const Vocabulary v = vocab_of({"the", "zqxjk9", "Who", "other"});
  const EmbeddingTable t = load_glove(path, v, 3, 42);
  ASSERT_EQ(t.vocab_size(), v.size());
  EXPECT_EQ(t.matrix.at(v.index("the"), 0), 0.1f);
  EXPECT_EQ(t.matrix.at(v.index("the"), 2), -0.3f);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(t.matrix.at(0, c), 0.0f);
    EXPECT_EQ(t.matrix.at(v.index("zqxjk9"), c), t.matrix.at(1, c));
    EXPECT_EQ(t.matrix.at(v.index("other"), c), t.matrix.at(1, c));
    EXPECT_LE(std::abs(t.matrix.at(1, c)), kUnkInitRange);
  }
  EXPECT_EQ(t.oov_count, 2u);
}

TEST_F(GloveTest, SameSeedSameTable) {
  const auto path = write("g.txt", "a 1 2\n");
  const Vocabulary v = vocab_of({"a", "b"});
  const auto t1 = load_glove(path, v, 2, 7), t2 = load_glove(path, v, 2, 7), t3 = load_glove(path, v, 2, 8);
  EXPECT_EQ(t1.matrix.vector(), t2.matrix.vector());
  EXPECT_NE(t1.matrix.vector(), t3.matrix.vector());
}

TEST_F(GloveTest, ShortLineIsAFormatErrorWithLineNumber) {
  const auto path = write("g.txt", "a 1 2 3\nb 1 2\n");
  try {
    load_glove(path, vocab_of({"a"}), 3, 1);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  const auto bad = write("bad.txt", "a 1 x 3\n");
  EXPECT_THROW(load_glove(bad, vocab_of({"a"}), 3, 1), FormatError);
  EXPECT_THROW(load_glove(dir_ / "missing.txt", vocab_of({"a"}), 3, 1), DataError);
}

TEST_F(GloveTest, TokensWithSpacesAreSkipped) {
  const auto path = write("g.txt", "a 1 2\nnew york 3 4\nb 5 6\n");
  const auto t = load_glove(path, vocab_of({"a", "b", "york"}), 2, 1);
  EXPECT_EQ(t.skipped_lines, 1u);
  EXPECT_EQ(t.matrix.at(3, 0), 5.0f);
  EXPECT_EQ(t.oov_count, 1u);
}

TEST_F(GloveTest, LookupAndCacheRoundTrip) {
  const auto path = dir_ / "synthetic.txt";
  synth::write_synthetic_glove(path, 50, 3);
  const auto qs = synth::synthetic_questions(200, 4);
  const Vocabulary v = build_vocab(qs);
  const auto t = load_glove(path, v, 50, 1);

  double norm_sum = 0.0;
  for (std::size_t r = 2; r < t.vocab_size(); ++r) {
    double n = 0.0;
    for (std::size_t c = 0; c < 50; ++c) n += t.matrix.at(r, c) * t.matrix.at(r, c);
    norm_sum += std::sqrt(n);
  }
  EXPECT_GT(norm_sum, 0.0);

  const std::vector<std::int32_t> idx = {0, 2, 2, 3};
  const auto e = embed_lookup(t, idx, 2, 2);
  EXPECT_EQ(e.shape(), (Shape{2, 2, 50}));
  for (std::size_t c = 0; c < 50; ++c) {
    EXPECT_EQ(e.at(0, 0, c), 0.0f);
    EXPECT_EQ(e.at(0, 1, c), e.at(1, 0, c));
    EXPECT_EQ(e.at(1, 1, c), t.matrix.at(3, c));
  }
  const std::vector<std::int32_t> bad = {static_cast<std::int32_t>(t.vocab_size())};
  EXPECT_THROW(embed_lookup(t, bad, 1, 1), std::out_of_range);

  write_embedding_cache(dir_ / "e.bin", t);
  const auto back = read_embedding_cache(dir_ / "e.bin");
  EXPECT_EQ(back.matrix.vector(), t.matrix.vector());
  EXPECT_EQ(back.dim, 50u);
  EXPECT_EQ(fs::file_size(dir_ / "e.bin"), 16 + 4 * t.matrix.size());
}

TEST_F(GloveTest, FileVectorsMatchRowsByGrep) {
  // Independent oracle: find each token's line in the file with plain string search.
  const auto path = write("g.txt", "Who 0.25 -1.5\nkilled 2 3\nGandhi -0.125 4\n? 9 8\n");
  std::vector<LabeledQuestion> qs(1);
  qs[0].tokens = {"Who", "killed", "Gandhi", "?"};
  const Vocabulary v = build_vocab(qs);
  const auto t = load_glove(path, v, 2, 1);
  const auto e = embed_lookup(t, v.encode(qs[0].tokens), 1, 4);
  std::ifstream is(path);
  std::string tok;
  float a = 0, b = 0;
  std::size_t pos = 0;
  while (is >> tok >> a >> b) {
    EXPECT_EQ(e.at(0, pos, 0), a);
    EXPECT_EQ(e.at(0, pos, 1), b);
    ++pos;
  }
  EXPECT_EQ(pos, 4u);
}
