#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>

#include "doctest.h"
#include "fileio.hpp"
#include "redecode/corpus.hpp"
#include "redecode/error.hpp"

using namespace redecode;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("redecode_corpus_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write(const fs::path& dir, const std::string& name, const std::string& text) {
  io::write_file_atomic(dir / name, text);
  return dir / name;
}

TokenList toks(std::initializer_list<const char*> words) { return {words.begin(), words.end()}; }

}  // namespace

TEST_CASE("preprocessing lowercases, strips punctuation and splits") {
  CHECK(*preprocess_sentence("What's the BEST way, to learn?") == toks({"whats", "the", "best", "way", "to", "learn"}));
  CHECK(*preprocess_sentence("  tabs\tand\xC2\xA0" "nbsp  ") == toks({"tabs", "and", "nbsp"}));
  CHECK(*preprocess_sentence("ÉCOLE «déjà»") == toks({"école", "déjà"}));
  CHECK(*preprocess_sentence("a-b c\xE2\x80\x94" "d") == toks({"ab", "cd"}));
  CHECK_FALSE(preprocess_sentence("?!... ,").has_value());
  CHECK_FALSE(preprocess_sentence("").has_value());
  PreprocessOptions keep;
  keep.lowercase = false;
  CHECK(*preprocess_sentence("Keep Case", keep) == toks({"Keep", "Case"}));
  PreprocessOptions shorter;
  shorter.max_tokens = 3;
  CHECK(preprocess_sentence("one two three", shorter).has_value());
  CHECK_FALSE(preprocess_sentence("one two three four", shorter).has_value());
}

TEST_CASE("pairs are dropped when either side fails") {
  const std::vector<RawPair> raw{{"good one", "fine"}, {"...", "x"}, {"y", "a b c d e f g h i j k l m n o p"}};
  std::size_t rejected = 0;
  const auto kept = preprocess_pairs(raw, {}, &rejected);
  CHECK(kept.size() == 1);
  CHECK(rejected == 2);
}

TEST_CASE("vocabulary orders by frequency then bytes") {
  const std::vector<TokenPair> pairs{{toks({"b", "a", "c"}), toks({"a", "d"})}, {toks({"c", "a"}), toks({"e"})}};
  const auto v = Vocabulary::build(pairs);
  CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<unk>", "<s>", "</s>", "a", "c", "b", "d", "e"});
  CHECK(v.id("c") == 5);
  CHECK(v.id("zzz") == kUnkId);
  CHECK(v.token(kEosId) == "</s>");
  CHECK_THROWS_AS(v.token(9), ContractError);

  const auto pruned = Vocabulary::build(pairs, 2);
  CHECK(pruned.tokens() == std::vector<std::string>{"<pad>", "<unk>", "<s>", "</s>", "a", "c"});
  CHECK(pruned.encode(toks({"a", "b"})) == std::vector<TokenId>{4, kUnkId});

  CHECK_THROWS_AS(Vocabulary::from_tokens({"x"}), ContractError);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "a", "a"}), ContractError);
  CHECK_THROWS_AS(Vocabulary::build({}), ContractError);
}

TEST_CASE("decode stops at eos and drops pad and sos") {
  const auto v = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "hi", "there"});
  const std::vector<TokenId> ids{kSosId, 4, kPadId, 5, kEosId, 4};
  CHECK(v.decode(ids) == toks({"hi", "there"}));
  CHECK(v.decode(std::vector<TokenId>{kUnkId}) == toks({"<unk>"}));
}

TEST_CASE("encoded pairs carry eos and padding") {
  const auto v = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "a", "b"});
  const auto p = encode_pair({toks({"a", "b"}), toks({"b"})}, v, 4);
  CHECK(p.original == std::vector<TokenId>{4, 5, kEosId, kPadId, kPadId});
  CHECK(p.paraphrase == std::vector<TokenId>{5, kEosId, kPadId, kPadId, kPadId});
  CHECK(p.original_ids().size() == 3);
  CHECK(p.paraphrase_ids().size() == 2);
  CHECK_THROWS_AS(encode_pair({toks({"a", "a", "a", "a", "a"}), toks({"b"})}, v, 4), ContractError);
  CHECK_THROWS_AS(encode_pair({{}, toks({"b"})}, v, 4), ContractError);
}

TEST_CASE("epoch permutations are deterministic, complete and vary by epoch") {
  const auto a = epoch_permutation(50, 9, 0);
  CHECK(a == epoch_permutation(50, 9, 0));
  CHECK(a != epoch_permutation(50, 9, 1));
  CHECK(a != epoch_permutation(50, 10, 0));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
  CHECK(epoch_permutation(0, 1, 1).empty());
}

TEST_CASE("permutation positions are close to uniform") {
  // Each of 4 items should land first about a quarter of the time.
  std::map<std::size_t, int> first;
  for (std::size_t e = 0; e < 4000; ++e) ++first[epoch_permutation(4, 3, e)[0]];
  for (const auto& [item, count] : first) CHECK(std::abs(count - 1000) < 120);
}

TEST_CASE("batches cover every pair once with matching masks") {
  const auto v = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "a", "b", "c"});
  std::vector<TokenPair> pairs;
  for (int i = 0; i < 7; ++i) {
    TokenList side(static_cast<std::size_t>(1 + i % 3), "a");
    pairs.push_back({side, toks({"b", "c"})});
  }
  const auto batches = make_batches(pairs, v, 3, 5, 2, 4);
  REQUIRE(batches.size() == 3);
  CHECK(batches.back().size() == 1);
  std::multiset<std::size_t> lengths;
  for (const auto& b : batches) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      lengths.insert(b.pairs[k].original_length);
      const auto& m = b.original_mask[k];
      CHECK(m.size() == 5);
      CHECK(std::count(m.begin(), m.end(), 1) == static_cast<long>(b.pairs[k].original_length + 1));
      CHECK(b.paraphrase_mask[k] == std::vector<std::uint8_t>{1, 1, 1, 0, 0});
    }
  }
  CHECK(lengths == std::multiset<std::size_t>{1, 1, 1, 2, 2, 3, 3});
  CHECK_THROWS_AS(make_batches(pairs, v, 0, 5, 2, 4), ContractError);
}

TEST_CASE("pair files accept two or three columns") {
  const auto dir = scratch("tsv");
  const auto path = write(dir, "p.tsv", "a b\tc d\r\nx\ty\t1\n\nq\tr\t0\nm\tn\t1\n");
  PairFileStats stats;
  const auto pairs = load_pairs_tsv(path, &stats);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].original == "a b");
  CHECK(pairs[0].paraphrase == "c d");
  CHECK(pairs[2].original == "m");
  CHECK(stats.rows == 4);
  CHECK(stats.kept == 3);
  CHECK(stats.discarded == 1);

  const auto bad = write(dir, "bad.tsv", "a\tb\nonly one column\n");
  try {
    load_pairs_tsv(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(load_pairs_tsv(dir / "missing.tsv"), DataError);
}

TEST_CASE("the bundled toy corpus loads cleanly") {
  const auto raw = load_pairs_tsv(fs::path(REDECODE_TEST_DATA) / "toy_pairs.tsv");
  std::size_t rejected = 0;
  const auto pairs = preprocess_pairs(raw, {}, &rejected);
  CHECK(pairs.size() == 32);
  CHECK(rejected == 0);
  const auto v = Vocabulary::build(pairs);
  CHECK(v.size() == 56);
}

TEST_CASE("caption groups yield two disjoint pairs per image") {
  const auto dir = scratch("captions");
  const auto path = write(dir, "c.txt", "c1\tc2\tc3\tc4\tc5\nshort\tgroup\tonly\nd1\td2\td3\td4\n");
  Rng rng(3);
  const auto pairs = load_caption_groups(path, rng);
  REQUIRE(pairs.size() == 4);
  std::set<std::string> first{pairs[0].original, pairs[0].paraphrase, pairs[1].original, pairs[1].paraphrase};
  CHECK(first.size() == 4);
  for (const auto& c : first) CHECK(c[0] == 'c');
  std::set<std::string> second{pairs[2].original, pairs[2].paraphrase, pairs[3].original, pairs[3].paraphrase};
  CHECK(second == std::set<std::string>{"d1", "d2", "d3", "d4"});

  Rng again(3);
  const auto repeat = load_caption_groups(path, again);
  CHECK(repeat[0].original == pairs[0].original);
  CHECK(repeat[1].paraphrase == pairs[1].paraphrase);

  CHECK_THROWS_AS(load_caption_groups(write(dir, "empty.txt", "\n\n"), rng), ContractError);
}

TEST_CASE("caption draws use every caption of a five-caption image") {
  const auto dir = scratch("captions_uniform");
  const auto path = write(dir, "c.txt", "c1\tc2\tc3\tc4\tc5\n");
  std::map<std::string, int> used;
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    for (const auto& p : load_caption_groups(path, rng)) {
      ++used[p.original];
      ++used[p.paraphrase];
    }
  }
  REQUIRE(used.size() == 5);
  for (const auto& [c, n] : used) CHECK(std::abs(n - 1600) < 150);
}

TEST_CASE("embedding files fill known rows and keep seeded rows elsewhere") {
  const auto dir = scratch("emb");
  const auto v = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "cat", "dog", "emu"});
  const auto path = write(dir, "e.txt", "dog 0.5 -1 2 \ncat 1e-3 0 3\nzebra 9 9 9\ndog 7 7 7\n");
  Rng rng(5);
  EmbeddingReport report;
  const auto table = load_embeddings(path, v, 3, rng, &report);
  CHECK(table.shape() == Shape{7, 3});
  CHECK(report.hits == 2);
  CHECK(report.misses == 1);
  CHECK(table.at(5, 0) == 0.5);
  CHECK(table.at(5, 2) == 2.0);
  CHECK(table.at(4, 0) == 0.001);
  for (std::size_t k = 0; k < 3; ++k) CHECK(table.at(0, k) == 0.0);

  Rng same(5);
  const auto random = random_embeddings(v, 3, same);
  CHECK(table.at(6, 1) == random.at(6, 1));
  CHECK(table.at(1, 2) == random.at(1, 2));
  CHECK(std::abs(random.at(6, 1)) <= xavier_bound({7, 3}));

  CHECK_THROWS_AS(load_embeddings(write(dir, "d4.txt", "cat 1 2 3 4\n"), v, 3, rng), DimensionError);
  try {
    load_embeddings(write(dir, "bad.txt", "cat 1 2 3\ndog 1 x 3\n"), v, 3, rng);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(load_embeddings(write(dir, "short.txt", "cat 1 2 3\ndog 1 2\n"), v, 3, rng), ParseError);
}

namespace {

// Pairs kept after preprocessing a file named by an environment variable,
// or nullopt when the variable is unset.
std::optional<std::size_t> kept_pairs(const char* var, bool caption_groups) {
  const char* path = std::getenv(var);
  if (!path || !*path) return std::nullopt;
  Rng rng(0);
  const auto raw = caption_groups ? load_caption_groups(path, rng) : load_pairs_tsv(path);
  return preprocess_pairs(raw).size();
}

}  // namespace

TEST_CASE("full dataset ingestion counts when the data is present") {
  const struct {
    const char* var;
    bool captions;
    std::size_t expected;
  } sets[] = {
      {"REDECODE_QUORA_TRAIN", false, 87116},
      {"REDECODE_QUORA_TEST", false, 18773},
      {"REDECODE_MSCOCO_TRAIN", true, 149438},
      {"REDECODE_MSCOCO_TEST", true, 73221},
  };
  for (const auto& s : sets) {
    const auto n = kept_pairs(s.var, s.captions);
    if (!n) {
      MESSAGE(s.var << " not set; skipping");
      continue;
    }
    CAPTURE(s.var);
    CHECK(*n == s.expected);
  }
}
