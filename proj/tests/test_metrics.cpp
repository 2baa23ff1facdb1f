#include <cmath>

#include "doctest.h"
#include "metric_cases.hpp"
#include "metric_oracles.hpp"
#include "redecode/error.hpp"
#include "redecode/metrics.hpp"

using namespace redecode;
using cases::split;

namespace {

double evaluate(const cases::Case& c) {
  std::vector<TokenList> cand, ref;
  for (const auto& s : c.candidates) cand.push_back(split(s));
  for (const auto& s : c.references) ref.push_back(split(s));
  switch (c.metric) {
    case cases::Metric::bleu:
      return bleu_corpus(cand, ref) / 100.0;
    case cases::Metric::meteor:
      return meteor_corpus(cand, ref) / 100.0;
    case cases::Metric::ter:
      return ter_corpus(cand, ref) / 100.0;
  }
  return -1.0;
}

TokenList random_sentence(Rng& rng, std::size_t max_len, std::size_t alphabet) {
  TokenList out(1 + rng.below(max_len));
  for (auto& w : out) w = "w" + std::to_string(rng.below(alphabet));
  return out;
}

}  // namespace

TEST_CASE("porter stemmer reference pairs") {
  const std::vector<std::pair<const char*, const char*>> pairs{
      {"caresses", "caress"},   {"ponies", "poni"},         {"ties", "ti"},           {"caress", "caress"},
      {"cats", "cat"},          {"feed", "feed"},           {"agreed", "agre"},       {"plastered", "plaster"},
      {"bled", "bled"},         {"motoring", "motor"},      {"sing", "sing"},         {"conflated", "conflat"},
      {"troubled", "troubl"},   {"sized", "size"},          {"hopping", "hop"},       {"tanned", "tan"},
      {"falling", "fall"},      {"hissing", "hiss"},        {"fizzed", "fizz"},       {"failing", "fail"},
      {"filing", "file"},       {"happy", "happi"},         {"sky", "sky"},           {"relational", "relat"},
      {"conditional", "condit"}, {"rational", "ration"},    {"valenci", "valenc"},    {"digitizer", "digit"},
      {"operator", "oper"},     {"feudalism", "feudal"},    {"decisiveness", "decis"}, {"hopefulness", "hope"},
      {"callousness", "callous"}, {"formaliti", "formal"},  {"sensitiviti", "sensit"}, {"sensibiliti", "sensibl"},
      {"triplicate", "triplic"}, {"formative", "form"},     {"formalize", "formal"},  {"electrical", "electr"},
      {"hopeful", "hope"},      {"goodness", "good"},       {"revival", "reviv"},     {"allowance", "allow"},
      {"inference", "infer"},   {"airliner", "airlin"},     {"adjustable", "adjust"}, {"defensible", "defens"},
      {"irritant", "irrit"},    {"replacement", "replac"},  {"adjustment", "adjust"}, {"dependent", "depend"},
      {"adoption", "adopt"},    {"communism", "commun"},    {"activate", "activ"},    {"effective", "effect"},
      {"bowdlerize", "bowdler"}, {"probate", "probat"},     {"rate", "rate"},         {"cease", "ceas"},
      {"controlling", "control"}, {"roll", "roll"},         {"generalizations", "gener"}, {"oscillators", "oscil"},
      {"exercising", "exercis"}, {"exercise", "exercis"},   {"a", "a"},               {"is", "is"},
  };
  for (const auto& [word, stem] : pairs) {
    CAPTURE(word);
    CHECK(porter_stem(word) == stem);
  }
}

TEST_CASE("hand-computed metric cases") {
  const auto all = cases::hand_cases();
  CHECK(all.size() >= 10);
  for (const auto& c : all) {
    CAPTURE(c.name);
    CHECK(std::abs(evaluate(c) - c.expected) < 1e-6);
  }
}

TEST_CASE("bleu agrees with an independent n-gram counter") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TokenList> cand, ref;
    const std::size_t n = 1 + rng.below(4);
    for (std::size_t k = 0; k < n; ++k) {
      cand.push_back(random_sentence(rng, 8, 4));
      ref.push_back(random_sentence(rng, 8, 4));
    }
    CHECK(bleu_corpus(cand, ref) / 100.0 == doctest::Approx(oracle::bleu(cand, ref)).epsilon(1e-12));
  }
}

TEST_CASE("bleu options and edge cases") {
  const auto cand = split("the cat sat");
  const auto ref = split("the cat sat down");
  BleuOptions plain;
  plain.smoothing = false;
  CHECK(bleu_sentence(cand, ref, plain) == 0.0);  // no 4-grams at all
  plain.max_order = 3;
  CHECK(bleu_sentence(cand, ref, plain) == doctest::Approx(100.0 * std::exp(1.0 - 4.0 / 3.0)));
  const auto counts = bleu_counts(split("a a b"), split("a b b"), 2);
  CHECK(counts.matches == std::vector<std::size_t>{2, 1});
  CHECK(counts.totals == std::vector<std::size_t>{3, 2});
  CHECK(bleu_sentence({}, ref) == 0.0);
  CHECK_THROWS_AS(bleu_corpus(std::vector<TokenList>{}, std::vector<TokenList>{}), ContractError);
  CHECK_THROWS_AS(bleu_corpus(std::vector<TokenList>{cand}, std::vector<TokenList>{}), ContractError);
}

TEST_CASE("meteor exact alignment matches exhaustive enumeration") {
  Rng rng(2);
  MeteorOptions exact;
  exact.use_stems = false;
  for (int trial = 0; trial < 400; ++trial) {
    const auto cand = random_sentence(rng, 7, 3);
    const auto ref = random_sentence(rng, 7, 3);
    const auto got = meteor_align(cand, ref, exact);
    const auto want = oracle::exact_alignment(cand, ref);
    CAPTURE(trial);
    CHECK(got.matches == want.matches);
    CHECK(got.chunks == want.chunks);
    CHECK(meteor_score(cand, ref, exact) ==
          doctest::Approx(oracle::meteor(want.matches, want.chunks, cand.size(), ref.size())).epsilon(1e-12));
  }
}

TEST_CASE("meteor alignment is one to one and consistent") {
  const auto a = meteor_align(split("the cats sat on the mats"), split("a cat sits on the mat"));
  std::vector<bool> used(6, false);
  std::size_t linked = 0;
  for (const long r : a.alignment) {
    if (r < 0) continue;
    CHECK_FALSE(used[static_cast<std::size_t>(r)]);
    used[static_cast<std::size_t>(r)] = true;
    ++linked;
  }
  CHECK(linked == a.matches);
  CHECK(a.matches == 4);  // cat(s), on, the, mat(s); sat and sits stem differently
}

TEST_CASE("meteor synonym stage uses the supplied table only") {
  const SynonymTable table{{"big", {"large"}}};
  MeteorOptions with;
  with.synonyms = &table;
  CHECK(meteor_score(split("big dog"), split("large dog"), with) == doctest::Approx(0.9375));
  CHECK(meteor_score(split("large dog"), split("big dog"), with) == doctest::Approx(0.9375));
  CHECK(meteor_score(split("big dog"), split("large dog")) == doctest::Approx(0.25));
  MeteorOptions no_stems;
  no_stems.use_stems = false;
  CHECK(meteor_score(split("exercising"), split("exercise"), no_stems) == 0.0);
}

TEST_CASE("meteor is symmetric for equal lengths") {
  Rng rng(3);
  MeteorOptions exact;
  exact.use_stems = false;
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_sentence(rng, 6, 3);
    auto b = random_sentence(rng, 6, 3);
    b.resize(a.size(), "w0");
    CHECK(meteor_score(a, b, exact) == doctest::Approx(meteor_score(b, a, exact)).epsilon(1e-12));
  }
}

TEST_CASE("edit distance hand cases") {
  const TokenList kitten{"k", "i", "t", "t", "e", "n"};
  const TokenList sitting{"s", "i", "t", "t", "i", "n", "g"};
  CHECK(edit_distance(kitten, sitting) == 3);
  CHECK(edit_distance(kitten, {}) == 6);
  CHECK(edit_distance({}, {}) == 0);
  CHECK_THROWS_AS(ter_score(kitten, {}), ContractError);
  const auto c = ter_counts(split("b a c"), split("a b c"));
  CHECK(c.shifts == 1);
  CHECK(c.edits == 0);
}

TEST_CASE("ter equals the exhaustive shift-and-edit minimum on short sentences") {
  const auto all = oracle::all_sentences({"a", "b", "c"}, 4);
  std::size_t checked = 0, mismatches = 0;
  for (const auto& cand : all) {
    const auto arrangements = oracle::shift_distances(cand);
    for (const auto& ref : all) {
      if (ref.empty()) continue;
      ++checked;
      if (ter_counts(cand, ref).total() != oracle::min_ter_edits(arrangements, ref)) ++mismatches;
    }
  }
  CHECK(checked == 121 * 120);
  CHECK(mismatches == 0);
}

TEST_CASE("self comparisons score perfectly on a fuzz set") {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto s = random_sentence(rng, 15, 30);
    CHECK(bleu_sentence(s, s) == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(ter_score(s, s) == 0.0);
    const double n = static_cast<double>(s.size());
    CHECK(meteor_score(s, s) == doctest::Approx(1.0 - 0.5 / (n * n * n)).epsilon(1e-12));
  }
}

TEST_CASE("scores ignore padding once ids are decoded") {
  const auto v = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "a", "b", "c"});
  const std::vector<TokenId> padded{4, 5, kEosId, kPadId, kPadId};
  const std::vector<TokenId> plain{4, 5};
  const auto ref = split("a c b");
  CHECK(v.decode(padded) == v.decode(plain));
  CHECK(ter_score(v.decode(padded), ref) == ter_score(v.decode(plain), ref));
  CHECK(meteor_score(v.decode(padded), ref) == meteor_score(v.decode(plain), ref));
}

TEST_CASE("evaluation reports follow the decoder chain") {
  const std::vector<TokenList> refs{split("a b c"), split("d e")};
  const std::vector<TokenList> inputs{split("x"), split("y")};
  const std::vector<std::vector<TokenList>> outputs{refs, refs};
  const auto reports = evaluate_corpus(outputs, refs, inputs);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].system == "decoder1");
  CHECK(reports[1].system == "decoder2");
  CHECK(reports[2].system == "decoder1_vs_decoder2");
  for (const auto& r : reports) {
    CHECK(r.bleu == doctest::Approx(100.0));
    CHECK(r.ter == 0.0);
    CHECK(r.sentences.size() == 2);
  }
  const auto csv = format_report_csv(reports);
  CHECK(csv.rfind("system,meteor,bleu,ter\n", 0) == 0);
  CHECK(csv.find("decoder1_vs_decoder2,") != std::string::npos);
  const auto table = format_report_table(reports);
  CHECK(table.find("METEOR") != std::string::npos);
  CHECK(table.find("TER") != std::string::npos);

  const std::vector<std::vector<TokenList>> short_outputs{{refs[0]}};
  CHECK_THROWS_AS(evaluate_corpus(short_outputs, refs, inputs), ContractError);
}

TEST_CASE("report values stay in range") {
  Rng rng(5);
  std::vector<TokenList> cand, ref;
  for (int i = 0; i < 30; ++i) {
    cand.push_back(random_sentence(rng, 10, 6));
    ref.push_back(random_sentence(rng, 10, 6));
  }
  const auto r = score_system("x", cand, ref);
  CHECK(r.bleu >= 0.0);
  CHECK(r.bleu <= 100.0);
  CHECK(r.meteor >= 0.0);
  CHECK(r.meteor <= 100.0);
  CHECK(r.ter >= 0.0);
  CHECK(r.ter == doctest::Approx(ter_corpus(cand, ref)));
}
