#pragma once

// Sentence and corpus scoring: BLEU, METEOR (exact, stem and synonym
// stages) and TER. Inputs are token lists with PAD/EOS already removed.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "redecode/corpus.hpp"

namespace redecode {

/// Porter's suffix-stripping stemmer (lowercase ASCII input).
std::string porter_stem(std::string_view word);

// ---------------------------------------------------------------------------
// BLEU

struct BleuOptions {
  std::size_t max_order = 4;
  /// Add one to numerator and denominator of every precision above unigrams.
  bool smoothing = true;
};

struct BleuCounts {
  std::vector<std::size_t> matches;  // clipped n-gram matches, per order
  std::vector<std::size_t> totals;   // candidate n-grams, per order
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

BleuCounts bleu_counts(const TokenList& candidate, const TokenList& reference, std::size_t max_order = 4);
/// Fraction in [0, 1].
double bleu_from_counts(const BleuCounts& counts, const BleuOptions& options = {});
/// Percentage. Counts are pooled over the corpus before the geometric mean.
double bleu_corpus(std::span<const TokenList> candidates, std::span<const TokenList> references,
                   const BleuOptions& options = {});
double bleu_sentence(const TokenList& candidate, const TokenList& reference, const BleuOptions& options = {});

// ---------------------------------------------------------------------------
// METEOR

/// word -> accepted synonyms. Empty by default.
using SynonymTable = std::map<std::string, std::vector<std::string>>;

struct MeteorOptions {
  double alpha = 0.9;  // F = PR / (alpha P + (1 - alpha) R)
  double beta = 3.0;   // penalty exponent
  double gamma = 0.5;  // penalty weight
  bool use_stems = true;
  const SynonymTable* synonyms = nullptr;
};

struct MeteorCounts {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  /// reference position aligned to each candidate position, or -1
  std::vector<long> alignment;
};

/// Staged alignment: exact, then stem, then synonym. Each stage adds the
/// maximum number of matches over still-unaligned words and, among those,
/// the arrangement with the fewest chunks.
MeteorCounts meteor_align(const TokenList& candidate, const TokenList& reference, const MeteorOptions& options = {});
/// Fraction in [0, 1].
double meteor_from_counts(const MeteorCounts& counts, const MeteorOptions& options = {});
double meteor_score(const TokenList& candidate, const TokenList& reference, const MeteorOptions& options = {});
/// Percentage. Matches, chunks and lengths are pooled over the corpus.
double meteor_corpus(std::span<const TokenList> candidates, std::span<const TokenList> references,
                     const MeteorOptions& options = {});

// ---------------------------------------------------------------------------
// TER

struct TerCounts {
  std::size_t edits = 0;   // insertions + deletions + substitutions
  std::size_t shifts = 0;  // block moves
  std::size_t reference_length = 0;

  std::size_t total() const noexcept { return edits + shifts; }
};

/// Word-level Levenshtein distance.
std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);

TerCounts ter_counts(const TokenList& candidate, const TokenList& reference);
/// Fraction; 0 is a perfect match, values above 1 are possible.
double ter_score(const TokenList& candidate, const TokenList& reference);
/// Percentage: pooled edits over pooled reference length.
double ter_corpus(std::span<const TokenList> candidates, std::span<const TokenList> references);

// ---------------------------------------------------------------------------
// Reports

struct SentenceScore {
  double meteor = 0.0;
  double bleu = 0.0;
  double ter = 0.0;
};

struct ScoreReport {
  std::string system;
  double meteor = 0.0;  // percent
  double bleu = 0.0;    // percent
  double ter = 0.0;     // percent
  std::vector<SentenceScore> sentences;
};

ScoreReport score_system(std::string system, std::span<const TokenList> candidates,
                         std::span<const TokenList> references, const MeteorOptions& meteor = {});

/// `decoder_outputs[i][k]` is decoder i's output for input k. Produces one
/// report per decoder against the references ("decoder1", ...), then one
/// per adjacent pair with decoder i as candidate and decoder i+1 as
/// reference ("decoder1_vs_decoder2", ...).
std::vector<ScoreReport> evaluate_corpus(const std::vector<std::vector<TokenList>>& decoder_outputs,
                                         std::span<const TokenList> references, std::span<const TokenList> inputs,
                                         const MeteorOptions& meteor = {});

/// Header `system,meteor,bleu,ter`, one row per report, two decimals.
std::string format_report_csv(std::span<const ScoreReport> reports);
/// Aligned plain-text table with columns METEOR, BLEU, TER.
std::string format_report_table(std::span<const ScoreReport> reports);

}  // namespace redecode
