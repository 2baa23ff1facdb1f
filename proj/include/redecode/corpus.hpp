#pragma once

// Dataset ingestion: sentence cleanup, vocabulary, embeddings, batching.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "redecode/tensor.hpp"

namespace redecode {

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kSosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr std::size_t kNumSpecialTokens = 4;
inline constexpr std::size_t kDefaultMaxLen = 15;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kSosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";

using TokenList = std::vector<std::string>;

struct RawPair {
  std::string original;
  std::string paraphrase;
};

struct TokenPair {
  TokenList original;
  TokenList paraphrase;
};

struct PreprocessOptions {
  bool lowercase = true;
  std::size_t max_tokens = kDefaultMaxLen;
};

/// Lowercases, deletes Unicode punctuation (general category P*), splits
/// on whitespace. Returns nullopt for empty results or more than
/// `max_tokens` tokens.
std::optional<TokenList> preprocess_sentence(std::string_view raw, const PreprocessOptions& options = {});

/// Keeps pairs whose both sides survive preprocessing.
std::vector<TokenPair> preprocess_pairs(std::span<const RawPair> raw, const PreprocessOptions& options = {},
                                        std::size_t* rejected = nullptr);

class Vocabulary {
 public:
  /// Specials first (PAD, UNK, SOS, EOS), then tokens with frequency >=
  /// min_frequency ordered by descending count, ties broken bytewise.
  static Vocabulary build(std::span<const TokenPair> pairs, std::size_t min_frequency = 1);
  /// Rebuilds from a stored id -> token list (specials included).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  bool contains(std::string_view token) const;
  /// UNK for unknown tokens.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::vector<TokenId> encode(const TokenList& tokens) const;
  /// Stops at the first EOS; PAD and SOS are dropped.
  TokenList decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Encoded training pair. Each side stores content ids, one EOS and PAD up
/// to max_len + 1 entries.
struct SentencePair {
  std::vector<TokenId> original;
  std::vector<TokenId> paraphrase;
  std::size_t original_length = 0;    // content tokens, EOS excluded
  std::size_t paraphrase_length = 0;

  std::span<const TokenId> original_ids() const { return {original.data(), original_length + 1}; }
  std::span<const TokenId> paraphrase_ids() const { return {paraphrase.data(), paraphrase_length + 1}; }
};

SentencePair encode_pair(const TokenPair& pair, const Vocabulary& vocab, std::size_t max_len = kDefaultMaxLen);
std::vector<SentencePair> encode_pairs(std::span<const TokenPair> pairs, const Vocabulary& vocab,
                                       std::size_t max_len = kDefaultMaxLen);

/// Per-position masks are 1 up to and including EOS.
struct Batch {
  std::vector<SentencePair> pairs;
  std::vector<std::vector<std::uint8_t>> original_mask;
  std::vector<std::vector<std::uint8_t>> paraphrase_mask;

  std::size_t size() const noexcept { return pairs.size(); }
};

/// Deterministic Fisher-Yates permutation of [0, n) for (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch);

std::vector<Batch> make_batches(std::span<const SentencePair> pairs, std::size_t batch_size, std::uint64_t seed,
                                std::size_t epoch);
std::vector<Batch> make_batches(std::span<const TokenPair> pairs, const Vocabulary& vocab, std::size_t batch_size,
                                std::uint64_t seed, std::size_t epoch, std::size_t max_len = kDefaultMaxLen);

struct PairFileStats {
  std::size_t rows = 0;
  std::size_t kept = 0;
  std::size_t discarded = 0;
};

/// Two columns (s1, s2) or three (s1, s2, label); labelled rows survive
/// only with label "1".
std::vector<RawPair> load_pairs_tsv(const std::filesystem::path& path, PairFileStats* stats = nullptr);

/// One image per line, captions tab-separated. Draws 4 captions per image
/// and splits them into 2 pairs; images with fewer than 4 are skipped.
std::vector<RawPair> load_caption_groups(const std::filesystem::path& path, Rng& rng);

struct EmbeddingReport {
  std::size_t hits = 0;
  std::size_t misses = 0;
};

/// Xavier rows for every id, zero PAD row.
Tensor random_embeddings(const Vocabulary& vocab, std::size_t dim, Rng& rng);

/// GloVe-style text file: `token v1 ... vD` per line. Vocabulary words
/// found in the file take the file's row; the rest keep a seeded random row.
Tensor load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t dim, Rng& rng,
                       EmbeddingReport* report = nullptr);

}  // namespace redecode
