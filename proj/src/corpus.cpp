#include "redecode/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <map>

#include "fileio.hpp"
#include "redecode/error.hpp"
#include "unicode.hpp"

namespace redecode {

// ---------------------------------------------------------------------------
// Sentence cleanup

std::optional<TokenList> preprocess_sentence(std::string_view raw, const PreprocessOptions& options) {
  const std::u32string text = unicode::decode_utf8(raw);
  TokenList tokens;
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(unicode::encode_utf8(current));
      current.clear();
    }
  };
  for (char32_t cp : text) {
    if (unicode::is_whitespace(cp)) {
      flush();
      continue;
    }
    if (unicode::is_punctuation(cp)) continue;
    current.push_back(options.lowercase ? unicode::to_lower(cp) : cp);
  }
  flush();
  if (tokens.empty() || tokens.size() > options.max_tokens) return std::nullopt;
  return tokens;
}

std::vector<TokenPair> preprocess_pairs(std::span<const RawPair> raw, const PreprocessOptions& options,
                                        std::size_t* rejected) {
  std::vector<TokenPair> out;
  std::size_t dropped = 0;
  for (const auto& p : raw) {
    auto a = preprocess_sentence(p.original, options);
    auto b = preprocess_sentence(p.paraphrase, options);
    if (a && b) {
      out.push_back({std::move(*a), std::move(*b)});
    } else {
      ++dropped;
    }
  }
  if (rejected) *rejected = dropped;
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{std::string(kPadToken), std::string(kUnkToken),
                                                 std::string(kSosToken), std::string(kEosToken)};
  return specials;
}

}  // namespace

Vocabulary Vocabulary::build(std::span<const TokenPair> pairs, std::size_t min_frequency) {
  if (pairs.empty()) throw ContractError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& p : pairs) {
    for (const auto& t : p.original) ++counts[t];
    for (const auto& t : p.paraphrase) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n < min_frequency) continue;
    if (std::find(special_tokens().begin(), special_tokens().end(), tok) != special_tokens().end()) continue;
    ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens = special_tokens();
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumSpecialTokens ||
      !std::equal(special_tokens().begin(), special_tokens().end(), tokens.begin())) {
    throw ContractError("vocabulary must start with the special tokens <pad> <unk> <s> </s>");
  }
  Vocabulary v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<TokenId>(i)).second) {
      throw ContractError("duplicate vocabulary entry '" + tokens[i] + "'");
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(const TokenList& tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

TokenList Vocabulary::decode(std::span<const TokenId> ids) const {
  TokenList out;
  for (const TokenId id : ids) {
    if (id == kEosId) break;
    if (id == kPadId || id == kSosId) continue;
    out.push_back(token(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoding and batching

SentencePair encode_pair(const TokenPair& pair, const Vocabulary& vocab, std::size_t max_len) {
  auto encode_side = [&](const TokenList& tokens, std::size_t& length) {
    if (tokens.empty() || tokens.size() > max_len) {
      throw ContractError("sentence of " + std::to_string(tokens.size()) + " tokens outside [1, " +
                          std::to_string(max_len) + "]");
    }
    length = tokens.size();
    auto ids = vocab.encode(tokens);
    ids.push_back(kEosId);
    ids.resize(max_len + 1, kPadId);
    return ids;
  };
  SentencePair out;
  out.original = encode_side(pair.original, out.original_length);
  out.paraphrase = encode_side(pair.paraphrase, out.paraphrase_length);
  return out;
}

std::vector<SentencePair> encode_pairs(std::span<const TokenPair> pairs, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<SentencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p, vocab, max_len));
  return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(Rng::mix(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<Batch> make_batches(std::span<const SentencePair> pairs, std::size_t batch_size, std::uint64_t seed,
                                std::size_t epoch) {
  if (pairs.empty()) throw ContractError("make_batches: no pairs");
  if (batch_size == 0) throw ContractError("make_batches: batch_size must be positive");
  const auto order = epoch_permutation(pairs.size(), seed, epoch);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    const std::size_t end = std::min(order.size(), start + batch_size);
    for (std::size_t k = start; k < end; ++k) {
      const SentencePair& p = pairs[order[k]];
      auto mask_for = [](std::size_t width, std::size_t length) {
        std::vector<std::uint8_t> m(width, 0);
        std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(length + 1), 1);
        return m;
      };
      b.original_mask.push_back(mask_for(p.original.size(), p.original_length));
      b.paraphrase_mask.push_back(mask_for(p.paraphrase.size(), p.paraphrase_length));
      b.pairs.push_back(p);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Batch> make_batches(std::span<const TokenPair> pairs, const Vocabulary& vocab, std::size_t batch_size,
                                std::uint64_t seed, std::size_t epoch, std::size_t max_len) {
  const auto encoded = encode_pairs(pairs, vocab, max_len);
  return make_batches(std::span<const SentencePair>(encoded), batch_size, seed, epoch);
}

// ---------------------------------------------------------------------------
// File loaders

std::vector<RawPair> load_pairs_tsv(const std::filesystem::path& path, PairFileStats* stats) {
  const auto lines = io::read_lines(path);
  std::vector<RawPair> out;
  PairFileStats s;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cols = io::split(lines[i], '\t');
    ++s.rows;
    if (cols.size() == 2) {
      out.push_back({std::string(cols[0]), std::string(cols[1])});
      ++s.kept;
    } else if (cols.size() == 3) {
      if (cols[2] == "1") {
        out.push_back({std::string(cols[0]), std::string(cols[1])});
        ++s.kept;
      } else {
        ++s.discarded;
      }
    } else {
      throw ParseError(path.string() + ": expected 2 or 3 tab-separated columns, found " + std::to_string(cols.size()),
                       i + 1);
    }
  }
  if (stats) *stats = s;
  return out;
}

std::vector<RawPair> load_caption_groups(const std::filesystem::path& path, Rng& rng) {
  const auto lines = io::read_lines(path);
  const bool empty = std::all_of(lines.begin(), lines.end(), [](const std::string& l) { return l.empty(); });
  if (empty) throw ContractError("caption group file " + path.string() + " is empty");
  std::vector<RawPair> out;
  for (const auto& line : lines) {
    std::vector<std::string> captions;
    for (auto c : io::split(line, '\t')) {
      if (!c.empty()) captions.emplace_back(c);
    }
    if (captions.size() < 4) continue;
    // Partial Fisher-Yates: the first four slots become a uniform draw.
    for (std::size_t i = 0; i < 4; ++i) std::swap(captions[i], captions[i + rng.below(captions.size() - i)]);
    out.push_back({captions[0], captions[1]});
    out.push_back({captions[2], captions[3]});
  }
  return out;
}

Tensor random_embeddings(const Vocabulary& vocab, std::size_t dim, Rng& rng) {
  Tensor table = xavier_init({vocab.size(), dim}, rng);
  auto v = table.mutable_values();
  std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(dim), 0.0);
  return table;
}

Tensor load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t dim, Rng& rng,
                       EmbeddingReport* report) {
  Tensor table = random_embeddings(vocab, dim, rng);
  auto values = table.mutable_values();
  const auto lines = io::read_lines(path);
  std::vector<bool> filled(vocab.size(), false);
  bool checked_dim = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    while (!line.empty() && line.back() == ' ') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto fields = io::split(line, ' ');
    if (!checked_dim) {
      checked_dim = true;
      if (fields.size() != dim + 1) {
        throw DimensionError(path.string() + " has " + std::to_string(fields.size() - 1) +
                             "-dimensional vectors but embedding_dim is " + std::to_string(dim));
      }
    }
    if (fields.size() != dim + 1) {
      throw ParseError(path.string() + ": expected " + std::to_string(dim + 1) + " fields, found " +
                       std::to_string(fields.size()),
                       i + 1);
    }
    const std::string token(fields[0]);
    if (!vocab.contains(token)) continue;
    const auto id = static_cast<std::size_t>(vocab.id(token));
    if (id < kNumSpecialTokens || filled[id]) continue;
    std::vector<double> row(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const auto f = fields[k + 1];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), row[k]);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw ParseError(path.string() + ": bad number '" + std::string(f) + "'", i + 1);
      }
    }
    std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>(id * dim));
    filled[id] = true;
  }
  if (report) {
    report->hits = static_cast<std::size_t>(std::count(filled.begin(), filled.end(), true));
    report->misses = vocab.size() - kNumSpecialTokens - report->hits;
  }
  return table;
}

}  // namespace redecode
