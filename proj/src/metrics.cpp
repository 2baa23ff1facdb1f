#include "redecode/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "redecode/error.hpp"

namespace redecode {

namespace {

void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ContractError(std::string(what) + ": " + std::to_string(a) + " candidates but " + std::to_string(b) +
                        " references");
  }
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(const TokenList& tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

// ---------------------------------------------------------------------------
// BLEU

BleuCounts bleu_counts(const TokenList& candidate, const TokenList& reference, std::size_t max_order) {
  BleuCounts c;
  c.candidate_length = candidate.size();
  c.reference_length = reference.size();
  for (std::size_t n = 1; n <= max_order; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    std::size_t matched = 0;
    for (const auto& [gram, count] : cand) {
      const auto it = ref.find(gram);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
    c.matches.push_back(matched);
    c.totals.push_back(candidate.size() >= n ? candidate.size() - n + 1 : 0);
  }
  return c;
}

double bleu_from_counts(const BleuCounts& counts, const BleuOptions& options) {
  if (counts.candidate_length == 0 || counts.matches.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < counts.matches.size(); ++i) {
    double num = static_cast<double>(counts.matches[i]);
    double den = static_cast<double>(counts.totals[i]);
    if (i > 0 && options.smoothing) {
      num += 1.0;
      den += 1.0;
    }
    if (num <= 0.0 || den <= 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  const double c = static_cast<double>(counts.candidate_length);
  const double r = static_cast<double>(counts.reference_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(counts.matches.size()));
}

double bleu_corpus(std::span<const TokenList> candidates, std::span<const TokenList> references,
                   const BleuOptions& options) {
  require_aligned(candidates.size(), references.size(), "bleu_corpus");
  if (candidates.empty()) throw ContractError("bleu_corpus: empty corpus");
  BleuCounts total;
  total.matches.assign(options.max_order, 0);
  total.totals.assign(options.max_order, 0);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto c = bleu_counts(candidates[k], references[k], options.max_order);
    for (std::size_t n = 0; n < options.max_order; ++n) {
      total.matches[n] += c.matches[n];
      total.totals[n] += c.totals[n];
    }
    total.candidate_length += c.candidate_length;
    total.reference_length += c.reference_length;
  }
  return 100.0 * bleu_from_counts(total, options);
}

double bleu_sentence(const TokenList& candidate, const TokenList& reference, const BleuOptions& options) {
  return 100.0 * bleu_from_counts(bleu_counts(candidate, reference, options.max_order), options);
}

// ---------------------------------------------------------------------------
// METEOR

namespace {

// Branch-and-bound search for one alignment stage. Candidate positions are
// visited left to right; each either keeps its earlier-stage link, takes a
// compatible free reference position, or stays unmatched. Only
// arrangements reaching the stage's maximum match count are accepted.
class StageSearch {
 public:
  StageSearch(std::vector<long>& alignment, std::vector<bool>& ref_used, const std::vector<std::vector<long>>& options,
              std::size_t target)
      : alignment_(alignment), ref_used_(ref_used), options_(options), target_(target) {
    // Suffix sums of "could still match" bound the reachable match count.
    reachable_.assign(alignment.size() + 1, 0);
    for (std::size_t i = alignment.size(); i-- > 0;) {
      reachable_[i] = reachable_[i + 1] + (alignment[i] < 0 && !options[i].empty() ? 1 : 0);
    }
  }

  void run() {
    best_chunks_ = std::numeric_limits<std::size_t>::max();
    current_ = alignment_;
    dfs(0, 0, 0, -2, -2);
    if (best_chunks_ != std::numeric_limits<std::size_t>::max()) alignment_ = best_;
  }

 private:
  void dfs(std::size_t i, std::size_t made, std::size_t chunks, long last_c, long last_r) {
    if (chunks >= best_chunks_) return;
    // Past the budget, keep the best arrangement found so far.
    if (++visited_ > kBudget && best_chunks_ != std::numeric_limits<std::size_t>::max()) return;
    if (made + reachable_[i] < target_) return;
    if (i == current_.size()) {
      best_chunks_ = chunks;
      best_ = current_;
      return;
    }
    const long ci = static_cast<long>(i);
    auto step = [&](long ref) {
      const bool continues = last_c == ci - 1 && last_r == ref - 1;
      return chunks + (continues ? 0 : 1);
    };
    if (current_[i] >= 0) {
      dfs(i + 1, made, step(current_[i]), ci, current_[i]);
      return;
    }
    // Try the position continuing the current chunk first.
    std::vector<long> order = options_[i];
    std::stable_partition(order.begin(), order.end(), [&](long r) { return last_c == ci - 1 && r == last_r + 1; });
    for (const long r : order) {
      if (ref_used_[static_cast<std::size_t>(r)]) continue;
      ref_used_[static_cast<std::size_t>(r)] = true;
      current_[i] = r;
      dfs(i + 1, made + 1, step(r), ci, r);
      current_[i] = -1;
      ref_used_[static_cast<std::size_t>(r)] = false;
    }
    dfs(i + 1, made, chunks, last_c, last_r);
  }

  static constexpr std::size_t kBudget = 200000;

  std::vector<long>& alignment_;
  std::vector<bool>& ref_used_;
  const std::vector<std::vector<long>>& options_;
  std::size_t target_;
  std::vector<std::size_t> reachable_;
  std::vector<long> current_;
  std::vector<long> best_;
  std::size_t best_chunks_ = 0;
  std::size_t visited_ = 0;
};

// Maximum bipartite matching size between free candidate and free
// reference positions (augmenting paths).
std::size_t max_matching(const std::vector<std::vector<long>>& options, std::size_t ref_size) {
  std::vector<long> owner(ref_size, -1);
  std::size_t size = 0;
  for (std::size_t i = 0; i < options.size(); ++i) {
    std::vector<bool> seen(ref_size, false);
    std::function<bool(std::size_t)> augment = [&](std::size_t c) {
      for (const long r : options[c]) {
        const auto ru = static_cast<std::size_t>(r);
        if (seen[ru]) continue;
        seen[ru] = true;
        if (owner[ru] < 0 || augment(static_cast<std::size_t>(owner[ru]))) {
          owner[ru] = static_cast<long>(c);
          return true;
        }
      }
      return false;
    };
    if (augment(i)) ++size;
  }
  return size;
}

std::size_t count_chunks(const std::vector<long>& alignment) {
  std::size_t chunks = 0;
  long last_c = -2;
  long last_r = -2;
  for (std::size_t i = 0; i < alignment.size(); ++i) {
    if (alignment[i] < 0) continue;
    const long ci = static_cast<long>(i);
    if (!(last_c == ci - 1 && last_r == alignment[i] - 1)) ++chunks;
    last_c = ci;
    last_r = alignment[i];
  }
  return chunks;
}

}  // namespace

MeteorCounts meteor_align(const TokenList& candidate, const TokenList& reference, const MeteorOptions& options) {
  MeteorCounts out;
  out.candidate_length = candidate.size();
  out.reference_length = reference.size();
  out.alignment.assign(candidate.size(), -1);
  std::vector<bool> ref_used(reference.size(), false);

  auto run_stage = [&](const std::function<bool(std::size_t, std::size_t)>& compatible) {
    std::vector<std::vector<long>> opts(candidate.size());
    std::vector<std::vector<long>> free_opts;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (out.alignment[i] >= 0) continue;
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (!ref_used[j] && compatible(i, j)) opts[i].push_back(static_cast<long>(j));
      }
      if (!opts[i].empty()) free_opts.push_back(opts[i]);
    }
    if (free_opts.empty()) return;
    const std::size_t target = max_matching(free_opts, reference.size());
    StageSearch search(out.alignment, ref_used, opts, target);
    search.run();
    std::fill(ref_used.begin(), ref_used.end(), false);
    for (const long r : out.alignment) {
      if (r >= 0) ref_used[static_cast<std::size_t>(r)] = true;
    }
  };

  run_stage([&](std::size_t i, std::size_t j) { return candidate[i] == reference[j]; });
  if (options.use_stems) {
    std::vector<std::string> cs, rs;
    for (const auto& t : candidate) cs.push_back(porter_stem(t));
    for (const auto& t : reference) rs.push_back(porter_stem(t));
    run_stage([&](std::size_t i, std::size_t j) { return cs[i] == rs[j]; });
  }
  if (options.synonyms && !options.synonyms->empty()) {
    const SynonymTable& table = *options.synonyms;
    auto listed = [&](const std::string& a, const std::string& b) {
      const auto it = table.find(a);
      return it != table.end() && std::find(it->second.begin(), it->second.end(), b) != it->second.end();
    };
    run_stage([&](std::size_t i, std::size_t j) {
      return listed(candidate[i], reference[j]) || listed(reference[j], candidate[i]);
    });
  }

  out.matches = static_cast<std::size_t>(std::count_if(out.alignment.begin(), out.alignment.end(),
                                                       [](long r) { return r >= 0; }));
  out.chunks = count_chunks(out.alignment);
  return out;
}

double meteor_from_counts(const MeteorCounts& c, const MeteorOptions& options) {
  if (c.matches == 0 || c.candidate_length == 0 || c.reference_length == 0) return 0.0;
  const double m = static_cast<double>(c.matches);
  const double p = m / static_cast<double>(c.candidate_length);
  const double r = m / static_cast<double>(c.reference_length);
  const double fmean = p * r / (options.alpha * p + (1.0 - options.alpha) * r);
  const double penalty = options.gamma * std::pow(static_cast<double>(c.chunks) / m, options.beta);
  return fmean * (1.0 - penalty);
}

double meteor_score(const TokenList& candidate, const TokenList& reference, const MeteorOptions& options) {
  return meteor_from_counts(meteor_align(candidate, reference, options), options);
}

double meteor_corpus(std::span<const TokenList> candidates, std::span<const TokenList> references,
                     const MeteorOptions& options) {
  require_aligned(candidates.size(), references.size(), "meteor_corpus");
  if (candidates.empty()) throw ContractError("meteor_corpus: empty corpus");
  MeteorCounts total;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto c = meteor_align(candidates[k], references[k], options);
    total.matches += c.matches;
    total.chunks += c.chunks;
    total.candidate_length += c.candidate_length;
    total.reference_length += c.reference_length;
  }
  return 100.0 * meteor_from_counts(total, options);
}

// ---------------------------------------------------------------------------
// TER

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

using Words = std::vector<int>;

// Writes `words` with [start, start+length) moved so that it begins at
// `dest` in the sequence with the block removed.
void apply_shift(const Words& words, std::size_t start, std::size_t length, std::size_t dest, Words& out) {
  out.clear();
  const auto at = [&](std::size_t i) { return words[i < start ? i : i + length]; };
  const std::size_t rest = words.size() - length;
  for (std::size_t i = 0; i < dest; ++i) out.push_back(at(i));
  for (std::size_t i = 0; i < length; ++i) out.push_back(words[start + i]);
  for (std::size_t i = dest; i < rest; ++i) out.push_back(at(i));
}

template <typename Visit>
void for_each_shift(const Words& words, Visit&& visit) {
  const std::size_t n = words.size();
  Words shifted;
  shifted.reserve(n);
  for (std::size_t start = 0; start < n; ++start) {
    for (std::size_t length = 1; start + length <= n; ++length) {
      for (std::size_t dest = 0; dest + length <= n; ++dest) {
        if (dest == start) continue;
        apply_shift(words, start, length, dest, shifted);
        visit(shifted);
      }
    }
  }
}

std::size_t word_distance(const Words& a, const Words& b) {
  thread_local std::vector<std::size_t> prev, cur;
  prev.resize(b.size() + 1);
  cur.resize(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1), prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct WordsHash {
  std::size_t operator()(const Words& w) const noexcept {
    std::size_t h = 1469598103934665603ULL;
    for (const int x : w) h = (h ^ static_cast<std::size_t>(x)) * 1099511628211ULL;
    return h;
  }
};

// Arrangements examined by the exhaustive shift search before it settles
// for the best result found so far.
constexpr std::size_t kShiftSearchBudget = 5000;

}  // namespace

TerCounts ter_counts(const TokenList& candidate, const TokenList& reference) {
  if (reference.empty()) throw ContractError("ter_score: empty reference");
  std::map<std::string, int> ids;
  auto intern = [&](const TokenList& t) {
    Words out;
    for (const auto& w : t) out.push_back(ids.emplace(w, static_cast<int>(ids.size())).first->second);
    return out;
  };
  const Words ref = intern(reference);
  const Words cand = intern(candidate);

  TerCounts out;
  out.reference_length = reference.size();

  // Greedy: apply the single block move that lowers the edit distance the
  // most, until no move helps.
  Words current = cand;
  std::size_t distance = word_distance(current, ref);
  std::size_t shifts = 0;
  while (distance > 0) {
    std::size_t best = distance;
    Words best_words;
    for_each_shift(current, [&](const Words& shifted) {
      const std::size_t d = word_distance(shifted, ref);
      if (d < best) {
        best = d;
        best_words = shifted;
      }
    });
    if (best >= distance) break;
    current = std::move(best_words);
    distance = best;
    ++shifts;
  }
  out.shifts = shifts;
  out.edits = distance;

  // Shifts never change the bag of words, so edits cannot drop below the
  // bag difference. When greedy has not reached that bound, search shift
  // sequences breadth-first for a cheaper total.
  std::map<int, long> bag;
  for (const int w : cand) ++bag[w];
  for (const int w : ref) --bag[w];
  std::size_t surplus = 0, deficit = 0;
  for (const auto& [w, n] : bag) (n > 0 ? surplus : deficit) += static_cast<std::size_t>(n > 0 ? n : -n);
  const std::size_t floor = std::max(surplus, deficit);

  if (out.total() > floor) {
    std::unordered_set<Words, WordsHash> seen{cand};
    std::vector<Words> frontier{cand};
    for (std::size_t level = 0; !frontier.empty() && level + floor < out.total(); ++level) {
      for (const auto& w : frontier) {
        const std::size_t d = word_distance(w, ref);
        if (level + d < out.total()) {
          out.shifts = level;
          out.edits = d;
        }
      }
      if (level + 1 + floor >= out.total() || seen.size() >= kShiftSearchBudget) break;
      std::vector<Words> next;
      for (const auto& w : frontier) {
        for_each_shift(w, [&](const Words& shifted) {
          if (seen.size() < kShiftSearchBudget && seen.insert(shifted).second) next.push_back(shifted);
        });
      }
      frontier = std::move(next);
    }
  }
  return out;
}

double ter_score(const TokenList& candidate, const TokenList& reference) {
  const auto c = ter_counts(candidate, reference);
  return static_cast<double>(c.total()) / static_cast<double>(c.reference_length);
}

double ter_corpus(std::span<const TokenList> candidates, std::span<const TokenList> references) {
  require_aligned(candidates.size(), references.size(), "ter_corpus");
  if (candidates.empty()) throw ContractError("ter_corpus: empty corpus");
  std::size_t edits = 0;
  std::size_t length = 0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto c = ter_counts(candidates[k], references[k]);
    edits += c.total();
    length += c.reference_length;
  }
  return 100.0 * static_cast<double>(edits) / static_cast<double>(length);
}

// ---------------------------------------------------------------------------
// Reports

ScoreReport score_system(std::string system, std::span<const TokenList> candidates,
                         std::span<const TokenList> references, const MeteorOptions& meteor) {
  require_aligned(candidates.size(), references.size(), "score_system");
  ScoreReport report;
  report.system = std::move(system);
  report.meteor = meteor_corpus(candidates, references, meteor);
  report.bleu = bleu_corpus(candidates, references);
  std::size_t edits = 0;
  std::size_t length = 0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto ter = ter_counts(candidates[k], references[k]);
    edits += ter.total();
    length += ter.reference_length;
    SentenceScore s;
    s.meteor = 100.0 * meteor_score(candidates[k], references[k], meteor);
    s.bleu = bleu_sentence(candidates[k], references[k]);
    s.ter = 100.0 * static_cast<double>(ter.total()) / static_cast<double>(ter.reference_length);
    report.sentences.push_back(s);
  }
  report.ter = 100.0 * static_cast<double>(edits) / static_cast<double>(length);
  return report;
}

std::vector<ScoreReport> evaluate_corpus(const std::vector<std::vector<TokenList>>& decoder_outputs,
                                         std::span<const TokenList> references, std::span<const TokenList> inputs,
                                         const MeteorOptions& meteor) {
  if (decoder_outputs.empty()) throw ContractError("evaluate_corpus: no decoder outputs");
  require_aligned(inputs.size(), references.size(), "evaluate_corpus");
  for (const auto& outputs : decoder_outputs) require_aligned(outputs.size(), references.size(), "evaluate_corpus");
  std::vector<ScoreReport> reports;
  for (std::size_t i = 0; i < decoder_outputs.size(); ++i) {
    reports.push_back(score_system("decoder" + std::to_string(i + 1), decoder_outputs[i], references, meteor));
  }
  for (std::size_t i = 0; i + 1 < decoder_outputs.size(); ++i) {
    reports.push_back(score_system("decoder" + std::to_string(i + 1) + "_vs_decoder" + std::to_string(i + 2),
                                   decoder_outputs[i], decoder_outputs[i + 1], meteor));
  }
  return reports;
}

std::string format_report_csv(std::span<const ScoreReport> reports) {
  std::string out = "system,meteor,bleu,ter\n";
  char buf[128];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, ",%.2f,%.2f,%.2f\n", r.meteor, r.bleu, r.ter);
    out += r.system + buf;
  }
  return out;
}

std::string format_report_table(std::span<const ScoreReport> reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.system.size());
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s\n", static_cast<int>(width), "System", "METEOR", "BLEU", "TER");
  os << buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-*s  %8.2f  %8.2f  %8.2f\n", static_cast<int>(width), r.system.c_str(), r.meteor,
                  r.bleu, r.ter);
    os << buf;
  }
  return os.str();
}

}  // namespace redecode
