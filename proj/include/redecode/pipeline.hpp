#pragma once

// End-to-end commands behind the CLI: train, generate, eval, attn-dump.
// Output directories follow a fixed layout: checkpoints/, logs/,
// reports/, attn/.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "redecode/corpus.hpp"
#include "redecode/metrics.hpp"
#include "redecode/model.hpp"
#include "redecode/run_config.hpp"
#include "redecode/trainer.hpp"

namespace redecode {

struct TrainSummary {
  std::uint64_t steps = 0;
  std::size_t training_pairs = 0;
  std::size_t rejected_pairs = 0;
  std::size_t vocab_size = 0;
  std::vector<double> final_ce;  // last step, per decoder
  double final_kl = 0.0;
  std::filesystem::path checkpoint;
};

/// `seed_override` replaces the config seed when set.
TrainSummary run_train(const RunConfig& config, const std::filesystem::path& out_dir,
                       std::optional<std::uint64_t> seed_override = std::nullopt);

struct LoadedModel {
  ReDecodeModel model;
  Vocabulary vocab;
  TrainConfig train;
};

/// Throws CheckpointError; a checkpoint without a stored vocabulary is
/// rejected as malformed.
LoadedModel load_model(const std::filesystem::path& checkpoint);

/// Cleans a raw input line and maps it to ids (content + EOS). Tokens past
/// max_len are dropped; an empty result yields an empty vector.
std::vector<TokenId> encode_input(const LoadedModel& loaded, std::string_view sentence);

/// Per-decoder output token lists for one sentence. Input k of a batch uses
/// the stream Rng(mix(seed, k)), so results do not depend on neighbours.
std::vector<TokenList> paraphrase(const LoadedModel& loaded, std::string_view sentence, std::uint64_t seed,
                                  std::size_t index = 0);

/// One `decoder_index<TAB>text` line per decoder per input.
std::string run_generate(const LoadedModel& loaded, const std::vector<std::string>& inputs, std::uint64_t seed);

struct EvalResult {
  std::vector<ScoreReport> reports;
  std::size_t pairs = 0;
};

/// Writes reports/scores.csv, reports/scores.txt and reports/outputs.tsv.
EvalResult run_eval(const LoadedModel& loaded, const std::filesystem::path& pairs, const std::filesystem::path& out_dir,
                    std::uint64_t seed);

struct AttentionMatrix {
  std::vector<std::string> row_labels;     // generated tokens
  std::vector<std::string> column_labels;  // attended memory tokens
  std::vector<std::vector<double>> weights;
};

std::vector<AttentionMatrix> attention_matrices(const LoadedModel& loaded, std::string_view sentence,
                                                std::uint64_t seed);
std::string format_attention_csv(const AttentionMatrix& matrix);

/// Writes `<out_dir>/decoder<i>.csv` for every decoder. Returns the paths.
std::vector<std::filesystem::path> run_attn_dump(const LoadedModel& loaded, std::string_view sentence,
                                                 const std::filesystem::path& out_dir, std::uint64_t seed);

}  // namespace redecode
