#include "redecode/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include "fileio.hpp"
#include "redecode/checkpoint.hpp"
#include "redecode/error.hpp"

namespace redecode {

namespace {

namespace fs = std::filesystem;

// Fixed stream labels so data, embedding and model draws never overlap.
constexpr std::uint64_t kCaptionStream = 0x63617074ULL;
constexpr std::uint64_t kEmbeddingStream = 0x656d6264ULL;
constexpr std::uint64_t kModelStream = 0x6d6f646cULL;
constexpr std::uint64_t kHeldOutStream = 0x68656c64ULL;

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string join(const TokenList& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<TokenPair> load_training_pairs(const RunConfig& config, std::uint64_t seed, std::size_t* rejected) {
  std::vector<RawPair> raw;
  if (!config.train_pairs.empty()) {
    raw = load_pairs_tsv(config.train_pairs);
  } else {
    Rng rng(Rng::mix(seed, kCaptionStream));
    raw = load_caption_groups(config.caption_groups, rng);
  }
  PreprocessOptions options;
  options.lowercase = config.lowercase;
  options.max_tokens = config.model.max_len;
  auto pairs = preprocess_pairs(raw, options, rejected);
  if (pairs.empty()) throw DataError("no usable training pairs after preprocessing");
  return pairs;
}

// Mean teacher-forced loss over a held-out set, without a tape.
double held_out_loss(const ReDecodeModel& model, std::span<const SentencePair> pairs, std::uint64_t seed,
                     std::size_t epoch) {
  Graph g;
  g.set_recording(false);
  Rng rng(Rng::mix(Rng::mix(seed, kHeldOutStream), epoch));
  return forward_train(g, model, pairs, rng, 1.0).total;
}

}  // namespace

TrainSummary run_train(const RunConfig& config, const fs::path& out_dir, std::optional<std::uint64_t> seed_override) {
  RunConfig cfg = config;
  if (seed_override) cfg.train.seed = *seed_override;
  const std::uint64_t seed = cfg.train.seed;

  TrainSummary summary;
  const auto pairs = load_training_pairs(cfg, seed, &summary.rejected_pairs);
  const Vocabulary vocab = Vocabulary::build(pairs, cfg.min_frequency);
  cfg.model.vocab_size = vocab.size();
  cfg.model.validate();

  Rng emb_rng(Rng::mix(seed, kEmbeddingStream));
  const Tensor embedding = cfg.embeddings.empty()
                               ? random_embeddings(vocab, cfg.model.embedding_dim, emb_rng)
                               : load_embeddings(cfg.embeddings, vocab, cfg.model.embedding_dim, emb_rng);
  Rng model_rng(Rng::mix(seed, kModelStream));
  ReDecodeModel model = ReDecodeModel::create(cfg.model, embedding, model_rng);
  const auto encoded = encode_pairs(pairs, vocab, cfg.model.max_len);

  std::vector<SentencePair> held_out;
  if (!cfg.test_pairs.empty()) {
    PreprocessOptions options;
    options.lowercase = cfg.lowercase;
    options.max_tokens = cfg.model.max_len;
    const auto raw = load_pairs_tsv(cfg.test_pairs);
    held_out = encode_pairs(preprocess_pairs(raw, options), vocab, cfg.model.max_len);
  }

  const fs::path ckpt_dir = out_dir / "checkpoints";
  const fs::path log_dir = out_dir / "logs";
  fs::create_directories(ckpt_dir);
  fs::create_directories(log_dir);

  std::string step_log;
  std::string epoch_log = "epoch\tsteps\tmean_total\tmean_kl";
  for (std::size_t i = 0; i < cfg.model.num_decoders; ++i) epoch_log += "\tmean_ce_dec" + std::to_string(i + 1);
  epoch_log += held_out.empty() ? "\n" : "\theld_out_total\n";

  OptimizerState state;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    step_log += format_log_line(r);
    step_log += '\n';
  };
  hooks.on_epoch = [&](const EpochRecord& r) {
    epoch_log += std::to_string(r.epoch) + '\t' + std::to_string(r.steps) + '\t' + fixed(r.mean_total) + '\t' +
                 fixed(r.mean_kl);
    for (const double ce : r.mean_ce) epoch_log += '\t' + fixed(ce);
    if (!held_out.empty()) epoch_log += '\t' + fixed(held_out_loss(model, held_out, seed, r.epoch));
    epoch_log += '\n';
  };
  hooks.on_checkpoint = [&](const ReDecodeModel& m, const OptimizerState& s) {
    save_checkpoint(ckpt_dir / ("step_" + std::to_string(s.step) + ".ckpt"), m, s, s.step, cfg.train, &vocab);
    io::write_file_atomic(log_dir / "train.log", step_log);
  };

  const TrainLog log = train(model, encoded, cfg.train, state, hooks);

  summary.checkpoint = ckpt_dir / "final.ckpt";
  save_checkpoint(summary.checkpoint, model, state, state.step, cfg.train, &vocab);
  io::write_file_atomic(log_dir / "train.log", step_log);
  io::write_file_atomic(log_dir / "epochs.log", epoch_log);

  summary.steps = state.step;
  summary.training_pairs = encoded.size();
  summary.vocab_size = vocab.size();
  if (!log.steps.empty()) {
    summary.final_ce = log.steps.back().ce;
    summary.final_kl = log.steps.back().kl;
  }
  return summary;
}

LoadedModel load_model(const fs::path& checkpoint) {
  CheckpointContents c = load_checkpoint(checkpoint);
  if (!c.vocabulary) {
    throw CheckpointError(CheckpointError::Kind::malformed, checkpoint.string() + ": checkpoint stores no vocabulary");
  }
  return LoadedModel{std::move(c.model), std::move(*c.vocabulary), c.train_config};
}

std::vector<TokenId> encode_input(const LoadedModel& loaded, std::string_view sentence) {
  PreprocessOptions options;
  options.max_tokens = static_cast<std::size_t>(-1);
  auto tokens = preprocess_sentence(sentence, options);
  if (!tokens) return {};
  if (tokens->size() > loaded.model.config.max_len) tokens->resize(loaded.model.config.max_len);
  auto ids = loaded.vocab.encode(*tokens);
  ids.push_back(kEosId);
  return ids;
}

std::vector<TokenList> paraphrase(const LoadedModel& loaded, std::string_view sentence, std::uint64_t seed,
                                  std::size_t index) {
  const auto ids = encode_input(loaded, sentence);
  if (ids.empty()) return std::vector<TokenList>(loaded.model.decoders.size());
  Rng rng(Rng::mix(seed, index));
  return generate(loaded.model, ids, rng, &loaded.vocab).texts;
}

std::string run_generate(const LoadedModel& loaded, const std::vector<std::string>& inputs, std::uint64_t seed) {
  std::string out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto texts = paraphrase(loaded, inputs[k], seed, k);
    for (std::size_t i = 0; i < texts.size(); ++i) out += std::to_string(i + 1) + '\t' + join(texts[i]) + '\n';
  }
  return out;
}

EvalResult run_eval(const LoadedModel& loaded, const fs::path& pairs_path, const fs::path& out_dir,
                    std::uint64_t seed) {
  const auto raw = load_pairs_tsv(pairs_path);
  PreprocessOptions options;
  options.max_tokens = loaded.model.config.max_len;
  const auto pairs = preprocess_pairs(raw, options);
  if (pairs.empty()) throw DataError(pairs_path.string() + ": no usable pairs after preprocessing");

  const std::size_t n_dec = loaded.model.decoders.size();
  std::vector<std::vector<TokenList>> outputs(n_dec);
  std::vector<TokenList> references;
  std::vector<TokenList> inputs;
  std::string listing = "index\tdecoder\toutput\treference\n";
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    auto ids = loaded.vocab.encode(pairs[k].original);
    ids.push_back(kEosId);
    Rng rng(Rng::mix(seed, k));
    const auto texts = generate(loaded.model, ids, rng, &loaded.vocab).texts;
    for (std::size_t i = 0; i < n_dec; ++i) {
      outputs[i].push_back(texts[i]);
      listing += std::to_string(k) + '\t' + std::to_string(i + 1) + '\t' + join(texts[i]) + '\t' +
                 join(pairs[k].paraphrase) + '\n';
    }
    references.push_back(pairs[k].paraphrase);
    inputs.push_back(pairs[k].original);
  }

  EvalResult result;
  result.pairs = pairs.size();
  result.reports = evaluate_corpus(outputs, references, inputs);
  const fs::path report_dir = out_dir / "reports";
  fs::create_directories(report_dir);
  io::write_file_atomic(report_dir / "scores.csv", format_report_csv(result.reports));
  io::write_file_atomic(report_dir / "scores.txt", format_report_table(result.reports));
  io::write_file_atomic(report_dir / "outputs.tsv", listing);
  return result;
}

std::vector<AttentionMatrix> attention_matrices(const LoadedModel& loaded, std::string_view sentence,
                                                std::uint64_t seed) {
  if (loaded.model.config.attention_mode != AttentionMode::memory) {
    throw ContractError("attention dump needs a model with attention; this checkpoint conditions on the final state");
  }
  const auto ids = encode_input(loaded, sentence);
  if (ids.empty()) throw DataError("attention dump: sentence is empty after preprocessing");
  Rng rng(Rng::mix(seed, 0));
  const Generation gen = generate(loaded.model, ids, rng, &loaded.vocab);

  std::vector<AttentionMatrix> out;
  for (std::size_t i = 0; i < gen.traces.size(); ++i) {
    const DecodeTrace& trace = gen.traces[i];
    const std::vector<TokenId>& memory_ids = i == 0 ? gen.source : gen.traces[i - 1].token_ids;
    AttentionMatrix m;
    for (const TokenId id : trace.token_ids) m.row_labels.push_back(loaded.vocab.token(id));
    for (const TokenId id : memory_ids) m.column_labels.push_back(loaded.vocab.token(id));
    const std::size_t cols = m.column_labels.size();
    const auto w = trace.attention_weights.values();
    if (trace.attention_weights.shape() != Shape{m.row_labels.size(), cols}) {
      throw ShapeError("attention matrix " + shape_string(trace.attention_weights.shape()) + " does not match " +
                       std::to_string(m.row_labels.size()) + " tokens by " + std::to_string(cols) + " memory slots");
    }
    for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
      m.weights.emplace_back(w.begin() + static_cast<std::ptrdiff_t>(r * cols),
                             w.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string format_attention_csv(const AttentionMatrix& matrix) {
  std::string out;
  for (const auto& label : matrix.column_labels) out += ',' + csv_cell(label);
  out += '\n';
  char buf[64];
  for (std::size_t r = 0; r < matrix.row_labels.size(); ++r) {
    out += csv_cell(matrix.row_labels[r]);
    for (const double v : matrix.weights[r]) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::vector<fs::path> run_attn_dump(const LoadedModel& loaded, std::string_view sentence, const fs::path& out_dir,
                                    std::uint64_t seed) {
  const auto matrices = attention_matrices(loaded, sentence, seed);
  std::vector<fs::path> paths;
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    paths.push_back(out_dir / ("decoder" + std::to_string(i + 1) + ".csv"));
    io::write_file_atomic(paths.back(), format_attention_csv(matrices[i]));
  }
  return paths;
}

}  // namespace redecode
