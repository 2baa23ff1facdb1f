#pragma once

// Iterative-refinement paraphrase model: a sampling encoder produces the
// latent code, a sentence encoder produces the attention memory for the
// first decoder, and every later decoder attends over the softmax vectors
// of the decoder before it.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "redecode/corpus.hpp"
#include "redecode/layers.hpp"
#include "redecode/tensor.hpp"

namespace redecode {

enum class AttentionMode {
  memory,       ///< attend over encoder states / previous softmax vectors
  final_state,  ///< single decoder conditioned on the encoder's final state
};

/// Which decoder state represents an output sentence in the multi-sample loss.
enum class FinalStateKind { hidden, cell, concat };

/// How z is chosen when generating.
enum class InferenceLatent { sample, mean };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 300;
  std::size_t hidden_units = 600;
  std::size_t latent_dim = 1100;
  std::size_t num_decoders = 1;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t max_len = kDefaultMaxLen;
  AttentionMode attention_mode = AttentionMode::memory;
  bool multisample_enabled = false;
  double multisample_weight = 1.0;
  /// Average the reconstruction term over all three latent samples instead
  /// of the first one only.
  bool multisample_ce_all = false;
  FinalStateKind final_state = FinalStateKind::hidden;
  InferenceLatent inference_latent = InferenceLatent::sample;

  void validate() const;
};

std::string to_string(AttentionMode mode);
std::string to_string(FinalStateKind kind);
std::string to_string(InferenceLatent mode);

/// Inverses of to_string; throw ConfigError on unknown names.
AttentionMode parse_attention_mode(std::string_view text);
FinalStateKind parse_final_state_kind(std::string_view text);
InferenceLatent parse_inference_latent(std::string_view text);

struct DecoderParams {
  StackedLstmParams lstm;
  std::optional<AttentionParams> attention;  // absent in final-state mode
  DenseParams projection;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ReDecodeModel {
  ModelConfig config;
  Tensor embedding;  // [V x E], frozen
  LstmCellParams sampler;
  DenseParams mean_head;
  DenseParams log_var_head;
  StackedLstmParams sentence_encoder;
  std::vector<DecoderParams> decoders;

  static ReDecodeModel create(const ModelConfig& config, Tensor embedding, Rng& rng);

  /// Trainable tensors in a fixed order with stable names.
  std::vector<NamedTensor> parameters() const;
  /// "embedding" followed by parameters().
  std::vector<NamedTensor> all_tensors() const;
  /// Deep copy; the copy shares no storage with this model.
  ReDecodeModel clone() const;
  /// Attention memory width of decoder `index` (0-based).
  std::size_t memory_dim(std::size_t index) const;
  std::size_t decoder_input_dim() const;
};

struct Posterior {
  Tensor mu;
  Tensor log_var;
};

struct LatentSample {
  Tensor mu;
  Tensor log_var;
  Tensor epsilon;
  Tensor z;
};

struct SentenceMemory {
  Tensor memory;                    // [n x H]
  std::vector<std::uint8_t> mask;   // 0 at PAD positions
  Tensor final_hidden;              // top layer, last unmasked position
};

/// What a decoder attends over (or is conditioned on).
struct DecoderMemory {
  Tensor memory;  // [n x d_mem]; unused in final-state mode
  std::vector<std::uint8_t> mask;
  Tensor condition;  // encoder final state; final-state mode only
  std::vector<TokenId> labels;  // token ids behind each memory row, for dumps
};

struct DecodeTrace {
  std::vector<TokenId> token_ids;  // targets when teacher-forced, emitted tokens otherwise
  Tensor softmax_seq;              // [T x V]
  Tensor attention_weights;        // [T x n]; undefined in final-state mode
  Tensor final_hidden;             // top layer h after the last step
  Tensor final_cell;               // top layer c after the last step
  Tensor final_state;              // selected by ModelConfig::final_state
};

struct DecodeMode {
  enum class Kind { teacher_forced, free_running };
  Kind kind = Kind::free_running;
  std::span<const TokenId> targets;  // teacher_forced only
  double word_dropout = 0.0;         // probability of feeding UNK instead of a target token
  Rng* dropout_rng = nullptr;

  static DecodeMode teacher(std::span<const TokenId> targets) { return {Kind::teacher_forced, targets}; }
  static DecodeMode greedy() { return {}; }
};

Posterior encode_sampling(Graph& g, const ReDecodeModel& model, std::span<const TokenId> original);
LatentSample sample_latent(Graph& g, const Posterior& posterior, Rng& rng);
LatentSample sample_latent(Graph& g, const Posterior& posterior, const Tensor& epsilon);
SentenceMemory encode_sentence(Graph& g, const ReDecodeModel& model, std::span<const TokenId> original);

/// Memory for decoder 0 built from the sentence encoder.
DecoderMemory first_decoder_memory(const ReDecodeModel& model, const SentenceMemory& sentence,
                                   std::span<const TokenId> original);
/// Memory for decoder i > 0: the previous decoder's softmax rows.
DecoderMemory next_decoder_memory(const DecodeTrace& previous);

DecodeTrace decode_sequence(Graph& g, const ReDecodeModel& model, std::size_t decoder_index, const Tensor& z,
                            const DecoderMemory& memory, const DecodeMode& mode);

/// KL(N(mu, exp(log_var)) || N(0, I)) summed over dimensions.
Tensor kl_gaussian(Graph& g, const Tensor& mu, const Tensor& log_var);

struct ForwardOptions {
  double word_dropout = 0.0;
  bool keep_traces = false;
};

struct ForwardResult {
  Tensor loss;                          // batch mean
  std::vector<double> ce_per_decoder;   // batch mean, first latent sample
  double kl = 0.0;                      // batch mean, unweighted
  double multisample = 0.0;             // batch mean, unweighted; 0 when disabled
  double total = 0.0;
  std::vector<std::vector<DecodeTrace>> traces;  // per pair, when keep_traces
};

/// Teacher-forced loss over a batch: mean over decoders of the masked
/// cross-entropy plus kl_weight * KL, plus the weighted multi-sample term
/// when enabled, averaged over pairs.
///
/// Random draws per pair, in order: latent_dim normals for the first
/// sample, then 2 * latent_dim more when multi-sample is on, then one
/// 64-bit seed for word dropout when it is active.
ForwardResult forward_train(Graph& g, const ReDecodeModel& model, std::span<const SentencePair> batch, Rng& rng,
                            double kl_weight, const ForwardOptions& options = {});

/// Sum over the three pairs of cosine similarities between the final
/// states of the last decoder for three latent samples. Range [-3, 3].
Tensor loss_multisample(Graph& g, const ReDecodeModel& model, std::span<const TokenId> original,
                        std::span<const TokenId> targets, Rng& rng);
Tensor loss_multisample(Graph& g, const ReDecodeModel& model, std::span<const TokenId> original,
                        std::span<const TokenId> targets, std::span<const Tensor, 3> epsilons);

struct Generation {
  std::vector<DecodeTrace> traces;  // one per decoder
  std::vector<TokenList> texts;     // filled when a vocabulary is supplied
  std::vector<TokenId> source;      // encoder input, for attention labels
};

/// Greedy decoding through the whole chain; decoder i starts only after
/// decoder i-1 has finished.
Generation generate(const ReDecodeModel& model, std::span<const TokenId> original, Rng& rng,
                    const Vocabulary* vocab = nullptr);

/// Strips trailing PAD.
std::span<const TokenId> unpadded(std::span<const TokenId> ids);

}  // namespace redecode
