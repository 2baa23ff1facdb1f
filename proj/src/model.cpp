#include "redecode/model.hpp"

#include <algorithm>
#include <array>

#include "redecode/error.hpp"

namespace redecode {

std::string to_string(AttentionMode mode) { return mode == AttentionMode::memory ? "memory" : "final-state"; }

std::string to_string(FinalStateKind kind) {
  switch (kind) {
    case FinalStateKind::hidden:
      return "hidden";
    case FinalStateKind::cell:
      return "cell";
    case FinalStateKind::concat:
      return "concat";
  }
  return "hidden";
}

std::string to_string(InferenceLatent mode) { return mode == InferenceLatent::sample ? "sample" : "mean"; }

AttentionMode parse_attention_mode(std::string_view text) {
  if (text == "memory") return AttentionMode::memory;
  if (text == "final-state") return AttentionMode::final_state;
  throw ConfigError("unknown attention mode '" + std::string(text) + "' (expected memory or final-state)");
}

FinalStateKind parse_final_state_kind(std::string_view text) {
  if (text == "hidden") return FinalStateKind::hidden;
  if (text == "cell") return FinalStateKind::cell;
  if (text == "concat") return FinalStateKind::concat;
  throw ConfigError("unknown final state '" + std::string(text) + "' (expected hidden, cell or concat)");
}

InferenceLatent parse_inference_latent(std::string_view text) {
  if (text == "sample") return InferenceLatent::sample;
  if (text == "mean") return InferenceLatent::mean;
  throw ConfigError("unknown inference latent '" + std::string(text) + "' (expected sample or mean)");
}

void ModelConfig::validate() const {
  if (vocab_size < kNumSpecialTokens) {
    throw ConfigError("vocab_size must be at least " + std::to_string(kNumSpecialTokens) + ", got " +
                      std::to_string(vocab_size));
  }
  if (embedding_dim == 0 || hidden_units == 0 || latent_dim == 0) throw ConfigError("model dimensions must be positive");
  if (num_decoders == 0) throw ConfigError("num_decoders must be at least 1");
  if (encoder_layers == 0 || decoder_layers == 0) throw ConfigError("layer counts must be positive");
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  if (attention_mode == AttentionMode::final_state && num_decoders != 1) {
    throw ConfigError("attention_mode=final-state supports exactly one decoder");
  }
  if (!(multisample_weight >= 0.0)) throw ConfigError("multisample_weight must be >= 0");
}

// ---------------------------------------------------------------------------
// Construction

std::size_t ReDecodeModel::memory_dim(std::size_t index) const {
  return index == 0 ? config.hidden_units : config.vocab_size;
}

std::size_t ReDecodeModel::decoder_input_dim() const {
  std::size_t d = config.embedding_dim + config.latent_dim;
  if (config.attention_mode == AttentionMode::final_state) d += config.hidden_units;
  return d;
}

ReDecodeModel ReDecodeModel::create(const ModelConfig& config, Tensor embedding, Rng& rng) {
  config.validate();
  if (embedding.shape() != Shape{config.vocab_size, config.embedding_dim}) {
    throw ShapeError("embedding table " + shape_string(embedding.shape()) + " does not match config [" +
                     std::to_string(config.vocab_size) + "x" + std::to_string(config.embedding_dim) + "]");
  }
  ReDecodeModel m;
  m.config = config;
  m.embedding = std::move(embedding);
  m.embedding.set_requires_grad(false);
  const std::size_t h = config.hidden_units;
  m.sampler = LstmCellParams::create(config.embedding_dim, h, rng);
  m.mean_head = DenseParams::create(h, config.latent_dim, rng);
  m.log_var_head = DenseParams::create(h, config.latent_dim, rng);
  m.sentence_encoder = StackedLstmParams::create(config.embedding_dim, h, config.encoder_layers, rng);
  for (std::size_t i = 0; i < config.num_decoders; ++i) {
    DecoderParams d;
    d.lstm = StackedLstmParams::create(m.decoder_input_dim(), h, config.decoder_layers, rng);
    if (config.attention_mode == AttentionMode::memory) {
      d.attention = AttentionParams::create(h, m.memory_dim(i), rng);
      d.projection = DenseParams::create(h + m.memory_dim(i), config.vocab_size, rng);
    } else {
      d.projection = DenseParams::create(h, config.vocab_size, rng);
    }
    m.decoders.push_back(std::move(d));
  }
  return m;
}

namespace {

void push_cell(std::vector<NamedTensor>& out, const std::string& prefix, const LstmCellParams& p) {
  out.push_back({prefix + ".w_input", p.w_input});
  out.push_back({prefix + ".w_hidden", p.w_hidden});
  out.push_back({prefix + ".bias", p.bias});
}

void push_dense(std::vector<NamedTensor>& out, const std::string& prefix, const DenseParams& p) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
}

LstmCellParams clone_cell(const LstmCellParams& p) { return {p.w_input.clone(), p.w_hidden.clone(), p.bias.clone()}; }
DenseParams clone_dense(const DenseParams& p) { return {p.weight.clone(), p.bias.clone()}; }

StackedLstmParams clone_stack(const StackedLstmParams& p) {
  StackedLstmParams out;
  for (const auto& l : p.layers) out.layers.push_back(clone_cell(l));
  return out;
}

}  // namespace

std::vector<NamedTensor> ReDecodeModel::parameters() const {
  std::vector<NamedTensor> out;
  push_cell(out, "sampler", sampler);
  push_dense(out, "mean", mean_head);
  push_dense(out, "log_var", log_var_head);
  for (std::size_t l = 0; l < sentence_encoder.layers.size(); ++l) {
    push_cell(out, "sentence_encoder.l" + std::to_string(l), sentence_encoder.layers[l]);
  }
  for (std::size_t i = 0; i < decoders.size(); ++i) {
    const std::string prefix = "decoder" + std::to_string(i + 1);
    for (std::size_t l = 0; l < decoders[i].lstm.layers.size(); ++l) {
      push_cell(out, prefix + ".l" + std::to_string(l), decoders[i].lstm.layers[l]);
    }
    if (decoders[i].attention) out.push_back({prefix + ".attention.score", decoders[i].attention->score});
    push_dense(out, prefix + ".projection", decoders[i].projection);
  }
  return out;
}

std::vector<NamedTensor> ReDecodeModel::all_tensors() const {
  std::vector<NamedTensor> out{{"embedding", embedding}};
  auto params = parameters();
  out.insert(out.end(), params.begin(), params.end());
  return out;
}

ReDecodeModel ReDecodeModel::clone() const {
  ReDecodeModel m;
  m.config = config;
  m.embedding = embedding.clone();
  m.sampler = clone_cell(sampler);
  m.mean_head = clone_dense(mean_head);
  m.log_var_head = clone_dense(log_var_head);
  m.sentence_encoder = clone_stack(sentence_encoder);
  for (const auto& d : decoders) {
    DecoderParams c;
    c.lstm = clone_stack(d.lstm);
    if (d.attention) c.attention = AttentionParams{d.attention->score.clone()};
    c.projection = clone_dense(d.projection);
    m.decoders.push_back(std::move(c));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Encoders

std::span<const TokenId> unpadded(std::span<const TokenId> ids) {
  const auto it = std::find(ids.begin(), ids.end(), kPadId);
  return ids.first(static_cast<std::size_t>(it - ids.begin()));
}

Posterior encode_sampling(Graph& g, const ReDecodeModel& model, std::span<const TokenId> original) {
  const auto ids = unpadded(original);
  if (ids.empty()) throw ContractError("encode_sampling: empty sentence");
  if (ids.size() > model.config.max_len + 1) {
    throw ContractError("encode_sampling: sentence of " + std::to_string(ids.size()) + " ids exceeds max_len + 1");
  }
  const auto inputs = embedding_lookup(model.embedding, ids);
  LstmState state = zero_state(model.config.hidden_units);
  for (const auto& x : inputs) state = lstm_cell_step(g, model.sampler, x, state);
  return {dense_forward(g, model.mean_head, state.h), dense_forward(g, model.log_var_head, state.h)};
}

LatentSample sample_latent(Graph& g, const Posterior& posterior, const Tensor& epsilon) {
  if (posterior.mu.shape() != posterior.log_var.shape() || posterior.mu.shape() != epsilon.shape()) {
    throw ShapeError("sample_latent: mu " + shape_string(posterior.mu.shape()) + ", log_var " +
                     shape_string(posterior.log_var.shape()) + ", epsilon " + shape_string(epsilon.shape()));
  }
  Tensor eps = epsilon.clone().set_requires_grad(false);
  const Tensor sigma = exp(g, scale(g, posterior.log_var, 0.5));
  Tensor z = add(g, posterior.mu, mul(g, sigma, eps));
  return {posterior.mu, posterior.log_var, std::move(eps), std::move(z)};
}

LatentSample sample_latent(Graph& g, const Posterior& posterior, Rng& rng) {
  std::vector<double> eps(posterior.mu.size());
  for (auto& e : eps) e = rng.normal();
  return sample_latent(g, posterior, Tensor(posterior.mu.shape(), std::move(eps)));
}

SentenceMemory encode_sentence(Graph& g, const ReDecodeModel& model, std::span<const TokenId> original) {
  if (original.empty() || original.front() == kPadId) throw ContractError("encode_sentence: empty sentence");
  const auto inputs = embedding_lookup(model.embedding, original);
  const auto out = stacked_lstm_forward(g, model.sentence_encoder, inputs);
  SentenceMemory mem;
  mem.memory = stack_rows(g, out.top_hidden);
  mem.mask.reserve(original.size());
  std::size_t last = 0;
  for (std::size_t t = 0; t < original.size(); ++t) {
    mem.mask.push_back(original[t] != kPadId ? 1 : 0);
    if (original[t] != kPadId) last = t;
  }
  mem.final_hidden = out.top_hidden[last];
  return mem;
}

DecoderMemory first_decoder_memory(const ReDecodeModel& model, const SentenceMemory& sentence,
                                   std::span<const TokenId> original) {
  DecoderMemory m;
  if (model.config.attention_mode == AttentionMode::memory) {
    m.memory = sentence.memory;
    m.mask = sentence.mask;
  } else {
    m.condition = sentence.final_hidden;
  }
  m.labels.assign(original.begin(), original.end());
  return m;
}

DecoderMemory next_decoder_memory(const DecodeTrace& previous) {
  DecoderMemory m;
  m.memory = previous.softmax_seq;
  m.mask.assign(previous.softmax_seq.dim(0), 1);
  m.labels = previous.token_ids;
  return m;
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

TokenId argmax(std::span<const double> probs) {
  return static_cast<TokenId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

}  // namespace

DecodeTrace decode_sequence(Graph& g, const ReDecodeModel& model, std::size_t decoder_index, const Tensor& z,
                            const DecoderMemory& memory, const DecodeMode& mode) {
  const auto& cfg = model.config;
  if (decoder_index >= model.decoders.size()) {
    throw ConfigError("decoder index " + std::to_string(decoder_index) + " out of range for " +
                      std::to_string(model.decoders.size()) + " decoders");
  }
  const DecoderParams& dec = model.decoders[decoder_index];
  const bool attend = cfg.attention_mode == AttentionMode::memory;
  if (attend) {
    if (!memory.memory.defined() || memory.memory.rank() != 2 ||
        memory.memory.dim(1) != dec.attention->memory_dim()) {
      throw ConfigError("decoder " + std::to_string(decoder_index + 1) + " attends over width " +
                        std::to_string(dec.attention->memory_dim()) + " but memory is " +
                        (memory.memory.defined() ? shape_string(memory.memory.shape()) : std::string("missing")));
    }
  } else if (!memory.condition.defined() || memory.condition.shape() != Shape{cfg.hidden_units}) {
    throw ConfigError("final-state decoder needs a [" + std::to_string(cfg.hidden_units) + "] condition vector");
  }
  if (z.shape() != Shape{cfg.latent_dim}) {
    throw ShapeError("decode_sequence: z " + shape_string(z.shape()) + " vs latent_dim " +
                     std::to_string(cfg.latent_dim));
  }

  const bool teacher = mode.kind == DecodeMode::Kind::teacher_forced;
  std::size_t steps = cfg.max_len;
  if (teacher) {
    if (mode.targets.empty()) throw ContractError("decode_sequence: no teacher targets");
    if (mode.targets.size() > cfg.max_len + 1) {
      throw ContractError("decode_sequence: " + std::to_string(mode.targets.size()) +
                          " targets exceed max_len + 1 = " + std::to_string(cfg.max_len + 1));
    }
    steps = mode.targets.size();
  }

  std::vector<LstmState> states;
  for (const auto& layer : dec.lstm.layers) states.push_back(zero_state(layer.hidden_dim()));

  DecodeTrace trace;
  std::vector<Tensor> prob_rows;
  std::vector<Tensor> attn_rows;
  TokenId input_token = kSosId;
  for (std::size_t t = 0; t < steps; ++t) {
    if (teacher && t > 0) {
      input_token = mode.targets[t - 1];
      if (mode.word_dropout > 0.0 && mode.dropout_rng && mode.dropout_rng->uniform() < mode.word_dropout) {
        input_token = kUnkId;
      }
    }
    const TokenId ids[1] = {input_token};
    const Tensor embedded = embedding_lookup(model.embedding, ids).front();
    std::vector<Tensor> parts{embedded, z};
    if (!attend) parts.push_back(memory.condition);
    const Tensor x = concat(g, parts);
    const Tensor top = stacked_lstm_step(g, dec.lstm, x, states);

    Tensor logits;
    if (attend) {
      auto attn = attention_context(g, *dec.attention, top, memory.memory, memory.mask);
      const Tensor fused[2] = {top, attn.context};
      logits = dense_forward(g, dec.projection, concat(g, fused));
      attn_rows.push_back(std::move(attn.weights));
    } else {
      logits = dense_forward(g, dec.projection, top);
    }
    Tensor probs = softmax(g, logits);
    if (teacher) {
      trace.token_ids.push_back(mode.targets[t]);
    } else {
      input_token = argmax(probs.values());
      trace.token_ids.push_back(input_token);
    }
    prob_rows.push_back(std::move(probs));
    if (!teacher && input_token == kEosId) break;
  }

  trace.softmax_seq = stack_rows(g, prob_rows);
  if (attend) trace.attention_weights = stack_rows(g, attn_rows);
  trace.final_hidden = states.back().h;
  trace.final_cell = states.back().c;
  switch (cfg.final_state) {
    case FinalStateKind::hidden:
      trace.final_state = trace.final_hidden;
      break;
    case FinalStateKind::cell:
      trace.final_state = trace.final_cell;
      break;
    case FinalStateKind::concat: {
      const Tensor both[2] = {trace.final_hidden, trace.final_cell};
      trace.final_state = concat(g, both);
      break;
    }
  }
  return trace;
}

Tensor kl_gaussian(Graph& g, const Tensor& mu, const Tensor& log_var) {
  if (mu.shape() != log_var.shape()) {
    throw ShapeError("kl_gaussian: mu " + shape_string(mu.shape()) + " vs log_var " + shape_string(log_var.shape()));
  }
  const Tensor terms = sub(g, add(g, mul(g, mu, mu), exp(g, log_var)), log_var);
  return scale(g, sum(g, add_scalar(g, terms, -1.0)), 0.5);
}

// ---------------------------------------------------------------------------
// Losses

namespace {

struct ChainResult {
  std::vector<DecodeTrace> traces;
  std::vector<Tensor> ce;
};

ChainResult run_teacher_chain(Graph& g, const ReDecodeModel& model, const Tensor& z, const DecoderMemory& first,
                              std::span<const TokenId> targets, double word_dropout, Rng* dropout_rng) {
  ChainResult out;
  const std::vector<std::uint8_t> mask(targets.size(), 1);
  DecodeMode mode = DecodeMode::teacher(targets);
  mode.word_dropout = word_dropout;
  mode.dropout_rng = dropout_rng;
  for (std::size_t i = 0; i < model.decoders.size(); ++i) {
    const DecoderMemory memory = i == 0 ? first : next_decoder_memory(out.traces.back());
    out.traces.push_back(decode_sequence(g, model, i, z, memory, mode));
    out.ce.push_back(cross_entropy_masked(g, out.traces.back().softmax_seq, targets, mask));
  }
  return out;
}

Tensor pairwise_cosine_sum(Graph& g, const std::array<Tensor, 3>& states) {
  const Tensor terms[3] = {cosine_similarity(g, states[0], states[1]), cosine_similarity(g, states[0], states[2]),
                           cosine_similarity(g, states[1], states[2])};
  return add_n(g, terms);
}

Tensor draw_epsilon(std::size_t dim, Rng& rng) {
  std::vector<double> eps(dim);
  for (auto& e : eps) e = rng.normal();
  return Tensor::vector(std::move(eps));
}

}  // namespace

ForwardResult forward_train(Graph& g, const ReDecodeModel& model, std::span<const SentencePair> batch, Rng& rng,
                            double kl_weight, const ForwardOptions& options) {
  if (batch.empty()) throw ContractError("forward_train: empty batch");
  if (!(kl_weight >= 0.0 && kl_weight <= 1.0)) throw ContractError("forward_train: kl_weight must lie in [0, 1]");
  const auto& cfg = model.config;
  const std::size_t n_dec = model.decoders.size();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  ForwardResult result;
  result.ce_per_decoder.assign(n_dec, 0.0);
  std::vector<Tensor> pair_losses;
  pair_losses.reserve(batch.size());

  for (const auto& pair : batch) {
    const auto original = pair.original_ids();
    const auto targets = pair.paraphrase_ids();

    std::array<Tensor, 3> eps;
    eps[0] = draw_epsilon(cfg.latent_dim, rng);
    if (cfg.multisample_enabled) {
      eps[1] = draw_epsilon(cfg.latent_dim, rng);
      eps[2] = draw_epsilon(cfg.latent_dim, rng);
    }
    std::optional<Rng> dropout_rng;
    if (options.word_dropout > 0.0) dropout_rng.emplace(rng.next_u64());
    Rng* drop = dropout_rng ? &*dropout_rng : nullptr;

    const Posterior post = encode_sampling(g, model, original);
    const SentenceMemory sentence = encode_sentence(g, model, original);
    const DecoderMemory first = first_decoder_memory(model, sentence, original);

    const LatentSample s0 = sample_latent(g, post, eps[0]);
    ChainResult chain0 = run_teacher_chain(g, model, s0.z, first, targets, options.word_dropout, drop);

    std::vector<Tensor> ce_terms = chain0.ce;
    for (std::size_t i = 0; i < n_dec; ++i) result.ce_per_decoder[i] += chain0.ce[i].item() * inv_batch;

    std::vector<Tensor> terms;
    Tensor ms;
    if (cfg.multisample_enabled) {
      std::array<Tensor, 3> finals;
      finals[0] = chain0.traces.back().final_state;
      for (std::size_t k = 1; k < 3; ++k) {
        const LatentSample sk = sample_latent(g, post, eps[k]);
        ChainResult chain = run_teacher_chain(g, model, sk.z, first, targets, options.word_dropout, drop);
        finals[k] = chain.traces.back().final_state;
        if (cfg.multisample_ce_all) ce_terms.insert(ce_terms.end(), chain.ce.begin(), chain.ce.end());
      }
      ms = pairwise_cosine_sum(g, finals);
      result.multisample += ms.item() * inv_batch;
    }

    terms.push_back(scale(g, add_n(g, ce_terms), 1.0 / static_cast<double>(ce_terms.size())));
    const Tensor kl = kl_gaussian(g, post.mu, post.log_var);
    result.kl += kl.item() * inv_batch;
    terms.push_back(scale(g, kl, kl_weight));
    if (ms.defined()) terms.push_back(scale(g, ms, cfg.multisample_weight));
    pair_losses.push_back(add_n(g, terms));

    if (options.keep_traces) result.traces.push_back(std::move(chain0.traces));
  }

  result.loss = scale(g, add_n(g, pair_losses), inv_batch);
  result.total = result.loss.item();
  return result;
}

Tensor loss_multisample(Graph& g, const ReDecodeModel& model, std::span<const TokenId> original,
                        std::span<const TokenId> targets, std::span<const Tensor, 3> epsilons) {
  if (!model.config.multisample_enabled) throw ContractError("loss_multisample: multi-sample training is disabled");
  const auto src = unpadded(original);
  const auto tgt = unpadded(targets);
  const Posterior post = encode_sampling(g, model, src);
  const SentenceMemory sentence = encode_sentence(g, model, src);
  const DecoderMemory first = first_decoder_memory(model, sentence, src);
  std::array<Tensor, 3> finals;
  for (std::size_t k = 0; k < 3; ++k) {
    const LatentSample s = sample_latent(g, post, epsilons[k]);
    finals[k] = run_teacher_chain(g, model, s.z, first, tgt, 0.0, nullptr).traces.back().final_state;
  }
  return pairwise_cosine_sum(g, finals);
}

Tensor loss_multisample(Graph& g, const ReDecodeModel& model, std::span<const TokenId> original,
                        std::span<const TokenId> targets, Rng& rng) {
  const std::array<Tensor, 3> eps = {draw_epsilon(model.config.latent_dim, rng),
                                     draw_epsilon(model.config.latent_dim, rng),
                                     draw_epsilon(model.config.latent_dim, rng)};
  return loss_multisample(g, model, original, targets, std::span<const Tensor, 3>(eps));
}

// ---------------------------------------------------------------------------
// Inference

Generation generate(const ReDecodeModel& model, std::span<const TokenId> original, Rng& rng, const Vocabulary* vocab) {
  const auto src = unpadded(original);
  if (src.empty()) throw ContractError("generate: empty input");
  Graph g;
  g.set_recording(false);
  const Posterior post = encode_sampling(g, model, src);
  const Tensor eps = model.config.inference_latent == InferenceLatent::sample
                         ? draw_epsilon(model.config.latent_dim, rng)
                         : Tensor({model.config.latent_dim});
  const LatentSample latent = sample_latent(g, post, eps);
  const SentenceMemory sentence = encode_sentence(g, model, src);

  Generation out;
  out.source.assign(src.begin(), src.end());
  for (std::size_t i = 0; i < model.decoders.size(); ++i) {
    const DecoderMemory memory =
        i == 0 ? first_decoder_memory(model, sentence, src) : next_decoder_memory(out.traces.back());
    out.traces.push_back(decode_sequence(g, model, i, latent.z, memory, DecodeMode::greedy()));
  }
  if (vocab) {
    for (const auto& t : out.traces) out.texts.push_back(vocab->decode(t.token_ids));
  }
  return out;
}

}  // namespace redecode
