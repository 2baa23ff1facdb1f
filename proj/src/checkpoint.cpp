#include "redecode/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <unordered_map>

#include "fileio.hpp"

namespace redecode {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'E', 'C'};

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void text(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  const std::string& data() const { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string text() {
    const auto n = u32();
    return std::string(bytes(n));
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            source_ + ": truncated checkpoint (needed " + std::to_string(n) + " bytes at offset " +
                                std::to_string(pos_) + ")");
    }
  }
  std::uint64_t get(int n) {
    const auto s = bytes(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string source_;
};

struct Record {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct RawCheckpoint {
  std::map<std::string, std::string> entries;
  std::vector<Record> tensors;
  std::vector<Record> moments;
  std::uint64_t step = 0;
};

void write_record(Writer& w, std::string_view name, const Shape& shape, std::span<const double> values) {
  w.text(name);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (const auto d : shape) w.u64(d);
  for (const double v : values) w.f64(v);
}

Record read_record(Reader& r, const std::string& source) {
  Record rec;
  rec.name = r.text();
  const auto rank = r.u32();
  if (rank > 8) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          source + ": tensor '" + rec.name + "' has implausible rank " + std::to_string(rank));
  }
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    rec.shape.push_back(static_cast<std::size_t>(r.u64()));
    n *= rec.shape.back();
  }
  // Reading element by element lets a short file fail as truncated rather
  // than as an allocation failure on a corrupt dimension.
  for (std::size_t i = 0; i < n; ++i) rec.values.push_back(r.f64());
  return rec;
}

RawCheckpoint read_raw(const std::filesystem::path& path) {
  const std::string data = io::read_file(path);
  const std::string source = path.string();
  if (data.size() < sizeof kMagic || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(CheckpointError::Kind::not_a_checkpoint, source + ": not a checkpoint (bad magic header)");
  }
  Reader r(data, source);
  r.bytes(sizeof kMagic);
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::version_mismatch,
                          source + ": checkpoint format version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  RawCheckpoint raw;
  const auto n_entries = r.u32();
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    std::string key = r.text();
    raw.entries[key] = r.text();
  }
  const auto n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) raw.tensors.push_back(read_record(r, source));
  const auto n_moments = r.u32();
  for (std::uint32_t i = 0; i < n_moments; ++i) raw.moments.push_back(read_record(r, source));
  raw.step = r.u64();
  if (!r.at_end()) throw CheckpointError(CheckpointError::Kind::malformed, source + ": trailing bytes after step");
  return raw;
}

[[noreturn]] void mismatch(const std::string& what) {
  throw CheckpointError(CheckpointError::Kind::shape_mismatch, what);
}

void check_shape(const Tensor& target, const Record& rec, const std::string& source) {
  if (rec.shape != target.shape()) {
    mismatch(source + ": '" + rec.name + "' stored as " + shape_string(rec.shape) + " but the model expects " +
             shape_string(target.shape()));
  }
}

std::uint64_t apply(const RawCheckpoint& raw, const std::string& source, ReDecodeModel& model,
                    OptimizerState& optimizer) {
  auto tensors = model.all_tensors();
  if (raw.tensors.size() != tensors.size()) {
    mismatch(source + ": checkpoint holds " + std::to_string(raw.tensors.size()) + " tensors but the model has " +
             std::to_string(tensors.size()));
  }
  std::unordered_map<std::string, const Record*> by_name;
  for (const auto& rec : raw.tensors) by_name[rec.name] = &rec;
  std::vector<const Record*> matched;
  for (const auto& t : tensors) {
    const auto it = by_name.find(t.name);
    if (it == by_name.end()) mismatch(source + ": checkpoint has no tensor '" + t.name + "'");
    check_shape(t.tensor, *it->second, source);
    matched.push_back(it->second);
  }

  const auto params = model.parameters();
  OptimizerState state = OptimizerState::for_parameters(params);
  if (!raw.moments.empty()) {
    if (raw.moments.size() != 2 * params.size()) {
      mismatch(source + ": checkpoint holds " + std::to_string(raw.moments.size()) + " optimizer records, expected " +
               std::to_string(2 * params.size()));
    }
    std::unordered_map<std::string, const Record*> moments;
    for (const auto& rec : raw.moments) moments[rec.name] = &rec;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (int which = 0; which < 2; ++which) {
        const std::string name = (which == 0 ? "adam.m/" : "adam.v/") + params[i].name;
        const auto it = moments.find(name);
        if (it == moments.end()) mismatch(source + ": checkpoint has no optimizer record '" + name + "'");
        if (it->second->shape != params[i].tensor.shape()) {
          mismatch(source + ": optimizer record '" + name + "' has shape " + shape_string(it->second->shape));
        }
        (which == 0 ? state.first_moment[i] : state.second_moment[i]) = it->second->values;
      }
    }
  }
  auto number = [&](const char* key, double fallback) {
    const auto it = raw.entries.find(key);
    if (it == raw.entries.end()) return fallback;
    double v = 0.0;
    const auto& s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw CheckpointError(CheckpointError::Kind::malformed, source + ": bad value for " + key);
    }
    return v;
  };
  state.beta1 = number("adam.beta1", state.beta1);
  state.beta2 = number("adam.beta2", state.beta2);
  state.epsilon = number("adam.epsilon", state.epsilon);
  state.step = raw.step;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto v = tensors[i].tensor.mutable_values();
    std::copy(matched[i]->values.begin(), matched[i]->values.end(), v.begin());
  }
  optimizer = std::move(state);
  return raw.step;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

const std::string& entry(const std::map<std::string, std::string>& entries, const std::string& key) {
  const auto it = entries.find(key);
  if (it == entries.end()) throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint config lacks '" + key + "'");
  return it->second;
}

template <typename T>
T parse_number(const std::map<std::string, std::string>& entries, const std::string& key) {
  const std::string& s = entry(entries, key);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint config has bad value '" + s + "' for " + key);
  }
  return v;
}

bool parse_bool(const std::map<std::string, std::string>& entries, const std::string& key) {
  const std::string& s = entry(entries, key);
  if (s == "true") return true;
  if (s == "false") return false;
  throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint config has bad value '" + s + "' for " + key);
}

}  // namespace

std::map<std::string, std::string> config_entries(const ModelConfig& m, const TrainConfig& t) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"model.vocab_size", std::to_string(m.vocab_size)},
      {"model.embedding_dim", std::to_string(m.embedding_dim)},
      {"model.hidden_units", std::to_string(m.hidden_units)},
      {"model.latent_dim", std::to_string(m.latent_dim)},
      {"model.num_decoders", std::to_string(m.num_decoders)},
      {"model.encoder_layers", std::to_string(m.encoder_layers)},
      {"model.decoder_layers", std::to_string(m.decoder_layers)},
      {"model.max_len", std::to_string(m.max_len)},
      {"model.attention_mode", to_string(m.attention_mode)},
      {"model.multisample_enabled", b(m.multisample_enabled)},
      {"model.multisample_weight", format_double(m.multisample_weight)},
      {"model.multisample_ce_all", b(m.multisample_ce_all)},
      {"model.final_state", to_string(m.final_state)},
      {"model.inference_latent", to_string(m.inference_latent)},
      {"train.learning_rate", format_double(t.learning_rate)},
      {"train.batch_size", std::to_string(t.batch_size)},
      {"train.epochs", std::to_string(t.epochs)},
      {"train.max_steps", std::to_string(t.max_steps)},
      {"train.kl_anneal_steps", std::to_string(t.kl_anneal_steps)},
      {"train.kl_schedule", to_string(t.kl_schedule)},
      {"train.checkpoint_every", std::to_string(t.checkpoint_every)},
      {"train.seed", std::to_string(t.seed)},
      {"train.word_dropout_prob", format_double(t.word_dropout_prob)},
      {"train.gradient_clip_norm", format_double(t.gradient_clip_norm)},
  };
}

ModelConfig model_config_from_entries(const std::map<std::string, std::string>& e) {
  ModelConfig m;
  m.vocab_size = parse_number<std::size_t>(e, "model.vocab_size");
  m.embedding_dim = parse_number<std::size_t>(e, "model.embedding_dim");
  m.hidden_units = parse_number<std::size_t>(e, "model.hidden_units");
  m.latent_dim = parse_number<std::size_t>(e, "model.latent_dim");
  m.num_decoders = parse_number<std::size_t>(e, "model.num_decoders");
  m.encoder_layers = parse_number<std::size_t>(e, "model.encoder_layers");
  m.decoder_layers = parse_number<std::size_t>(e, "model.decoder_layers");
  m.max_len = parse_number<std::size_t>(e, "model.max_len");
  m.multisample_enabled = parse_bool(e, "model.multisample_enabled");
  m.multisample_weight = parse_number<double>(e, "model.multisample_weight");
  m.multisample_ce_all = parse_bool(e, "model.multisample_ce_all");
  try {
    m.attention_mode = parse_attention_mode(entry(e, "model.attention_mode"));
    m.final_state = parse_final_state_kind(entry(e, "model.final_state"));
    m.inference_latent = parse_inference_latent(entry(e, "model.inference_latent"));
  } catch (const ConfigError& err) {
    throw CheckpointError(CheckpointError::Kind::malformed, std::string("checkpoint config: ") + err.what());
  }
  return m;
}

TrainConfig train_config_from_entries(const std::map<std::string, std::string>& e) {
  TrainConfig t;
  t.learning_rate = parse_number<double>(e, "train.learning_rate");
  t.batch_size = parse_number<std::size_t>(e, "train.batch_size");
  t.epochs = parse_number<std::size_t>(e, "train.epochs");
  t.max_steps = parse_number<std::size_t>(e, "train.max_steps");
  t.kl_anneal_steps = parse_number<std::size_t>(e, "train.kl_anneal_steps");
  t.checkpoint_every = parse_number<std::size_t>(e, "train.checkpoint_every");
  t.seed = parse_number<std::uint64_t>(e, "train.seed");
  t.word_dropout_prob = parse_number<double>(e, "train.word_dropout_prob");
  t.gradient_clip_norm = parse_number<double>(e, "train.gradient_clip_norm");
  try {
    t.kl_schedule = parse_kl_schedule(entry(e, "train.kl_schedule"));
  } catch (const ConfigError& err) {
    throw CheckpointError(CheckpointError::Kind::malformed, std::string("checkpoint config: ") + err.what());
  }
  return t;
}

void save_checkpoint(const std::filesystem::path& path, const ReDecodeModel& model, const OptimizerState& optimizer,
                     std::uint64_t step, const TrainConfig& train_config, const Vocabulary* vocabulary) {
  auto entries = config_entries(model.config, train_config);
  entries["adam.beta1"] = format_double(optimizer.beta1);
  entries["adam.beta2"] = format_double(optimizer.beta2);
  entries["adam.epsilon"] = format_double(optimizer.epsilon);
  if (vocabulary) {
    if (vocabulary->size() != model.config.vocab_size) {
      throw ContractError("save_checkpoint: vocabulary has " + std::to_string(vocabulary->size()) +
                          " entries but the model expects " + std::to_string(model.config.vocab_size));
    }
    std::string joined;
    for (const auto& tok : vocabulary->tokens()) {
      joined += tok;
      joined += '\n';
    }
    entries["vocab.tokens"] = joined;
  }

  Writer w;
  w.bytes(std::string_view(kMagic, sizeof kMagic));
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [k, v] : entries) {
    w.text(k);
    w.text(v);
  }
  const auto tensors = model.all_tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) write_record(w, t.name, t.tensor.shape(), t.tensor.values());

  const auto params = model.parameters();
  const bool has_moments = optimizer.first_moment.size() == params.size() && !params.empty();
  if (!optimizer.first_moment.empty() && !has_moments) {
    throw ContractError("save_checkpoint: optimizer state does not match the model's parameters");
  }
  w.u32(has_moments ? static_cast<std::uint32_t>(2 * params.size()) : 0U);
  if (has_moments) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      write_record(w, "adam.m/" + params[i].name, params[i].tensor.shape(), optimizer.first_moment[i]);
      write_record(w, "adam.v/" + params[i].name, params[i].tensor.shape(), optimizer.second_moment[i]);
    }
  }
  w.u64(step);
  io::write_file_atomic(path, w.data());
}

CheckpointContents load_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  const std::string source = path.string();
  CheckpointContents out;
  const ModelConfig cfg = model_config_from_entries(raw.entries);
  try {
    cfg.validate();
  } catch (const ConfigError& err) {
    throw CheckpointError(CheckpointError::Kind::malformed, source + ": " + err.what());
  }
  out.train_config = train_config_from_entries(raw.entries);
  Rng rng(0);
  out.model = ReDecodeModel::create(cfg, Tensor({cfg.vocab_size, cfg.embedding_dim}), rng);
  out.step = apply(raw, source, out.model, out.optimizer);
  if (const auto it = raw.entries.find("vocab.tokens"); it != raw.entries.end()) {
    std::vector<std::string> tokens;
    for (const auto tok : io::split(it->second, '\n')) {
      if (!tok.empty()) tokens.emplace_back(tok);
    }
    try {
      out.vocabulary = Vocabulary::from_tokens(std::move(tokens));
    } catch (const ContractError& err) {
      throw CheckpointError(CheckpointError::Kind::malformed, source + ": " + err.what());
    }
    if (out.vocabulary->size() != cfg.vocab_size) {
      throw CheckpointError(CheckpointError::Kind::malformed, source + ": stored vocabulary size disagrees with config");
    }
  }
  return out;
}

std::uint64_t load_checkpoint_into(const std::filesystem::path& path, ReDecodeModel& model, OptimizerState& optimizer) {
  const RawCheckpoint raw = read_raw(path);
  return apply(raw, path.string(), model, optimizer);
}

}  // namespace redecode
