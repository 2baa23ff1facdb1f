#include "redecode/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <map>

#include "fileio.hpp"
#include "redecode/error.hpp"

namespace redecode {

const std::vector<VariantSpec>& known_variants() {
  static const std::vector<VariantSpec> variants{
      {"vae-s", 1, AttentionMode::final_state, false},
      {"vae-var", 1, AttentionMode::memory, true},
      {"vae-iterdec2", 2, AttentionMode::memory, false},
      {"vae-iterdec3", 3, AttentionMode::memory, false},
      {"vae-itervar", 2, AttentionMode::memory, true},
  };
  return variants;
}

const VariantSpec& find_variant(std::string_view name) {
  for (const auto& v : known_variants()) {
    if (v.name == name) return v;
  }
  std::string valid;
  for (const auto& v : known_variants()) {
    if (!valid.empty()) valid += ", ";
    valid += v.name;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'; valid variants: " + valid);
}

const std::vector<std::string_view>& run_config_keys() {
  static const std::vector<std::string_view> keys{
      "variant",         "train_pairs",       "caption_groups",     "test_pairs",         "embeddings",
      "embedding_dim",   "hidden_units",      "latent_dim",         "max_len",            "learning_rate",
      "batch_size",      "epochs",            "max_steps",          "kl_anneal_steps",    "kl_schedule",
      "checkpoint_every", "seed",             "word_dropout_prob",  "gradient_clip_norm", "multisample_weight",
      "min_frequency",   "lowercase",         "multisample_ce_all", "final_state",        "inference_latent",
  };
  return keys;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T number(std::string_view key, std::string_view value, std::size_t line) {
  T v{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config line " + std::to_string(line) + ": bad value '" + std::string(value) + "' for " +
                      std::string(key));
  }
  return v;
}

bool boolean(std::string_view key, std::string_view value, std::size_t line) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config line " + std::to_string(line) + ": " + std::string(key) + " must be true or false");
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::map<std::string, std::pair<std::string, std::size_t>> values;
  std::size_t line_no = 0;
  for (auto raw : io::split(text, '\n')) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    const auto& keys = run_config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!values.emplace(key, std::make_pair(value, line_no)).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }

  const auto it = values.find("variant");
  if (it == values.end()) throw ConfigError("config is missing the required key 'variant'");
  const VariantSpec& variant = find_variant(it->second.first);
  cfg.variant = std::string(variant.name);
  cfg.model.num_decoders = variant.num_decoders;
  cfg.model.attention_mode = variant.attention_mode;
  cfg.model.multisample_enabled = variant.multisample;

  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  for (const auto& [key, entry] : values) {
    const auto& [v, line] = entry;
    if (key == "variant") continue;
    if (key == "train_pairs") cfg.train_pairs = path(v);
    else if (key == "caption_groups") cfg.caption_groups = path(v);
    else if (key == "test_pairs") cfg.test_pairs = path(v);
    else if (key == "embeddings") cfg.embeddings = path(v);
    else if (key == "embedding_dim") cfg.model.embedding_dim = number<std::size_t>(key, v, line);
    else if (key == "hidden_units") cfg.model.hidden_units = number<std::size_t>(key, v, line);
    else if (key == "latent_dim") cfg.model.latent_dim = number<std::size_t>(key, v, line);
    else if (key == "max_len") cfg.model.max_len = number<std::size_t>(key, v, line);
    else if (key == "learning_rate") cfg.train.learning_rate = number<double>(key, v, line);
    else if (key == "batch_size") cfg.train.batch_size = number<std::size_t>(key, v, line);
    else if (key == "epochs") cfg.train.epochs = number<std::size_t>(key, v, line);
    else if (key == "max_steps") cfg.train.max_steps = number<std::size_t>(key, v, line);
    else if (key == "kl_anneal_steps") cfg.train.kl_anneal_steps = number<std::size_t>(key, v, line);
    else if (key == "kl_schedule") cfg.train.kl_schedule = parse_kl_schedule(v);
    else if (key == "checkpoint_every") cfg.train.checkpoint_every = number<std::size_t>(key, v, line);
    else if (key == "seed") cfg.train.seed = number<std::uint64_t>(key, v, line);
    else if (key == "word_dropout_prob") cfg.train.word_dropout_prob = number<double>(key, v, line);
    else if (key == "gradient_clip_norm") cfg.train.gradient_clip_norm = number<double>(key, v, line);
    else if (key == "multisample_weight") cfg.model.multisample_weight = number<double>(key, v, line);
    else if (key == "min_frequency") cfg.min_frequency = number<std::size_t>(key, v, line);
    else if (key == "lowercase") cfg.lowercase = boolean(key, v, line);
    else if (key == "multisample_ce_all") cfg.model.multisample_ce_all = boolean(key, v, line);
    else if (key == "final_state") cfg.model.final_state = parse_final_state_kind(v);
    else if (key == "inference_latent") cfg.model.inference_latent = parse_inference_latent(v);
  }
  if (cfg.train_pairs.empty() == cfg.caption_groups.empty()) {
    throw ConfigError("config must set exactly one of train_pairs or caption_groups");
  }
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(io::read_file(path), path.parent_path());
}

}  // namespace redecode
