#pragma once

// Flat key=value run configuration shared by the CLI and the C API.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "redecode/model.hpp"
#include "redecode/trainer.hpp"

namespace redecode {

struct VariantSpec {
  std::string_view name;
  std::size_t num_decoders;
  AttentionMode attention_mode;
  bool multisample;
};

const std::vector<VariantSpec>& known_variants();
/// Throws ConfigError listing every valid name.
const VariantSpec& find_variant(std::string_view name);

struct RunConfig {
  std::string variant;
  ModelConfig model;  // vocab_size is filled in after the vocabulary is built
  TrainConfig train;

  std::filesystem::path train_pairs;     // tab-separated pair file
  std::filesystem::path caption_groups;  // alternative: one image per line
  std::filesystem::path test_pairs;
  std::filesystem::path embeddings;      // optional pretrained vectors
  std::size_t min_frequency = 1;
  bool lowercase = true;
};

/// Parses `key = value` lines; `#` starts a comment. Relative data paths
/// resolve against `base_dir`.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Keys accepted by parse_run_config.
const std::vector<std::string_view>& run_config_keys();

}  // namespace redecode
