#pragma once

// Binary checkpoint: "RDEC", u16 version, key/value config block,
// parameter records, Adam moment records, trailing step counter. All
// integers and doubles are little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "redecode/error.hpp"
#include "redecode/model.hpp"
#include "redecode/trainer.hpp"

namespace redecode {

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { not_a_checkpoint, version_mismatch, truncated, shape_mismatch, malformed };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct CheckpointContents {
  ReDecodeModel model;
  OptimizerState optimizer;
  std::uint64_t step = 0;
  TrainConfig train_config;
  std::optional<Vocabulary> vocabulary;
};

void save_checkpoint(const std::filesystem::path& path, const ReDecodeModel& model, const OptimizerState& optimizer,
                     std::uint64_t step, const TrainConfig& train_config = {}, const Vocabulary* vocabulary = nullptr);

/// Rebuilds the model from the stored config.
CheckpointContents load_checkpoint(const std::filesystem::path& path);

/// Loads into an existing model. Every stored tensor must match the
/// model's parameter names and shapes, otherwise shape_mismatch.
std::uint64_t load_checkpoint_into(const std::filesystem::path& path, ReDecodeModel& model, OptimizerState& optimizer);

/// Config block serialization, exposed for tests.
std::map<std::string, std::string> config_entries(const ModelConfig& model, const TrainConfig& train);
ModelConfig model_config_from_entries(const std::map<std::string, std::string>& entries);
TrainConfig train_config_from_entries(const std::map<std::string, std::string>& entries);

}  // namespace redecode
