#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "redecode/corpus.hpp"
#include "redecode/model.hpp"

namespace redecode {

enum class KlSchedule { linear, sigmoid };

std::string to_string(KlSchedule schedule);
KlSchedule parse_kl_schedule(std::string_view text);

struct TrainConfig {
  double learning_rate = 5e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  /// Stop after this many optimizer steps in total; 0 means run all epochs.
  std::size_t max_steps = 0;
  std::size_t kl_anneal_steps = 5000;
  KlSchedule kl_schedule = KlSchedule::linear;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::uint64_t seed = 0;
  double word_dropout_prob = 0.0;
  double gradient_clip_norm = 5.0;  // <= 0 disables clipping

  void validate() const;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Zero accumulators shaped like `params`.
  static OptimizerState for_parameters(std::span<const NamedTensor> params);
};

/// Scales every gradient by max_norm / norm when the global L2 norm
/// exceeds max_norm. Returns the norm before clipping.
double clip_gradients(std::span<const NamedTensor> params, double max_norm);

/// One bias-corrected Adam update. Clips first when clip_norm > 0.
/// Returns the global gradient norm before clipping.
double adam_step(std::span<const NamedTensor> params, OptimizerState& state, double learning_rate,
                 double clip_norm = 0.0);

/// Linear ramp min(1, step / anneal_steps), or a logistic curve centred at
/// anneal_steps / 2. anneal_steps == 0 means a constant 1.
double kl_anneal_weight(std::uint64_t step, std::size_t anneal_steps, KlSchedule schedule = KlSchedule::linear);

struct StepRecord {
  std::uint64_t step = 0;  // 1-based count of completed optimizer steps
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::vector<double> ce;  // per decoder
  double kl = 0.0;
  double kl_weight = 0.0;
  double multisample = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  std::vector<double> mean_ce;
  double mean_kl = 0.0;
  double mean_total = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called every checkpoint_every steps with the updated model.
  std::function<void(const ReDecodeModel&, const OptimizerState&)> on_checkpoint;
};

/// Trains from `state.step` onward, so a loaded checkpoint resumes exactly
/// where an unbroken run would be. Per-step randomness is derived from
/// (seed, step) and batch order from (seed, epoch).
TrainLog train(ReDecodeModel& model, std::span<const SentencePair> pairs, const TrainConfig& config,
               OptimizerState& state, const TrainHooks& hooks = {});

/// `step<TAB>ce_dec1..ce_decN<TAB>kl<TAB>multisample<TAB>total`
std::string format_log_line(const StepRecord& record);

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step);

}  // namespace redecode
