#include "redecode/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "redecode/error.hpp"

namespace redecode {

std::string to_string(KlSchedule schedule) { return schedule == KlSchedule::linear ? "linear" : "sigmoid"; }

KlSchedule parse_kl_schedule(std::string_view text) {
  if (text == "linear") return KlSchedule::linear;
  if (text == "sigmoid") return KlSchedule::sigmoid;
  throw ConfigError("unknown kl_schedule '" + std::string(text) + "' (expected linear or sigmoid)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(word_dropout_prob >= 0.0 && word_dropout_prob < 1.0)) throw ConfigError("word_dropout_prob must be in [0, 1)");
  if (epochs == 0 && max_steps == 0) throw ConfigError("either epochs or max_steps must be positive");
}

OptimizerState OptimizerState::for_parameters(std::span<const NamedTensor> params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.tensor.size(), 0.0);
    s.second_moment.emplace_back(p.tensor.size(), 0.0);
  }
  return s;
}

double clip_gradients(std::span<const NamedTensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (const double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

double adam_step(std::span<const NamedTensor> params, OptimizerState& state, double learning_rate,
                 double clip_norm) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                        " tensors but " + std::to_string(params.size()) + " were given");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.has_grad()) throw ContractError("adam_step: no gradient for '" + params[i].name + "'");
    if (state.first_moment[i].size() != params[i].tensor.size()) {
      throw ShapeError("adam_step: accumulator size mismatch for '" + params[i].name + "'");
    }
  }
  const double norm = clip_gradients(params, clip_norm);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    auto values = p.mutable_values();
    const auto grad = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * grad[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
  return norm;
}

double kl_anneal_weight(std::uint64_t step, std::size_t anneal_steps, KlSchedule schedule) {
  if (anneal_steps == 0) return 1.0;
  const double x = static_cast<double>(step) / static_cast<double>(anneal_steps);
  if (schedule == KlSchedule::linear) return std::min(1.0, x);
  if (x >= 1.0) return 1.0;
  // Logistic with slope 10 per ramp length, pinned to 0 at step 0.
  const double lo = 1.0 / (1.0 + std::exp(5.0));
  const double hi = 1.0 / (1.0 + std::exp(-5.0));
  const double s = 1.0 / (1.0 + std::exp(-10.0 * (x - 0.5)));
  return std::clamp((s - lo) / (hi - lo), 0.0, 1.0);
}

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step) {
  return Rng::mix(Rng::mix(seed, 0x7374657073ULL), step);
}

std::string format_log_line(const StepRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step;
  for (const double ce : r.ce) os << '\t' << ce;
  os << '\t' << r.kl << '\t' << r.multisample << '\t' << r.total;
  return os.str();
}

TrainLog train(ReDecodeModel& model, std::span<const SentencePair> pairs, const TrainConfig& config,
               OptimizerState& state, const TrainHooks& hooks) {
  config.validate();
  if (pairs.empty()) throw ContractError("train: empty training set");
  const auto params = model.parameters();
  if (state.first_moment.empty()) state = OptimizerState::for_parameters(params);

  const std::size_t per_epoch = (pairs.size() + config.batch_size - 1) / config.batch_size;
  std::uint64_t total_steps = static_cast<std::uint64_t>(per_epoch) * config.epochs;
  if (config.max_steps > 0 && (config.epochs == 0 || config.max_steps < total_steps)) total_steps = config.max_steps;

  TrainLog log;
  const std::size_t n_dec = model.decoders.size();
  EpochRecord epoch_acc;
  std::size_t current_epoch = static_cast<std::size_t>(state.step / per_epoch);
  std::vector<Batch> batches;
  std::size_t batches_epoch = static_cast<std::size_t>(-1);

  auto finish_epoch = [&] {
    if (epoch_acc.steps == 0) return;
    const double inv = 1.0 / static_cast<double>(epoch_acc.steps);
    for (auto& c : epoch_acc.mean_ce) c *= inv;
    epoch_acc.mean_kl *= inv;
    epoch_acc.mean_total *= inv;
    log.epochs.push_back(epoch_acc);
    if (hooks.on_epoch) hooks.on_epoch(epoch_acc);
  };
  epoch_acc.epoch = current_epoch;
  epoch_acc.mean_ce.assign(n_dec, 0.0);

  while (state.step < total_steps) {
    const std::size_t epoch = static_cast<std::size_t>(state.step / per_epoch);
    const std::size_t batch_index = static_cast<std::size_t>(state.step % per_epoch);
    if (epoch != batches_epoch) {
      batches = make_batches(pairs, config.batch_size, config.seed, epoch);
      batches_epoch = epoch;
    }
    if (epoch != current_epoch) {
      finish_epoch();
      current_epoch = epoch;
      epoch_acc = EpochRecord{};
      epoch_acc.epoch = epoch;
      epoch_acc.mean_ce.assign(n_dec, 0.0);
    }

    const Batch& batch = batches[batch_index];
    const double kl_weight = kl_anneal_weight(state.step, config.kl_anneal_steps, config.kl_schedule);
    Rng rng(step_seed(config.seed, state.step));
    for (const auto& p : params) {
      Tensor t = p.tensor;
      t.zero_grad();
    }

    Graph g;
    ForwardOptions options;
    options.word_dropout = config.word_dropout_prob;
    const ForwardResult fwd = forward_train(g, model, batch.pairs, rng, kl_weight, options);
    if (!std::isfinite(fwd.total)) {
      throw TrainingError("non-finite loss at step " + std::to_string(state.step + 1) + " (epoch " +
                          std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ")");
    }
    g.backward(fwd.loss);
    const double norm = adam_step(params, state, config.learning_rate, config.gradient_clip_norm);

    StepRecord rec;
    rec.step = state.step;
    rec.epoch = epoch;
    rec.batch = batch_index;
    rec.ce = fwd.ce_per_decoder;
    rec.kl = fwd.kl;
    rec.kl_weight = kl_weight;
    rec.multisample = fwd.multisample;
    rec.total = fwd.total;
    rec.grad_norm = norm;
    log.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);

    ++epoch_acc.steps;
    for (std::size_t i = 0; i < n_dec; ++i) epoch_acc.mean_ce[i] += rec.ce[i];
    epoch_acc.mean_kl += rec.kl;
    epoch_acc.mean_total += rec.total;

    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(model, state);
    }
  }
  finish_epoch();
  return log;
}

}  // namespace redecode
