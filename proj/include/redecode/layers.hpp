#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "redecode/tensor.hpp"

namespace redecode {

/// One LSTM cell. Gate blocks are stacked in the order input, forget,
/// cell-candidate, output along the 4h axis.
struct LstmCellParams {
  Tensor w_input;   // [4h x d_in]
  Tensor w_hidden;  // [4h x h]
  Tensor bias;      // [4h]

  std::size_t input_dim() const { return w_input.dim(1); }
  std::size_t hidden_dim() const { return w_hidden.dim(1); }

  /// Xavier weights, zero bias except the forget block which is set to `forget_bias`.
  static LstmCellParams create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng, double forget_bias = 1.0);
  void validate() const;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

LstmState zero_state(std::size_t hidden_dim);

struct StackedLstmParams {
  std::vector<LstmCellParams> layers;

  std::size_t input_dim() const { return layers.front().input_dim(); }
  std::size_t hidden_dim() const { return layers.back().hidden_dim(); }

  static StackedLstmParams create(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_layers, Rng& rng,
                                  double forget_bias = 1.0);
  void validate() const;
};

struct DenseParams {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  std::size_t input_dim() const { return weight.dim(1); }
  std::size_t output_dim() const { return weight.dim(0); }

  static DenseParams create(std::size_t input_dim, std::size_t output_dim, Rng& rng);
};

/// Luong "general" score: query^T * W_a * m_j.
struct AttentionParams {
  Tensor score;  // [h x d_mem]

  std::size_t query_dim() const { return score.dim(0); }
  std::size_t memory_dim() const { return score.dim(1); }

  static AttentionParams create(std::size_t query_dim, std::size_t memory_dim, Rng& rng);
};

LstmState lstm_cell_step(Graph& g, const LstmCellParams& p, const Tensor& x, const LstmState& prev);

/// Advances every layer by one time step; returns the top layer's hidden state.
Tensor stacked_lstm_step(Graph& g, const StackedLstmParams& p, const Tensor& x, std::vector<LstmState>& states);

struct StackedLstmOutput {
  std::vector<Tensor> top_hidden;          // one per input step
  std::vector<LstmState> final_states;     // one per layer
};

/// Runs the stack over a whole sequence. Empty `initial` means zero states.
StackedLstmOutput stacked_lstm_forward(Graph& g, const StackedLstmParams& p, std::span<const Tensor> inputs,
                                       std::span<const LstmState> initial = {});

Tensor dense_forward(Graph& g, const DenseParams& p, const Tensor& x);

/// Copies rows of a frozen table. The result never carries gradient back
/// into `table`, and the PAD id (0) always yields the zero vector.
std::vector<Tensor> embedding_lookup(const Tensor& table, std::span<const TokenId> ids);

struct AttentionOutput {
  Tensor context;  // [d_mem]
  Tensor weights;  // [n], zero at masked positions
};

/// `memory` is [n x d_mem], one row per memory slot.
AttentionOutput attention_context(Graph& g, const AttentionParams& p, const Tensor& query, const Tensor& memory,
                                  std::span<const std::uint8_t> memory_mask);
AttentionOutput attention_context(Graph& g, const AttentionParams& p, const Tensor& query,
                                  std::span<const Tensor> memory, std::span<const std::uint8_t> memory_mask);

}  // namespace redecode
