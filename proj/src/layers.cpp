#include "redecode/layers.hpp"

#include <algorithm>

#include "redecode/error.hpp"

namespace redecode {

LstmCellParams LstmCellParams::create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng, double forget_bias) {
  if (input_dim == 0 || hidden_dim == 0) throw ShapeError("LSTM dimensions must be positive");
  LstmCellParams p;
  p.w_input = xavier_init({4 * hidden_dim, input_dim}, rng).set_requires_grad(true);
  p.w_hidden = xavier_init({4 * hidden_dim, hidden_dim}, rng).set_requires_grad(true);
  std::vector<double> bias(4 * hidden_dim, 0.0);
  std::fill(bias.begin() + static_cast<std::ptrdiff_t>(hidden_dim),
            bias.begin() + static_cast<std::ptrdiff_t>(2 * hidden_dim), forget_bias);
  p.bias = Tensor::vector(std::move(bias)).set_requires_grad(true);
  return p;
}

void LstmCellParams::validate() const {
  if (w_input.rank() != 2 || w_hidden.rank() != 2 || bias.rank() != 1) {
    throw ShapeError("LSTM parameters must be two matrices and a vector");
  }
  const std::size_t h = w_hidden.dim(1);
  if (w_hidden.dim(0) != 4 * h || w_input.dim(0) != 4 * h || bias.dim(0) != 4 * h) {
    throw ShapeError("LSTM gate blocks inconsistent: w_input " + shape_string(w_input.shape()) + ", w_hidden " +
                     shape_string(w_hidden.shape()) + ", bias " + shape_string(bias.shape()));
  }
}

LstmState zero_state(std::size_t hidden_dim) { return {Tensor({hidden_dim}), Tensor({hidden_dim})}; }

StackedLstmParams StackedLstmParams::create(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_layers,
                                            Rng& rng, double forget_bias) {
  if (num_layers == 0) throw ShapeError("stacked LSTM needs at least one layer");
  StackedLstmParams p;
  for (std::size_t l = 0; l < num_layers; ++l) {
    p.layers.push_back(LstmCellParams::create(l == 0 ? input_dim : hidden_dim, hidden_dim, rng, forget_bias));
  }
  return p;
}

void StackedLstmParams::validate() const {
  if (layers.empty()) throw ShapeError("stacked LSTM has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (l > 0 && layers[l].input_dim() != layers[l - 1].hidden_dim()) {
      throw ShapeError("layer " + std::to_string(l) + " input dim " + std::to_string(layers[l].input_dim()) +
                       " != previous hidden dim " + std::to_string(layers[l - 1].hidden_dim()));
    }
  }
}

DenseParams DenseParams::create(std::size_t input_dim, std::size_t output_dim, Rng& rng) {
  DenseParams p;
  p.weight = xavier_init({output_dim, input_dim}, rng).set_requires_grad(true);
  p.bias = Tensor({output_dim}).set_requires_grad(true);
  return p;
}

AttentionParams AttentionParams::create(std::size_t query_dim, std::size_t memory_dim, Rng& rng) {
  return {xavier_init({query_dim, memory_dim}, rng).set_requires_grad(true)};
}

LstmState lstm_cell_step(Graph& g, const LstmCellParams& p, const Tensor& x, const LstmState& prev) {
  const std::size_t h = p.hidden_dim();
  if (x.rank() != 1 || x.dim(0) != p.input_dim()) {
    throw ShapeError("lstm_cell_step: input " + shape_string(x.shape()) + " but cell expects [" +
                     std::to_string(p.input_dim()) + "]");
  }
  if (prev.h.shape() != Shape{h} || prev.c.shape() != Shape{h}) {
    throw ShapeError("lstm_cell_step: state " + shape_string(prev.h.shape()) + "/" + shape_string(prev.c.shape()) +
                     " but cell hidden size is " + std::to_string(h));
  }
  const Tensor gates = add(g, affine(g, p.w_input, x, p.bias), matvec(g, p.w_hidden, prev.h));
  const Tensor in_gate = sigmoid(g, slice(g, gates, 0, h));
  const Tensor forget_gate = sigmoid(g, slice(g, gates, h, h));
  const Tensor candidate = tanh(g, slice(g, gates, 2 * h, h));
  const Tensor out_gate = sigmoid(g, slice(g, gates, 3 * h, h));
  Tensor c = add(g, mul(g, forget_gate, prev.c), mul(g, in_gate, candidate));
  Tensor hidden = mul(g, out_gate, tanh(g, c));
  return {std::move(hidden), std::move(c)};
}

Tensor stacked_lstm_step(Graph& g, const StackedLstmParams& p, const Tensor& x, std::vector<LstmState>& states) {
  if (states.size() != p.layers.size()) {
    throw ShapeError("stacked_lstm_step: " + std::to_string(states.size()) + " states for " +
                     std::to_string(p.layers.size()) + " layers");
  }
  Tensor input = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    states[l] = lstm_cell_step(g, p.layers[l], input, states[l]);
    input = states[l].h;
  }
  return input;
}

StackedLstmOutput stacked_lstm_forward(Graph& g, const StackedLstmParams& p, std::span<const Tensor> inputs,
                                       std::span<const LstmState> initial) {
  if (inputs.empty()) throw ContractError("stacked_lstm_forward: empty input sequence");
  StackedLstmOutput out;
  if (initial.empty()) {
    for (const auto& layer : p.layers) out.final_states.push_back(zero_state(layer.hidden_dim()));
  } else {
    out.final_states.assign(initial.begin(), initial.end());
  }
  out.top_hidden.reserve(inputs.size());
  for (const auto& x : inputs) out.top_hidden.push_back(stacked_lstm_step(g, p, x, out.final_states));
  return out;
}

Tensor dense_forward(Graph& g, const DenseParams& p, const Tensor& x) { return affine(g, p.weight, x, p.bias); }

std::vector<Tensor> embedding_lookup(const Tensor& table, std::span<const TokenId> ids) {
  if (table.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_string(table.shape()));
  const std::size_t vocab = table.dim(0), dim = table.dim(1);
  const auto tv = table.values();
  std::vector<Tensor> out;
  out.reserve(ids.size());
  for (const TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ContractError("embedding_lookup: id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
    if (id == 0) {
      out.emplace_back(Shape{dim});
      continue;
    }
    const auto begin = tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(id) * dim);
    out.push_back(Tensor::vector(std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(dim))));
  }
  return out;
}

AttentionOutput attention_context(Graph& g, const AttentionParams& p, const Tensor& query, const Tensor& memory,
                                  std::span<const std::uint8_t> memory_mask) {
  if (memory.rank() != 2 || memory.dim(1) != p.memory_dim()) {
    throw ShapeError("attention: memory " + shape_string(memory.shape()) + " does not match score matrix " +
                     shape_string(p.score.shape()));
  }
  if (query.rank() != 1 || query.dim(0) != p.query_dim()) {
    throw ShapeError("attention: query " + shape_string(query.shape()) + " does not match score matrix " +
                     shape_string(p.score.shape()));
  }
  const Tensor projected = vecmat(g, query, p.score);   // [d_mem]
  const Tensor scores = matvec(g, memory, projected);   // [n]
  Tensor weights = masked_softmax(g, scores, memory_mask);
  Tensor context = vecmat(g, weights, memory);
  return {std::move(context), std::move(weights)};
}

AttentionOutput attention_context(Graph& g, const AttentionParams& p, const Tensor& query,
                                  std::span<const Tensor> memory, std::span<const std::uint8_t> memory_mask) {
  if (memory.empty()) throw ContractError("attention: empty memory");
  return attention_context(g, p, query, stack_rows(g, memory), memory_mask);
}

}  // namespace redecode
