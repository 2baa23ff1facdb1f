#include <cmath>

#include "doctest.h"
#include "redecode/error.hpp"
#include "redecode/layers.hpp"

using namespace redecode;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain-loop LSTM cell, gates stacked as input, forget, candidate, output.
void reference_cell(const LstmCellParams& p, const std::vector<double>& x, std::vector<double>& h,
                    std::vector<double>& c) {
  const std::size_t H = p.hidden_dim();
  const std::size_t D = p.input_dim();
  std::vector<double> z(4 * H);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    double acc = p.bias[r];
    for (std::size_t k = 0; k < D; ++k) acc += p.w_input.at(r, k) * x[k];
    for (std::size_t k = 0; k < H; ++k) acc += p.w_hidden.at(r, k) * h[k];
    z[r] = acc;
  }
  for (std::size_t j = 0; j < H; ++j) {
    const double i = sig(z[j]);
    const double f = sig(z[H + j]);
    const double g = std::tanh(z[2 * H + j]);
    const double o = sig(z[3 * H + j]);
    c[j] = f * c[j] + i * g;
    h[j] = o * std::tanh(c[j]);
  }
}

}  // namespace

TEST_CASE("lstm cell parameters start with a unit forget bias") {
  Rng rng(1);
  const auto p = LstmCellParams::create(3, 4, rng);
  CHECK(p.w_input.shape() == Shape{16, 3});
  CHECK(p.w_hidden.shape() == Shape{16, 4});
  for (std::size_t j = 0; j < 16; ++j) CHECK(p.bias[j] == (j >= 4 && j < 8 ? 1.0 : 0.0));
  p.validate();
}

TEST_CASE("stacked lstm agrees with a plain-loop reference over a sequence") {
  Rng rng(2);
  const auto p = StackedLstmParams::create(3, 5, 2, rng);
  std::vector<Tensor> inputs;
  for (int t = 0; t < 4; ++t) inputs.push_back(Tensor::vector({rng.normal(), rng.normal(), rng.normal()}));

  Graph g;
  const auto out = stacked_lstm_forward(g, p, inputs);

  std::vector<std::vector<double>> h(2, std::vector<double>(5, 0.0)), c = h;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    reference_cell(p.layers[0], inputs[t].to_vector(), h[0], c[0]);
    reference_cell(p.layers[1], h[0], h[1], c[1]);
    for (std::size_t j = 0; j < 5; ++j) CHECK(out.top_hidden[t][j] == doctest::Approx(h[1][j]).epsilon(1e-13));
  }
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(out.final_states[l].h[j] == doctest::Approx(h[l][j]).epsilon(1e-13));
      CHECK(out.final_states[l].c[j] == doctest::Approx(c[l][j]).epsilon(1e-13));
    }
  }
}

TEST_CASE("stacked lstm gradient check") {
  Rng rng(3);
  const auto p = StackedLstmParams::create(2, 3, 2, rng);
  std::vector<Tensor> inputs{Tensor::vector({0.4, -0.3}), Tensor::vector({-1.0, 0.2}), Tensor::vector({0.1, 0.9})};
  std::vector<Tensor> checked{p.layers[0].w_input, p.layers[0].w_hidden, p.layers[0].bias,
                              p.layers[1].w_input, p.layers[1].w_hidden, p.layers[1].bias, inputs[0]};
  const auto report = finite_diff_check(
      [&](Graph& g) {
        const auto out = stacked_lstm_forward(g, p, inputs);
        return sum(g, add(g, out.top_hidden.back(), out.final_states[0].c));
      },
      checked, 1e-6);
  CHECK(report.max_error < 1e-7);
}

TEST_CASE("dimension mismatches are shape errors") {
  Rng rng(4);
  const auto p = LstmCellParams::create(3, 4, rng);
  Graph g;
  CHECK_THROWS_AS(lstm_cell_step(g, p, Tensor({2}), zero_state(4)), ShapeError);
  auto bad = p;
  bad.bias = Tensor({15});
  CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("embedding lookup copies rows and zeroes padding") {
  const Tensor table = Tensor::matrix(3, 2, {9, 9, 1, 2, 3, 4});
  const std::vector<TokenId> ids{2, 0, 1};
  const auto rows = embedding_lookup(table, ids);
  CHECK(rows[0].to_vector() == std::vector<double>{3, 4});
  CHECK(rows[1].to_vector() == std::vector<double>{0, 0});
  CHECK(rows[2].to_vector() == std::vector<double>{1, 2});
  CHECK_FALSE(rows[0].requires_grad());
  const std::vector<TokenId> out_of_range{3};
  CHECK_THROWS(embedding_lookup(table, out_of_range));
}

TEST_CASE("attention matches bilinear scores and ignores masked slots") {
  Rng rng(5);
  const auto p = AttentionParams::create(3, 2, rng);
  const Tensor query = Tensor::vector({0.5, -1.0, 0.25});
  const Tensor memory = Tensor::matrix(3, 2, {1, 0, 0, 1, 100, 100});
  const std::vector<std::uint8_t> mask{1, 1, 0};
  Graph g;
  const auto out = attention_context(g, p, query, memory, mask);

  std::vector<double> scores(2);
  for (std::size_t j = 0; j < 2; ++j) {
    double s = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 2; ++b) s += query[a] * p.score.at(a, b) * memory.at(j, b);
    }
    scores[j] = s;
  }
  const double z = std::exp(scores[0]) + std::exp(scores[1]);
  CHECK(out.weights[0] == doctest::Approx(std::exp(scores[0]) / z).epsilon(1e-13));
  CHECK(out.weights[2] == 0.0);
  CHECK(out.context[0] == doctest::Approx(out.weights[0]).epsilon(1e-13));
  CHECK(out.context[1] == doctest::Approx(out.weights[1]).epsilon(1e-13));
}

TEST_CASE("attention over a row list gives the same result as over a matrix") {
  Rng rng(6);
  const auto p = AttentionParams::create(2, 3, rng);
  const Tensor query = Tensor::vector({0.2, 0.7});
  const std::vector<Tensor> rows{Tensor::vector({1, 2, 3}), Tensor::vector({-1, 0, 1})};
  const std::vector<std::uint8_t> mask{1, 1};
  Graph g;
  const auto a = attention_context(g, p, query, rows, mask);
  const auto b = attention_context(g, p, query, stack_rows(g, rows), mask);
  CHECK(a.context.to_vector() == b.context.to_vector());
}

TEST_CASE("attention gradient check") {
  Rng rng(7);
  const auto p = AttentionParams::create(3, 4, rng);
  Tensor query = Tensor::vector({0.3, -0.2, 0.8});
  Tensor memory = Tensor::matrix(3, 4, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8, -0.9, 1.0, 0.0, 0.2});
  const std::vector<std::uint8_t> mask{1, 0, 1};
  std::vector<Tensor> checked{p.score, query, memory};
  const auto report = finite_diff_check(
      [&](Graph& g) { return sum(g, tanh(g, attention_context(g, p, query, memory, mask).context)); }, checked,
      1e-6);
  CHECK(report.max_error < 1e-7);
}
