#pragma once

// Single-decoder VAE loss written with plain loops over the model's raw
// parameter values. Shares no code with the graph-based forward pass apart
// from the random stream that supplies the latent noise.

#include <cmath>
#include <vector>

#include "redecode/model.hpp"

namespace reference {

using Vec = std::vector<double>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec embed(const redecode::ReDecodeModel& m, redecode::TokenId id) {
  const std::size_t d = m.config.embedding_dim;
  Vec out(d, 0.0);
  if (id == redecode::kPadId) return out;
  for (std::size_t k = 0; k < d; ++k) out[k] = m.embedding.at(static_cast<std::size_t>(id), k);
  return out;
}

inline Vec affine(const redecode::Tensor& w, const Vec& x, const redecode::Tensor& b) {
  Vec out(w.dim(0));
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < w.dim(1); ++c) acc += w.at(r, c) * x[c];
    out[r] = acc;
  }
  return out;
}

struct Cell {
  Vec h, c;
};

inline void step(const redecode::LstmCellParams& p, const Vec& x, Cell& s) {
  const std::size_t H = p.hidden_dim();
  Vec z(4 * H);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    double acc = p.bias[r];
    for (std::size_t k = 0; k < x.size(); ++k) acc += p.w_input.at(r, k) * x[k];
    for (std::size_t k = 0; k < H; ++k) acc += p.w_hidden.at(r, k) * s.h[k];
    z[r] = acc;
  }
  for (std::size_t j = 0; j < H; ++j) {
    const double i = sigmoid(z[j]), f = sigmoid(z[H + j]), g = std::tanh(z[2 * H + j]), o = sigmoid(z[3 * H + j]);
    s.c[j] = f * s.c[j] + i * g;
    s.h[j] = o * std::tanh(s.c[j]);
  }
}

inline Vec softmax(const Vec& x) {
  double mx = x[0];
  for (const double v : x) mx = std::max(mx, v);
  Vec out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (out[i] = std::exp(x[i] - mx));
  for (auto& v : out) v /= z;
  return out;
}

struct PairLoss {
  double ce = 0.0;
  double kl = 0.0;
};

/// Loss terms for one pair. `original` and `targets` hold content ids plus
/// EOS. Draws latent_dim normals from `rng`.
inline PairLoss pair_loss(const redecode::ReDecodeModel& m, const std::vector<redecode::TokenId>& original,
                          const std::vector<redecode::TokenId>& targets, redecode::Rng& rng) {
  const auto& cfg = m.config;
  const std::size_t H = cfg.hidden_units, L = cfg.latent_dim;

  Vec eps(L);
  for (auto& e : eps) e = rng.normal();

  Cell s{Vec(H, 0.0), Vec(H, 0.0)};
  for (const auto id : original) step(m.sampler, embed(m, id), s);
  const Vec mu = affine(m.mean_head.weight, s.h, m.mean_head.bias);
  const Vec lv = affine(m.log_var_head.weight, s.h, m.log_var_head.bias);
  PairLoss out;
  Vec z(L);
  for (std::size_t k = 0; k < L; ++k) {
    z[k] = mu[k] + std::exp(0.5 * lv[k]) * eps[k];
    out.kl += 0.5 * (mu[k] * mu[k] + std::exp(lv[k]) - lv[k] - 1.0);
  }

  // Sentence encoder: top-layer states form the memory.
  std::vector<Cell> enc(m.sentence_encoder.layers.size(), Cell{Vec(H, 0.0), Vec(H, 0.0)});
  std::vector<Vec> memory;
  for (const auto id : original) {
    Vec x = embed(m, id);
    for (std::size_t l = 0; l < enc.size(); ++l) {
      step(m.sentence_encoder.layers[l], x, enc[l]);
      x = enc[l].h;
    }
    memory.push_back(x);
  }

  const auto& dec = m.decoders.at(0);
  const bool attend = cfg.attention_mode == redecode::AttentionMode::memory;
  std::vector<Cell> st(dec.lstm.layers.size(), Cell{Vec(H, 0.0), Vec(H, 0.0)});
  redecode::TokenId input = redecode::kSosId;
  double nll = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (t > 0) input = targets[t - 1];
    Vec x = embed(m, input);
    x.insert(x.end(), z.begin(), z.end());
    if (!attend) x.insert(x.end(), memory.back().begin(), memory.back().end());
    for (std::size_t l = 0; l < st.size(); ++l) {
      step(dec.lstm.layers[l], x, st[l]);
      x = st[l].h;
    }
    Vec features = x;
    if (attend) {
      const auto& W = dec.attention->score;
      Vec scores(memory.size());
      for (std::size_t j = 0; j < memory.size(); ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < H; ++a) {
          for (std::size_t b = 0; b < H; ++b) acc += x[a] * W.at(a, b) * memory[j][b];
        }
        scores[j] = acc;
      }
      const Vec weights = softmax(scores);
      Vec context(H, 0.0);
      for (std::size_t j = 0; j < memory.size(); ++j) {
        for (std::size_t b = 0; b < H; ++b) context[b] += weights[j] * memory[j][b];
      }
      features.insert(features.end(), context.begin(), context.end());
    }
    const Vec probs = softmax(affine(dec.projection.weight, features, dec.projection.bias));
    nll -= std::log(std::max(probs[static_cast<std::size_t>(targets[t])], 1e-12));
  }
  out.ce = nll / static_cast<double>(targets.size());
  return out;
}

}  // namespace reference
