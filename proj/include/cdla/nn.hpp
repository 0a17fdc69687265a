#pragma once

// Layers shared by the ranking models. Each layer reads its parameters from a
// ModelParams store by prefix, so a model is just a naming scheme plus a
// forward function.

#include <span>
#include <string>

#include "cdla/graph.hpp"
#include "cdla/params.hpp"
#include "cdla/rng.hpp"

namespace cdla {

inline void add_linear(ModelParams& p, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  p.add_weight(prefix + ".weight", in, out, rng);
  p.add_filled(prefix + ".bias", 1, out, 0.0);
}

inline Var linear(Graph& g, ModelParams& p, const std::string& prefix, Var x) {
  return add_row(matmul(x, g.parameter(p.at(prefix + ".weight"))), g.parameter(p.at(prefix + ".bias")));
}

inline void add_layer_norm(ModelParams& p, const std::string& prefix, std::size_t width) {
  p.add_filled(prefix + ".gain", 1, width, 1.0);
  p.add_filled(prefix + ".bias", 1, width, 0.0);
}

inline Var layer_norm(Graph& g, ModelParams& p, const std::string& prefix, Var x) {
  return layer_norm(x, g.parameter(p.at(prefix + ".gain")), g.parameter(p.at(prefix + ".bias")));
}

// Scoring head: ELU hidden layers of the given widths, then a linear map to 1.
inline void add_mlp(ModelParams& p, const std::string& prefix, std::size_t in,
                    std::span<const std::size_t> hidden, Rng& rng) {
  std::size_t width = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    add_linear(p, prefix + "." + std::to_string(i), width, hidden[i], rng);
    width = hidden[i];
  }
  add_linear(p, prefix + ".out", width, 1, rng);
}

inline Var mlp(Graph& g, ModelParams& p, const std::string& prefix, std::size_t depth, Var x) {
  for (std::size_t i = 0; i < depth; ++i) x = elu(linear(g, p, prefix + "." + std::to_string(i), x));
  return linear(g, p, prefix + ".out", x);
}

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;

  void validate(std::size_t width) const {
    if (layers < 1 || layers > 4) throw ConfigError("encoder layers must be in 1..4, got " + std::to_string(layers));
    if (heads != 2 && heads != 4 && heads != 8) {
      throw ConfigError("encoder heads must be 2, 4 or 8, got " + std::to_string(heads));
    }
    if (width % heads != 0) {
      throw ConfigError("encoder width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                        " heads");
    }
  }
};

// Pre-norm transformer encoder blocks without positional encoding:
//   h = x + Wo . attention(LN1(x))
//   y = h + W2 . elu(W1 . LN2(h))        (feed-forward width 2d)
inline void add_encoder(ModelParams& p, const std::string& prefix, std::size_t width, const EncoderConfig& cfg,
                        Rng& rng) {
  cfg.validate(width);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = prefix + "." + std::to_string(l);
    add_layer_norm(p, b + ".ln1", width);
    add_linear(p, b + ".query", width, width, rng);
    add_linear(p, b + ".key", width, width, rng);
    add_linear(p, b + ".value", width, width, rng);
    add_linear(p, b + ".attn_out", width, width, rng);
    add_layer_norm(p, b + ".ln2", width);
    add_linear(p, b + ".ffn_in", width, 2 * width, rng);
    add_linear(p, b + ".ffn_out", 2 * width, width, rng);
  }
}

// Context-mixes each row of x with the other rows of its segment.
inline Var attention_encode(Graph& g, ModelParams& p, const std::string& prefix, Var x, const Segments& seg,
                            const EncoderConfig& cfg) {
  cfg.validate(x.cols());
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = prefix + "." + std::to_string(l);
    Var n1 = layer_norm(g, p, b + ".ln1", x);
    Var att = attention(linear(g, p, b + ".query", n1), linear(g, p, b + ".key", n1),
                        linear(g, p, b + ".value", n1), seg, cfg.heads);
    x = add(x, linear(g, p, b + ".attn_out", att));
    Var n2 = layer_norm(g, p, b + ".ln2", x);
    x = add(x, linear(g, p, b + ".ffn_out", elu(linear(g, p, b + ".ffn_in", n2))));
  }
  return x;
}

}  // namespace cdla
