#pragma once

#include <vector>

#include "kdiff/conditioning.hpp"
#include "kdiff/graph.hpp"
#include "kdiff/params.hpp"

namespace kdiff {

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_text = 64;
  std::size_t layers = 1;
  std::size_t ffn_mult = 2;
  double init_std = 0.02;
};

ParamSet init_text_encoder(const TextEncoderConfig& config, Rng& rng);

/// Token embedding plus sinusoidal positions, `layers` pre-norm
/// self-attention blocks, final layer norm. Returns [n_y, d_text].
Var encode_text(Graph& g, const TextEncoderConfig& config, const BoundParams& params,
                const std::vector<int>& tokens);

/// Graph-free convenience wrapper; `tokens` must be nonempty.
Tensor encode_text(const TextEncoderConfig& config, const ParamSet& params, const std::vector<int>& tokens);

}  // namespace kdiff
