#pragma once

#include <optional>
#include <vector>

#include "kdiff/conditioning.hpp"
#include "kdiff/graph.hpp"
#include "kdiff/params.hpp"

namespace kdiff {

/// How an enabled AttentionScale acts on the attention logits.
enum class ScaleMode {
  Multiplicative,  // logits * W_a, entrywise
  Additive,        // logits + (W_a - 1), i.e. +w_a on the selected entries
};

struct DenoiserConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t patch = 4;
  std::size_t d_model = 128;
  std::size_t d_text = 64;
  std::size_t layers = 4;
  std::size_t ffn_mult = 4;
  int schedule_steps = 1000;
  ScaleMode scale_mode = ScaleMode::Multiplicative;
  double init_std = 0.02;

  std::size_t grid_h() const { return height / patch; }
  std::size_t grid_w() const { return width / patch; }
  std::size_t image_tokens() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  Shape image_shape() const { return {height, width, channels}; }
  void validate() const;
};

/// [h, w, c] image to [n_x, patch*patch*c] tokens, row-major over the patch
/// grid, each token row-major over its patch pixels then channels.
Tensor patchify(const Tensor& image, std::size_t patch);
Tensor unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch);

ParamSet init_denoiser(const DenoiserConfig& config, Rng& rng);

/// Softmax attention of every block, image-token rows over
/// [image ; text] columns. One entry per block.
using AttentionCapture = std::vector<Tensor>;

/// Records the noise-prediction network on `g`. `xt_tokens` is the
/// patchified noisy image [n_x, patch_dim]; `text` is [n_y, d_text] or
/// absent for the unconditional branch. Returns eps_hat in token layout.
/// When `attention` is given, the per-block softmax nodes are appended.
Var predict_noise(Graph& g, const DenoiserConfig& config, const BoundParams& params, Var xt_tokens, int t,
                  std::optional<Var> text, const AttentionScale* scale, std::vector<Var>* attention = nullptr);

struct NoisePrediction {
  Tensor eps;  // image layout [h, w, c]
  std::optional<AttentionCapture> attention;
};

/// Graph-free evaluation over immutable parameters.
NoisePrediction predict_noise(const DenoiserConfig& config, const ParamSet& params, const Tensor& xt, int t,
                              const Tensor* text, const AttentionScale* scale, bool capture);

}  // namespace kdiff
