#include "kdiff/denoiser.hpp"

#include <cmath>
#include <string>

#include "kdiff/error.hpp"

namespace kdiff {

void DenoiserConfig::validate() const {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    fail(ErrorKind::IndivisibleShape, "patch " + std::to_string(patch) + " does not divide " +
                                          std::to_string(height) + "x" + std::to_string(width));
  }
  if (channels == 0 || d_model == 0 || d_text == 0 || layers == 0 || ffn_mult == 0 || schedule_steps < 1) {
    fail(ErrorKind::ConfigError, "denoiser dimensions must be positive");
  }
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3) fail(ErrorKind::ShapeMismatch, "patchify expects [h, w, c]");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    fail(ErrorKind::IndivisibleShape, "patch " + std::to_string(patch) + " does not divide " +
                                          std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t gh = h / patch, gw = w / patch, pd = patch * patch * c;
  Tensor out({gh * gw, pd});
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const std::size_t token = gy * gw + gx;
      for (std::size_t py = 0; py < patch; ++py) {
        for (std::size_t px = 0; px < patch; ++px) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t y = gy * patch + py, x = gx * patch + px;
            out[token * pd + (py * patch + px) * c + ch] = image[(y * w + x) * c + ch];
          }
        }
      }
    }
  }
  return out;
}

Tensor unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    fail(ErrorKind::IndivisibleShape, "patch " + std::to_string(patch) + " does not divide " +
                                          std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t gh = height / patch, gw = width / patch, pd = patch * patch * channels;
  if (tokens.rank() != 2 || tokens.dim(0) != gh * gw || tokens.dim(1) != pd) {
    fail(ErrorKind::ShapeMismatch, "unpatchify got " + shape_string(tokens.shape()));
  }
  Tensor out({height, width, channels});
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const std::size_t token = gy * gw + gx;
      for (std::size_t py = 0; py < patch; ++py) {
        for (std::size_t px = 0; px < patch; ++px) {
          for (std::size_t ch = 0; ch < channels; ++ch) {
            const std::size_t y = gy * patch + py, x = gx * patch + px;
            out[(y * width + x) * channels + ch] = tokens[token * pd + (py * patch + px) * channels + ch];
          }
        }
      }
    }
  }
  return out;
}

ParamSet init_denoiser(const DenoiserConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.d_model;
  const std::size_t dy = config.d_text;
  const std::size_t f = d * config.ffn_mult;
  const std::size_t pd = config.patch_dim();
  const double s = config.init_std;
  ParamSet p;
  p.add("patch.w", init_normal({pd, d}, s, rng));
  p.add("patch.b", Tensor({d}, 0.0));
  p.add("pos", init_normal({config.image_tokens(), d}, s, rng));
  p.add("time.w1", init_normal({d, d}, s, rng));
  p.add("time.b1", Tensor({d}, 0.0));
  p.add("time.w2", init_normal({d, d}, s, rng));
  p.add("time.b2", Tensor({d}, 0.0));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string b = "blk" + std::to_string(l) + ".";
    p.add(b + "ln1.g", Tensor({d}, 1.0));
    p.add(b + "ln1.b", Tensor({d}, 0.0));
    p.add(b + "wq", init_normal({d, d}, s, rng));
    p.add(b + "wkx", init_normal({d, d}, s, rng));
    p.add(b + "wky", init_normal({dy, d}, s, rng));
    p.add(b + "wvx", init_normal({d, d}, s, rng));
    p.add(b + "wvy", init_normal({dy, d}, s, rng));
    p.add(b + "wo", init_normal({d, d}, s, rng));
    p.add(b + "bo", Tensor({d}, 0.0));
    p.add(b + "ln2.g", Tensor({d}, 1.0));
    p.add(b + "ln2.b", Tensor({d}, 0.0));
    p.add(b + "ff1.w", init_normal({d, f}, s, rng));
    p.add(b + "ff1.b", Tensor({f}, 0.0));
    p.add(b + "ff2.w", init_normal({f, d}, s, rng));
    p.add(b + "ff2.b", Tensor({d}, 0.0));
  }
  p.add("out.w", init_normal({d, pd}, s, rng));
  p.add("out.b", Tensor({pd}, 0.0));
  return p;
}

Var predict_noise(Graph& g, const DenoiserConfig& config, const BoundParams& p, Var xt_tokens, int t,
                  std::optional<Var> text, const AttentionScale* scale, std::vector<Var>* attention) {
  if (t < 1 || t > config.schedule_steps) {
    fail(ErrorKind::StepOutOfRange,
         "step " + std::to_string(t) + " outside 1.." + std::to_string(config.schedule_steps));
  }
  const std::size_t n_x = config.image_tokens();
  const std::size_t d = config.d_model;
  const auto& xs = g.value(xt_tokens).shape();
  if (xs.size() != 2 || xs[0] != n_x || xs[1] != config.patch_dim()) {
    fail(ErrorKind::ShapeMismatch, "noisy tokens " + shape_string(xs) + ", expected [" +
                                       std::to_string(n_x) + "x" + std::to_string(config.patch_dim()) + "]");
  }
  std::size_t n_y = 0;
  if (text) {
    const auto& ts = g.value(*text).shape();
    if (ts.size() != 2 || ts[1] != config.d_text) {
      fail(ErrorKind::ShapeMismatch, "text features " + shape_string(ts));
    }
    n_y = ts[0];
  }
  const bool scaled = scale != nullptr && scale->enabled;
  if (scaled && (scale->matrix.dim(0) != n_x || scale->matrix.dim(1) != n_x + n_y)) {
    fail(ErrorKind::ShapeMismatch, "attention scale " + shape_string(scale->matrix.shape()) + " for " +
                                       std::to_string(n_x) + " image and " + std::to_string(n_y) +
                                       " text tokens");
  }

  Var h = nn::linear(g, xt_tokens, p["patch.w"], p["patch.b"]);
  h = g.add(h, p["pos"]);
  const auto freq = sinusoid(static_cast<double>(t), d);
  Var temb = g.constant(Tensor({1, d}, freq), "t_sinusoid");
  temb = nn::linear(g, g.silu(nn::linear(g, temb, p["time.w1"], p["time.b1"])), p["time.w2"], p["time.b2"]);
  h = g.add(h, temb);

  std::optional<Var> logit_weight;
  if (scaled) {
    if (config.scale_mode == ScaleMode::Multiplicative) {
      logit_weight = g.constant(scale->matrix, "W_a");
    } else {
      Tensor bias = scale->matrix;
      for (auto& v : bias.data()) v -= 1.0;
      logit_weight = g.constant(std::move(bias), "W_a_bias");
    }
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string b = "blk" + std::to_string(l) + ".";
    Var hn = nn::layer_norm(g, h, p[b + "ln1.g"], p[b + "ln1.b"]);
    Var q = g.matmul(hn, p[b + "wq"]);
    Var k = g.matmul(hn, p[b + "wkx"]);
    Var v = g.matmul(hn, p[b + "wvx"]);
    if (text) {
      const Var ks[] = {k, g.matmul(*text, p[b + "wky"])};
      const Var vs[] = {v, g.matmul(*text, p[b + "wvy"])};
      k = g.concat(ks, 0);
      v = g.concat(vs, 0);
    }
    Var logits = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_d);
    if (logit_weight) {
      logits = config.scale_mode == ScaleMode::Multiplicative ? g.mul(logits, *logit_weight)
                                                              : g.add(logits, *logit_weight);
    }
    Var probs = g.softmax(logits);
    if (attention) attention->push_back(probs);
    h = g.add(h, nn::linear(g, g.matmul(probs, v), p[b + "wo"], p[b + "bo"]));
    Var hn2 = nn::layer_norm(g, h, p[b + "ln2.g"], p[b + "ln2.b"]);
    Var ff = nn::linear(g, g.silu(nn::linear(g, hn2, p[b + "ff1.w"], p[b + "ff1.b"])), p[b + "ff2.w"],
                        p[b + "ff2.b"]);
    h = g.add(h, ff);
  }
  // No final norm: it would bound |eps_hat|, and near t = T the target is
  // eps ~ x_t, which is unbounded. The residual stream carries x_t linearly.
  return nn::linear(g, h, p["out.w"], p["out.b"]);
}

NoisePrediction predict_noise(const DenoiserConfig& config, const ParamSet& params, const Tensor& xt, int t,
                              const Tensor* text, const AttentionScale* scale, bool capture) {
  if (xt.shape() != config.image_shape()) {
    fail(ErrorKind::ShapeMismatch, "image " + shape_string(xt.shape()) + ", expected " +
                                       shape_string(config.image_shape()));
  }
  Graph g;
  BoundParams bound(g, params, false);
  Var x = g.constant(patchify(xt, config.patch), "xt");
  std::optional<Var> text_var;
  if (text) text_var = g.constant(*text, "text");
  std::vector<Var> attn;
  Var eps = predict_noise(g, config, bound, x, t, text_var, scale, capture ? &attn : nullptr);
  NoisePrediction out;
  out.eps = unpatchify(g.value(eps), config.height, config.width, config.channels, config.patch);
  if (capture) {
    AttentionCapture maps;
    for (Var a : attn) maps.push_back(g.value(a));
    out.attention = std::move(maps);
  }
  return out;
}

}  // namespace kdiff
