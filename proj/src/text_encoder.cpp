#include "kdiff/text_encoder.hpp"

#include <cmath>
#include <string>

#include "kdiff/error.hpp"

namespace kdiff {

ParamSet init_text_encoder(const TextEncoderConfig& config, Rng& rng) {
  const std::size_t d = config.d_text;
  const std::size_t f = d * config.ffn_mult;
  const double s = config.init_std;
  ParamSet p;
  p.add("tok_emb", init_normal({config.vocab_size, d}, 1.0, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string b = "l" + std::to_string(l) + ".";
    p.add(b + "ln1.g", Tensor({d}, 1.0));
    p.add(b + "ln1.b", Tensor({d}, 0.0));
    p.add(b + "wq", init_normal({d, d}, s, rng));
    p.add(b + "wk", init_normal({d, d}, s, rng));
    p.add(b + "wv", init_normal({d, d}, s, rng));
    p.add(b + "wo", init_normal({d, d}, s, rng));
    p.add(b + "ln2.g", Tensor({d}, 1.0));
    p.add(b + "ln2.b", Tensor({d}, 0.0));
    p.add(b + "ff1.w", init_normal({d, f}, s, rng));
    p.add(b + "ff1.b", Tensor({f}, 0.0));
    p.add(b + "ff2.w", init_normal({f, d}, s, rng));
    p.add(b + "ff2.b", Tensor({d}, 0.0));
  }
  p.add("ln_f.g", Tensor({d}, 1.0));
  p.add("ln_f.b", Tensor({d}, 0.0));
  return p;
}

Var encode_text(Graph& g, const TextEncoderConfig& config, const BoundParams& p,
                const std::vector<int>& tokens) {
  if (tokens.empty()) fail(ErrorKind::ShapeMismatch, "encode_text needs at least one token");
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size) {
      fail(ErrorKind::VocabularyOverflow, "token id " + std::to_string(t) + " outside vocabulary of " +
                                              std::to_string(config.vocab_size));
    }
  }
  const std::size_t d = config.d_text;
  const std::size_t n = tokens.size();
  Tensor positions({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = sinusoid(static_cast<double>(i), d);
    for (std::size_t j = 0; j < d; ++j) positions.at(i, j) = row[j];
  }
  Var h = g.add(g.gather(p["tok_emb"], tokens), g.constant(std::move(positions), "text_pos"));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string b = "l" + std::to_string(l) + ".";
    Var hn = nn::layer_norm(g, h, p[b + "ln1.g"], p[b + "ln1.b"]);
    Var q = g.matmul(hn, p[b + "wq"]);
    Var k = g.matmul(hn, p[b + "wk"]);
    Var v = g.matmul(hn, p[b + "wv"]);
    Var attn = g.softmax(g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_d));
    h = g.add(h, g.matmul(g.matmul(attn, v), p[b + "wo"]));
    Var hn2 = nn::layer_norm(g, h, p[b + "ln2.g"], p[b + "ln2.b"]);
    Var ff = nn::linear(g, g.silu(nn::linear(g, hn2, p[b + "ff1.w"], p[b + "ff1.b"])), p[b + "ff2.w"],
                        p[b + "ff2.b"]);
    h = g.add(h, ff);
  }
  return nn::layer_norm(g, h, p["ln_f.g"], p["ln_f.b"]);
}

Tensor encode_text(const TextEncoderConfig& config, const ParamSet& params, const std::vector<int>& tokens) {
  Graph g;
  BoundParams bound(g, params, false);
  return g.value(encode_text(g, config, bound, tokens));
}

}  // namespace kdiff
