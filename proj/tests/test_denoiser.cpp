#include <cmath>

#include "helpers.hpp"
#include "kdiff/denoiser.hpp"
#include "kdiff/gradcheck.hpp"

using namespace kdiff;
using kdiff::test::expect_error;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.height = 4;
  c.width = 4;
  c.patch = 2;
  c.d_model = 8;
  c.d_text = 6;
  c.layers = 2;
  c.ffn_mult = 2;
  c.schedule_steps = 10;
  c.init_std = 0.3;
  return c;
}

}  // namespace

TEST_CASE("patchify layout examples") {
  // 2x2 image, one channel, patch 1: tokens are the pixels in raster order.
  Tensor img({2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor t = patchify(img, 1);
  CHECK(t.shape() == Shape{4, 1});
  for (std::size_t i = 0; i < 4; ++i) CHECK(t[i] == double(i + 1));

  // 4x4x2 image with value 100*r + 10*c + ch, patch 2.
  Tensor big({4, 4, 2});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t ch = 0; ch < 2; ++ch) big[(r * 4 + c) * 2 + ch] = 100.0 * r + 10.0 * c + ch;
  const Tensor p = patchify(big, 2);
  REQUIRE(p.shape() == Shape{4, 8});
  // Token 1 is the top-right patch; its entries run over rows, columns, channels.
  const std::vector<double> expected = {20, 21, 30, 31, 120, 121, 130, 131};
  for (std::size_t j = 0; j < 8; ++j) CHECK(p.at(1, j) == expected[j]);
  CHECK(p.at(2, 0) == 200.0);
}

TEST_CASE("patchify round-trips") {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t patch = 1 + rng.uniform_int(0, 3);
    const std::size_t h = patch * (1 + rng.uniform_int(0, 3)), w = patch * (1 + rng.uniform_int(0, 3));
    const std::size_t c = 1 + rng.uniform_int(0, 2);
    const Tensor img = rng.normal_tensor({h, w, c});
    const Tensor tokens = patchify(img, patch);
    CHECK(tokens.shape() == Shape{(h / patch) * (w / patch), patch * patch * c});
    CHECK(bitwise_equal(unpatchify(tokens, h, w, c, patch), img));
  }
  expect_error(ErrorKind::IndivisibleShape, [] { patchify(Tensor({5, 4, 3}), 2); });
  expect_error(ErrorKind::IndivisibleShape, [] { patchify(Tensor({4, 6, 3}), 4); });
  DenoiserConfig bad = small_config();
  bad.height = 5;
  expect_error(ErrorKind::IndivisibleShape, [&] { bad.validate(); });
}

TEST_CASE("all-ones scale is bitwise equal to no scale") {
  const DenoiserConfig cfg = small_config();
  Rng rng(1);
  const ParamSet params = init_denoiser(cfg, rng);
  const Tensor xt = rng.normal_tensor(cfg.image_shape());
  const Tensor text = rng.normal_tensor({3, cfg.d_text});
  const AttentionScale ones = build_attention_scale(cfg.image_tokens(), {true, false, true}, 0.0, true);
  for (ScaleMode mode : {ScaleMode::Multiplicative, ScaleMode::Additive}) {
    DenoiserConfig c = cfg;
    c.scale_mode = mode;
    const Tensor a = predict_noise(c, params, xt, 5, &text, nullptr, false).eps;
    const Tensor b = predict_noise(c, params, xt, 5, &text, &ones, false).eps;
    CHECK(bitwise_equal(a, b));
  }
  const AttentionScale strong = build_attention_scale(cfg.image_tokens(), {true, false, true}, 0.5, true);
  const Tensor a = predict_noise(cfg, params, xt, 5, &text, nullptr, false).eps;
  CHECK(max_abs_diff(a, predict_noise(cfg, params, xt, 5, &text, &strong, false).eps) > 0.0);
}

TEST_CASE("output shape, determinism and timestep dependence") {
  const DenoiserConfig cfg = small_config();
  Rng rng(2);
  const ParamSet params = init_denoiser(cfg, rng);
  const Tensor xt = rng.normal_tensor(cfg.image_shape());
  const Tensor text = rng.normal_tensor({2, cfg.d_text});
  const auto a = predict_noise(cfg, params, xt, 3, &text, nullptr, false);
  const auto b = predict_noise(cfg, params, xt, 3, &text, nullptr, false);
  CHECK(a.eps.shape() == cfg.image_shape());
  CHECK(bitwise_equal(a.eps, b.eps));
  CHECK_FALSE(a.attention.has_value());
  CHECK(max_abs_diff(a.eps, predict_noise(cfg, params, xt, 4, &text, nullptr, false).eps) > 0.0);
  expect_error(ErrorKind::StepOutOfRange, [&] { predict_noise(cfg, params, xt, 0, &text, nullptr, false); });
  expect_error(ErrorKind::StepOutOfRange, [&] { predict_noise(cfg, params, xt, 11, &text, nullptr, false); });
  expect_error(ErrorKind::ShapeMismatch, [&] { predict_noise(cfg, params, Tensor({4, 4, 2}), 1, &text, nullptr, false); });
  const Tensor wrong_text({2, cfg.d_text + 1});
  expect_error(ErrorKind::ShapeMismatch, [&] { predict_noise(cfg, params, xt, 1, &wrong_text, nullptr, false); });
  const AttentionScale wrong_scale = build_attention_scale(cfg.image_tokens(), {true}, 0.1, true);
  expect_error(ErrorKind::ShapeMismatch, [&] { predict_noise(cfg, params, xt, 1, &text, &wrong_scale, false); });
}

TEST_CASE("captured attention rows are stochastic over image and text columns") {
  const DenoiserConfig cfg = small_config();
  Rng rng(3);
  const ParamSet params = init_denoiser(cfg, rng);
  const Tensor xt = rng.normal_tensor(cfg.image_shape());
  const Tensor text = rng.normal_tensor({5, cfg.d_text});
  const auto scale = build_attention_scale(cfg.image_tokens(), {true, false, true, true, false}, 0.3, true);
  const auto out = predict_noise(cfg, params, xt, 7, &text, &scale, true);
  REQUIRE(out.attention.has_value());
  REQUIRE(out.attention->size() == cfg.layers);
  for (const Tensor& a : *out.attention) {
    REQUIRE(a.shape() == Shape{cfg.image_tokens(), cfg.image_tokens() + 5});
    for (std::size_t i = 0; i < a.dim(0); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < a.dim(1); ++j) {
        CHECK(a.at(i, j) >= 0.0);
        sum += a.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
  // Unconditional: attention covers the image tokens only.
  const auto unc = predict_noise(cfg, params, xt, 7, nullptr, nullptr, true);
  CHECK((*unc.attention)[0].shape() == Shape{cfg.image_tokens(), cfg.image_tokens()});
}

TEST_CASE("text changes the prediction and the unconditional path ignores text weights") {
  const DenoiserConfig cfg = small_config();
  Rng rng(5);
  ParamSet params = init_denoiser(cfg, rng);
  const Tensor xt = rng.normal_tensor(cfg.image_shape());
  const Tensor t1 = rng.normal_tensor({2, cfg.d_text}), t2 = rng.normal_tensor({2, cfg.d_text});
  const Tensor a = predict_noise(cfg, params, xt, 2, &t1, nullptr, false).eps;
  CHECK(max_abs_diff(a, predict_noise(cfg, params, xt, 2, &t2, nullptr, false).eps) > 1e-9);
  const Tensor u = predict_noise(cfg, params, xt, 2, nullptr, nullptr, false).eps;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (const char* name : {"wky", "wvy"}) {
      for (double& v : params.get("blk" + std::to_string(l) + "." + name).data()) v = 0.0;
    }
  }
  CHECK(bitwise_equal(u, predict_noise(cfg, params, xt, 2, nullptr, nullptr, false).eps));
  // With the text key and value projections zeroed, text still takes
  // attention mass but carries no content, so the output moves.
  CHECK(max_abs_diff(u, predict_noise(cfg, params, xt, 2, &t1, nullptr, false).eps) > 0.0);
}

TEST_CASE("graph and graph-free evaluations agree bitwise") {
  const DenoiserConfig cfg = small_config();
  Rng rng(6);
  const ParamSet params = init_denoiser(cfg, rng);
  const Tensor xt = rng.normal_tensor(cfg.image_shape());
  const Tensor text = rng.normal_tensor({3, cfg.d_text});
  const auto scale = build_attention_scale(cfg.image_tokens(), {true, true, false}, 0.2, true);
  Graph g;
  BoundParams bound(g, params, true);
  Var x = g.constant(patchify(xt, cfg.patch));
  Var tv = g.constant(text);
  std::vector<Var> attn;
  Var eps = predict_noise(g, cfg, bound, x, 9, tv, &scale, &attn);
  const Tensor graph_eps = unpatchify(g.value(eps), cfg.height, cfg.width, cfg.channels, cfg.patch);
  const auto free = predict_noise(cfg, params, xt, 9, &text, &scale, true);
  CHECK(bitwise_equal(graph_eps, free.eps));
  REQUIRE(attn.size() == free.attention->size());
  for (std::size_t i = 0; i < attn.size(); ++i) CHECK(bitwise_equal(g.value(attn[i]), (*free.attention)[i]));
}

TEST_CASE("denoiser gradients pass finite differences") {
  for (ScaleMode mode : {ScaleMode::Multiplicative, ScaleMode::Additive}) {
    DenoiserConfig cfg = small_config();
    cfg.scale_mode = mode;
    Rng rng(11);
    const ParamSet params = init_denoiser(cfg, rng);
    Graph g;
    BoundParams bound(g, params, true);
    Var x = g.constant(patchify(rng.normal_tensor(cfg.image_shape()), cfg.patch));
    Var text = g.parameter(rng.normal_tensor({3, cfg.d_text}), "text");
    const auto scale = build_attention_scale(cfg.image_tokens(), {true, false, true}, 0.25, true);
    Var eps = predict_noise(g, cfg, bound, x, 4, text, &scale);
    Var target = g.constant(rng.normal_tensor(g.value(eps).shape()));
    Var root = g.mean(g.square(g.sub(eps, target)));
    const GradCheckReport r = finite_difference_check(g, root);
    CHECK(r.passed);
    CHECK(r.max_relative_error < 1e-5);
    CHECK(r.leaves.size() == params.size() + 1);
  }
}
