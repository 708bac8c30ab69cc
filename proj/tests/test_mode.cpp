#include <cmath>

#include "helpers.hpp"
#include "kdiff/mode.hpp"
#include "kdiff/sampler.hpp"

using namespace kdiff;
using kdiff::test::expect_error;

namespace {

DenoiserConfig tiny_denoiser(int steps) {
  DenoiserConfig c;
  c.height = 4;
  c.width = 4;
  c.patch = 2;
  c.d_model = 8;
  c.d_text = 8;
  c.layers = 1;
  c.ffn_mult = 2;
  c.schedule_steps = steps;
  c.init_std = 0.3;
  return c;
}

TextEncoderConfig tiny_text() {
  TextEncoderConfig t;
  t.vocab_size = Vocabulary::standard().size();
  t.d_text = 8;
  t.init_std = 0.3;
  return t;
}

}  // namespace

TEST_CASE("partition examples") {
  const auto ten = partition_timesteps(1000, 10);
  REQUIRE(ten.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(ten[i] == TimestepBlock{100 * i + 1, 100 * (i + 1)});
  CHECK(partition_timesteps(1000, 1) == std::vector<TimestepBlock>{{1, 1000}});
  // 7 steps over 3 experts: ceil(3t/7) gives 1,1,2,2,3,3,3.
  CHECK(partition_timesteps(7, 3) == std::vector<TimestepBlock>{{1, 2}, {3, 4}, {5, 7}});
}

TEST_CASE("route examples") {
  CHECK(route(1000, 10, 1) == 0);
  CHECK(route(1000, 10, 100) == 0);
  CHECK(route(1000, 10, 101) == 1);
  CHECK(route(1000, 10, 1000) == 9);
  CHECK(route(1000, 1, 537) == 0);
  CHECK(route(7, 3, 2) == 0);
  CHECK(route(7, 3, 3) == 1);
  CHECK(route(7, 3, 5) == 2);
  expect_error(ErrorKind::StepOutOfRange, [] { route(10, 2, 0); });
  expect_error(ErrorKind::StepOutOfRange, [] { route(10, 2, 11); });
}

TEST_CASE("partitions cover, are contiguous and balanced for every small T and n") {
  for (int T = 1; T <= 60; ++T) {
    for (int n = 1; n <= T; ++n) {
      const auto blocks = partition_timesteps(T, n);
      REQUIRE(blocks.size() == static_cast<std::size_t>(n));
      CHECK(blocks.front().first == 1);
      CHECK(blocks.back().last == T);
      int smallest = T, largest = 0;
      for (int i = 0; i < n; ++i) {
        if (i > 0) CHECK(blocks[i].first == blocks[i - 1].last + 1);
        smallest = std::min(smallest, blocks[i].size());
        largest = std::max(largest, blocks[i].size());
        for (int t = blocks[i].first; t <= blocks[i].last; ++t) {
          // Independent oracle: the expert whose real interval ((i)T/n, (i+1)T/n] holds t.
          const double lo = double(i) * T / n, hi = double(i + 1) * T / n;
          CHECK((t > lo - 1e-9 && t <= hi + 1e-9));
          CHECK(route(T, n, t) == i);
        }
      }
      CHECK(largest - smallest <= 1);
    }
  }
}

TEST_CASE("invalid expert counts") {
  expect_error(ErrorKind::InvalidExpertCount, [] { partition_timesteps(10, 0); });
  expect_error(ErrorKind::InvalidExpertCount, [] { partition_timesteps(10, 11); });
  expect_error(ErrorKind::InvalidExpertCount, [] { route(10, -1, 3); });
  Rng rng(0);
  expect_error(ErrorKind::InvalidExpertCount, [&] { init_bank(tiny_denoiser(4), tiny_text(), 5, rng); });
  expect_error(ErrorKind::InvalidExpertCount, [&] { init_bank(tiny_denoiser(4), tiny_text(), 0, rng); });
}

TEST_CASE("independent experts differ and warm-started experts copy the source bitwise") {
  Rng rng(3);
  const ExpertBank bank = init_bank(tiny_denoiser(10), tiny_text(), 3, rng);
  REQUIRE(bank.size() == 3);
  CHECK_FALSE(bitwise_equal(bank.experts[0], bank.experts[1]));
  for (int t = 1; t <= 10; ++t) CHECK(&bank.expert_for_step(t) == &bank.experts[bank.route(t)]);

  Rng again(3);
  const ExpertBank warm = init_bank(tiny_denoiser(10), tiny_text(), 3, again, &bank.experts[2]);
  for (const auto& e : warm.experts) CHECK(bitwise_equal(e, bank.experts[2]));
  CHECK(bitwise_equal(warm.text_encoder, bank.text_encoder));

  const ExpertBank single = init_bank(tiny_denoiser(10), tiny_text(), 1, rng);
  const ExpertBank expanded = expand_bank(single, 4);
  REQUIRE(expanded.size() == 4);
  for (const auto& e : expanded.experts) CHECK(bitwise_equal(e, single.experts[0]));
  expect_error(ErrorKind::InvalidExpertCount, [&] { expand_bank(expanded, 2); });
}

TEST_CASE("a bank of identical experts samples exactly like a single network") {
  Rng rng(8);
  const ExpertBank single = init_bank(tiny_denoiser(50), tiny_text(), 1, rng);
  const ExpertBank many = expand_bank(single, 5);
  const Vocabulary vocab = Vocabulary::standard();
  const std::vector<int> tokens = tokenize_plain(vocab, {"a", "red", "square"}).tokens;
  const auto schedule = NoiseSchedule::linear(50, 1e-4, 0.02);
  SampleOptions opts;
  opts.seed = 21;
  opts.guidance = 3.0;
  BankPredictor p1(single, tokens), p5(many, tokens);
  CHECK(bitwise_equal(sample_ddim(p1, schedule, 10, opts).image, sample_ddim(p5, schedule, 10, opts).image));
  CHECK(bitwise_equal(sample_ddpm(p1, schedule, opts).image, sample_ddpm(p5, schedule, opts).image));
}

TEST_CASE("each visited step activates exactly its owning expert") {
  Rng rng(9);
  const int T = 1000, n = 10;
  DenoiserConfig d = tiny_denoiser(T);
  const ExpertBank bank = init_bank(d, tiny_text(), n, rng);
  const Vocabulary vocab = Vocabulary::standard();
  BankPredictor pred(bank, tokenize_plain(vocab, {"blue", "circle"}).tokens);
  const auto schedule = NoiseSchedule::linear(T, 1e-4, 0.02);
  SampleOptions opts;
  opts.seed = 4;
  const auto traj = sample_ddim(pred, schedule, 50, opts);
  std::vector<std::size_t> expected(n, 0);
  for (int t : traj.steps) {
    if (t > 0) ++expected[static_cast<std::size_t>(std::ceil(double(t) * n / T)) - 1];
  }
  CHECK(pred.conditional_calls() == expected);
  CHECK(pred.unconditional_calls() == expected);
  std::size_t total = 0;
  for (auto c : expected) total += c;
  CHECK(total == 50);
}
