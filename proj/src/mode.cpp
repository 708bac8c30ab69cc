#include "kdiff/mode.hpp"

#include <cstdint>

#include "kdiff/error.hpp"

namespace kdiff {
namespace {
void check_counts(int steps, int experts) {
  if (experts < 1 || experts > steps) {
    fail(ErrorKind::InvalidExpertCount,
         "need 1 <= n <= T, got n=" + std::to_string(experts) + " T=" + std::to_string(steps));
  }
}
}  // namespace

int route(int steps, int experts, int t) {
  check_counts(steps, experts);
  if (t < 1 || t > steps) {
    fail(ErrorKind::StepOutOfRange, "step " + std::to_string(t) + " outside 1.." + std::to_string(steps));
  }
  const std::int64_t num = static_cast<std::int64_t>(t) * experts;
  return static_cast<int>((num + steps - 1) / steps) - 1;
}

std::vector<TimestepBlock> partition_timesteps(int steps, int experts) {
  check_counts(steps, experts);
  std::vector<TimestepBlock> blocks;
  blocks.reserve(experts);
  int start = 1;
  for (int t = 1; t <= steps; ++t) {
    const int owner = route(steps, experts, t);
    const bool block_ends = t == steps || route(steps, experts, t + 1) != owner;
    if (block_ends) {
      blocks.push_back({start, t});
      start = t + 1;
    }
  }
  return blocks;
}

int ExpertBank::route(int t) const { return kdiff::route(steps(), size(), t); }

ExpertBank init_bank(const DenoiserConfig& denoiser, const TextEncoderConfig& text, int experts, Rng& rng,
                     const ParamSet* warm_start) {
  if (experts < 1) fail(ErrorKind::InvalidExpertCount, "need at least one expert");
  check_counts(denoiser.schedule_steps, experts);
  ExpertBank bank;
  bank.denoiser = denoiser;
  bank.text = text;
  bank.text_encoder = init_text_encoder(text, rng);
  for (int i = 0; i < experts; ++i) {
    bank.experts.push_back(warm_start ? *warm_start : init_denoiser(denoiser, rng));
  }
  return bank;
}

ExpertBank expand_bank(const ExpertBank& single, int experts) {
  if (single.size() != 1) fail(ErrorKind::InvalidExpertCount, "expand_bank needs a single-expert bank");
  check_counts(single.steps(), experts);
  ExpertBank out = single;
  out.experts.assign(experts, single.experts.front());
  return out;
}

}  // namespace kdiff
