#pragma once

#include <vector>

#include "kdiff/denoiser.hpp"
#include "kdiff/text_encoder.hpp"

namespace kdiff {

/// Inclusive range of 1-based timesteps owned by one expert.
struct TimestepBlock {
  int first;
  int last;
  int size() const { return last - first + 1; }
  friend bool operator==(const TimestepBlock&, const TimestepBlock&) = default;
};

/// Block i (0-based) holds { t : ceil(t * n / T) == i + 1 }: consecutive,
/// disjoint, covering 1..T, sizes within one of each other. When T is not a
/// multiple of n the larger blocks sit at high t.
std::vector<TimestepBlock> partition_timesteps(int steps, int experts);

/// 0-based index of the expert owning step t.
int route(int steps, int experts, int t);

/// Denoising experts over a uniform timestep partition with one shared text
/// encoder. Exactly one expert's parameters serve any step.
struct ExpertBank {
  DenoiserConfig denoiser;
  TextEncoderConfig text;
  std::vector<ParamSet> experts;
  ParamSet text_encoder;

  int steps() const { return denoiser.schedule_steps; }
  int size() const { return static_cast<int>(experts.size()); }
  int route(int t) const;
  std::vector<TimestepBlock> blocks() const { return partition_timesteps(steps(), size()); }
  const ParamSet& expert_for_step(int t) const { return experts[route(t)]; }
};

/// Text encoder is drawn from `rng` first, then each expert in order, unless
/// `warm_start` is given, in which case every expert copies it.
ExpertBank init_bank(const DenoiserConfig& denoiser, const TextEncoderConfig& text, int experts, Rng& rng,
                     const ParamSet* warm_start = nullptr);

/// Replicates a single-expert bank into `experts` identical experts.
ExpertBank expand_bank(const ExpertBank& single, int experts);

}  // namespace kdiff
