#pragma once

#include <cstdint>
#include <vector>

#include "kdiff/gradcheck.hpp"
#include "kdiff/trainer.hpp"

namespace kdiff {

/// A model small enough to finite-difference every parameter: 4x4 scenes,
/// 2x2 patches, one block, two experts, knowledge strategies always on.
struct ToyProblem {
  TrainConfig config;
  Vocabulary vocab;
  std::vector<TrainingExample> data;
};

ToyProblem toy_problem(std::uint64_t seed);

/// Builds one batch's training loss on a fresh graph, as a trainer step
/// would, and checks its gradient against central differences.
GradCheckReport check_loss_gradients(const ToyProblem& toy, const GradCheckOptions& options, std::uint64_t draw_seed);

}  // namespace kdiff
