#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "kdiff/graph.hpp"

namespace kdiff {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Denominator floor in |a - n| / max(|a|, |n|, floor). Keeps entries whose
  /// true gradient is ~0 from turning rounding noise into huge ratios.
  double floor = 1e-4;
  /// Upper bound on probed entries per leaf; 0 probes all of them. Probed
  /// entries are evenly strided, not random.
  std::size_t max_entries_per_leaf = 0;
};

struct LeafCheck {
  Var leaf;
  std::string label;
  std::size_t probed = 0;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<LeafCheck> leaves;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Compares backward() against central differences for every trainable leaf.
/// Leaves the graph evaluated at its original bindings.
GradCheckReport finite_difference_check(Graph& graph, Var root, const GradCheckOptions& options = {});

}  // namespace kdiff
