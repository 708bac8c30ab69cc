#include "kdiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "kdiff/error.hpp"

namespace kdiff {

GradCheckReport finite_difference_check(Graph& graph, Var root, const GradCheckOptions& options) {
  if (!(options.step > 0.0) || !std::isfinite(options.step)) {
    fail(ErrorKind::InvalidStep, "finite-difference step must be positive, got " +
                                     std::to_string(options.step));
  }
  graph.forward();
  const GradientMap analytic = graph.backward(root);

  GradCheckReport report;
  for (const auto& [leaf, grad] : analytic) {
    const Tensor original = graph.value(leaf);
    LeafCheck check{leaf, graph.label(leaf)};
    const std::size_t n = original.numel();
    const std::size_t stride =
        options.max_entries_per_leaf == 0 ? 1 : std::max<std::size_t>(1, n / options.max_entries_per_leaf);
    for (std::size_t i = 0; i < n; i += stride) {
      Tensor probe = original;
      probe[i] = original[i] + options.step;
      graph.forward({{leaf, probe}});
      const double plus = graph.value(root).item();
      probe[i] = original[i] - options.step;
      graph.forward({{leaf, probe}});
      const double minus = graph.value(root).item();
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      check.max_relative_error = std::max(check.max_relative_error, std::abs(a - numeric) / denom);
      ++check.probed;
    }
    graph.forward({{leaf, original}});
    report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
    report.leaves.push_back(std::move(check));
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace kdiff
