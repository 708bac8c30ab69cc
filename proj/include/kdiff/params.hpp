#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kdiff/graph.hpp"
#include "kdiff/rng.hpp"
#include "kdiff/tensor.hpp"

namespace kdiff {

/// Named parameter tensors in insertion order. The order is part of the
/// checkpoint format and of every reduction over parameters.
class ParamSet {
 public:
  void add(std::string name, Tensor value);
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  bool contains(std::string_view name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t numel() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::size_t index_of(std::string_view name) const;
  std::vector<std::pair<std::string, Tensor>> entries_;
};

bool bitwise_equal(const ParamSet& a, const ParamSet& b);

/// Graph leaves for a ParamSet, looked up by name.
class BoundParams {
 public:
  BoundParams() = default;
  /// Trainable binding creates parameter leaves; otherwise constants.
  BoundParams(Graph& graph, const ParamSet& params, bool trainable, std::string_view prefix = {});

  Var operator[](std::string_view name) const;
  const std::vector<std::pair<std::string, Var>>& vars() const noexcept { return vars_; }

 private:
  std::vector<std::pair<std::string, Var>> vars_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

Tensor init_normal(const Shape& shape, double stddev, Rng& rng);

/// Sinusoidal features of a scalar position, length `dim` (sin half then cos half).
std::vector<double> sinusoid(double position, std::size_t dim);

/// Graph helpers shared by the text encoder and the denoiser.
namespace nn {
Var linear(Graph& g, Var x, Var weight, Var bias);
Var linear(Graph& g, Var x, Var weight);
Var layer_norm(Graph& g, Var x, Var gain, Var bias);
}  // namespace nn

}  // namespace kdiff
