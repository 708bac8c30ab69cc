#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kdiff/rng.hpp"
#include "kdiff/tensor.hpp"

namespace kdiff {

/// Handle to a node in a Graph. Only meaningful for the graph that made it.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
  friend bool operator==(Var a, Var b) noexcept { return a.id == b.id; }
  friend bool operator<(Var a, Var b) noexcept { return a.id < b.id; }
};

enum class Op : std::uint8_t {
  Constant,
  Parameter,
  Add,
  Sub,
  Mul,
  MatMul,
  Concat,
  Reshape,
  Transpose,
  Softmax,
  LayerNorm,
  Silu,
  Gather,
  Scale,
  Mean,
  Sum,
  Square,
};

std::string_view op_name(Op op);

using Bindings = std::vector<std::pair<Var, Tensor>>;
using GradientMap = std::map<Var, Tensor>;

/// Tape of primitive applications with reverse-mode differentiation.
///
/// Nodes are evaluated eagerly as they are recorded, so the node list is
/// always in topological order. forward() re-evaluates the whole tape, with
/// optional new leaf values, which is what finite-difference checks use.
/// Any primitive producing a non-finite value throws NonFinite naming the
/// node; shape errors throw ShapeMismatch naming the node being recorded.
///
/// Add and Mul accept a right operand that is either the same shape as the
/// left or a row vector matching its last axis (broadcast across rows).
class Graph {
 public:
  explicit Graph(std::uint64_t seed = 0) : rng_(seed) {}

  Var constant(Tensor value, std::string label = {});
  Var parameter(Tensor value, std::string label = {});
  /// Constant 0/1 mask drawn from the graph's seeded RNG.
  Var bernoulli_mask(const Shape& shape, double keep_prob);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var concat(std::span<const Var> parts, std::size_t axis);
  Var reshape(Var a, Shape shape);
  Var transpose(Var a);
  Var softmax(Var a);
  Var layer_norm(Var a, double eps = 1e-5);
  Var silu(Var a);
  Var gather(Var table, std::vector<int> ids);
  Var scale(Var a, double s);
  Var mean(Var a);
  Var sum(Var a);
  Var square(Var a);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  Op op(Var v) const { return node(v).op; }
  const std::string& label(Var v) const { return node(v).label; }

  /// Re-evaluates every node in order after rebinding the given leaves.
  void forward(const Bindings& bindings = {});
  /// Gradients of a scalar root with respect to every trainable leaf.
  GradientMap backward(Var root);
  /// Drops activations and gradients; leaf values are kept.
  void reset();

  std::vector<Var> parameters() const;
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t last_backward_visits() const noexcept { return backward_visits_; }

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    double scalar = 0.0;
    std::size_t axis = 0;
    Shape shape;
    std::vector<int> ids;
    std::vector<double> aux;
    std::string label;
  };

  const Node& node(Var v) const;
  Var record(Node n);
  void evaluate(std::uint32_t id);
  void propagate(std::uint32_t id);
  Tensor& grad_slot(std::uint32_t id);
  [[noreturn]] void shape_error(std::string_view what) const;

  std::vector<Node> nodes_;
  Rng rng_;
  bool evaluated_ = true;
  std::size_t backward_visits_ = 0;
};

}  // namespace kdiff
