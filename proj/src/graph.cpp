#include "kdiff/graph.hpp"

#include <cmath>

#include "kdiff/error.hpp"
#include "kdiff/kernels.hpp"

namespace kdiff {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Concat: return "concat";
    case Op::Reshape: return "reshape";
    case Op::Transpose: return "transpose";
    case Op::Softmax: return "softmax";
    case Op::LayerNorm: return "layer_norm";
    case Op::Silu: return "silu";
    case Op::Gather: return "gather";
    case Op::Scale: return "scale";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::Square: return "square";
  }
  return "?";
}

namespace {

enum class Broadcast { Same, Row };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  const bool row = (b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1)) &&
                   b.numel() == a.shape().back() && a.rank() >= 2;
  if (row) return Broadcast::Row;
  fail(ErrorKind::ShapeMismatch, "operands " + shape_string(a.shape()) + " and " +
                                     shape_string(b.shape()) + " do not broadcast");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

const Graph::Node& Graph::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) fail(ErrorKind::ShapeMismatch, "invalid graph handle");
  return nodes_[v.id];
}

void Graph::shape_error(std::string_view what) const {
  fail(ErrorKind::ShapeMismatch,
       "node #" + std::to_string(nodes_.size()) + " (" + std::string(what) + ")");
}

Var Graph::record(Node n) {
  for (auto in : n.inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  if (nodes_[id].op != Op::Constant && nodes_[id].op != Op::Parameter) {
    try {
      evaluate(id);
    } catch (...) {
      nodes_.pop_back();
      throw;
    }
  }
  return Var{id};
}

Var Graph::constant(Tensor value, std::string label) {
  if (!value.all_finite()) fail(ErrorKind::NonFinite, "constant leaf '" + label + "'");
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  n.label = std::move(label);
  return record(std::move(n));
}

Var Graph::parameter(Tensor value, std::string label) {
  if (!value.all_finite()) fail(ErrorKind::NonFinite, "parameter leaf '" + label + "'");
  Node n;
  n.op = Op::Parameter;
  n.value = std::move(value);
  n.requires_grad = true;
  n.label = std::move(label);
  return record(std::move(n));
}

Var Graph::bernoulli_mask(const Shape& shape, double keep_prob) {
  Tensor mask(shape);
  for (auto& v : mask.data()) v = rng_.bernoulli(keep_prob) ? 1.0 : 0.0;
  return constant(std::move(mask), "mask");
}

Var Graph::add(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  try {
    broadcast_kind(va, vb);
  } catch (const Error&) {
    shape_error("add " + shape_string(va.shape()) + " + " + shape_string(vb.shape()));
  }
  Node n;
  n.op = Op::Add;
  n.inputs = {a.id, b.id};
  return record(std::move(n));
}

Var Graph::sub(Var a, Var b) {
  if (value(a).shape() != value(b).shape()) {
    shape_error("sub " + shape_string(value(a).shape()) + " - " + shape_string(value(b).shape()));
  }
  Node n;
  n.op = Op::Sub;
  n.inputs = {a.id, b.id};
  return record(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  try {
    broadcast_kind(va, vb);
  } catch (const Error&) {
    shape_error("mul " + shape_string(va.shape()) + " * " + shape_string(vb.shape()));
  }
  Node n;
  n.op = Op::Mul;
  n.inputs = {a.id, b.id};
  return record(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    shape_error("matmul " + shape_string(va.shape()) + " x " + shape_string(vb.shape()));
  }
  Node n;
  n.op = Op::MatMul;
  n.inputs = {a.id, b.id};
  return record(std::move(n));
}

Var Graph::concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat of nothing");
  const auto& first = value(parts[0]).shape();
  if (axis >= first.size()) shape_error("concat axis out of range");
  Node n;
  n.op = Op::Concat;
  n.axis = axis;
  for (auto p : parts) {
    const auto& s = value(p).shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = (d == axis) || s[d] == first[d];
    if (!ok) shape_error("concat " + shape_string(first) + " with " + shape_string(s));
    n.inputs.push_back(p.id);
  }
  return record(std::move(n));
}

Var Graph::reshape(Var a, Shape shape) {
  if (shape_numel(shape) != value(a).numel()) {
    shape_error("reshape " + shape_string(value(a).shape()) + " to " + shape_string(shape));
  }
  Node n;
  n.op = Op::Reshape;
  n.inputs = {a.id};
  n.shape = std::move(shape);
  return record(std::move(n));
}

Var Graph::transpose(Var a) {
  if (value(a).rank() != 2) shape_error("transpose needs rank 2");
  Node n;
  n.op = Op::Transpose;
  n.inputs = {a.id};
  return record(std::move(n));
}

Var Graph::softmax(Var a) {
  Node n;
  n.op = Op::Softmax;
  n.inputs = {a.id};
  return record(std::move(n));
}

Var Graph::layer_norm(Var a, double eps) {
  Node n;
  n.op = Op::LayerNorm;
  n.inputs = {a.id};
  n.scalar = eps;
  return record(std::move(n));
}

Var Graph::silu(Var a) {
  Node n;
  n.op = Op::Silu;
  n.inputs = {a.id};
  return record(std::move(n));
}

Var Graph::gather(Var table, std::vector<int> ids) {
  const auto& t = value(table);
  if (t.rank() != 2 || ids.empty()) shape_error("gather needs a rank-2 table and ids");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= t.dim(0)) {
      shape_error("gather index " + std::to_string(id) + " outside table of " +
                  std::to_string(t.dim(0)) + " rows");
    }
  }
  Node n;
  n.op = Op::Gather;
  n.inputs = {table.id};
  n.ids = std::move(ids);
  return record(std::move(n));
}

Var Graph::scale(Var a, double s) {
  Node n;
  n.op = Op::Scale;
  n.inputs = {a.id};
  n.scalar = s;
  return record(std::move(n));
}

Var Graph::mean(Var a) {
  Node n;
  n.op = Op::Mean;
  n.inputs = {a.id};
  return record(std::move(n));
}

Var Graph::sum(Var a) {
  Node n;
  n.op = Op::Sum;
  n.inputs = {a.id};
  return record(std::move(n));
}

Var Graph::square(Var a) {
  Node n;
  n.op = Op::Square;
  n.inputs = {a.id};
  return record(std::move(n));
}

const Tensor& Graph::value(Var v) const {
  const auto& n = node(v);
  if (n.value.empty()) {
    fail(ErrorKind::ForwardNotRun, "node #" + std::to_string(v.id) + " has no value");
  }
  return n.value;
}

const Tensor& Graph::grad(Var v) const {
  const auto& n = node(v);
  if (!n.has_grad) fail(ErrorKind::ForwardNotRun, "node #" + std::to_string(v.id) + " has no gradient");
  return n.grad;
}

void Graph::evaluate(std::uint32_t id) {
  Node& n = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.op) {
    case Op::Constant:
    case Op::Parameter:
      return;
    case Op::Add:
    case Op::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor out(a.shape());
      const bool row = broadcast_kind(a, b) == Broadcast::Row;
      const std::size_t cols = b.numel();
      const double* pa = a.data().data();
      const double* pb = b.data().data();
      double* po = out.data().data();
      const std::size_t total = a.numel();
      if (n.op == Op::Add) {
        for (std::size_t i = 0; i < total; ++i) po[i] = pa[i] + pb[row ? i % cols : i];
      } else {
        for (std::size_t i = 0; i < total; ++i) po[i] = pa[i] * pb[row ? i % cols : i];
      }
      n.value = std::move(out);
      break;
    }
    case Op::Sub: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
      n.value = std::move(out);
      break;
    }
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor out({a.dim(0), b.dim(1)});
      kernels::gemm(kernels::Trans::No, kernels::Trans::No, a.dim(0), b.dim(1), a.dim(1),
                    a.data().data(), b.data().data(), out.data().data(), false);
      n.value = std::move(out);
      break;
    }
    case Op::Concat: {
      Shape shape = nodes_[n.inputs[0]].value.shape();
      std::size_t axis_total = 0;
      for (auto i : n.inputs) axis_total += nodes_[i].value.dim(n.axis);
      shape[n.axis] = axis_total;
      std::size_t outer = 1;
      for (std::size_t d = 0; d < n.axis; ++d) outer *= shape[d];
      Tensor out(shape);
      const std::size_t out_chunk = out.numel() / outer;
      std::size_t offset = 0;
      for (auto i : n.inputs) {
        const Tensor& part = nodes_[i].value;
        const std::size_t chunk = part.numel() / outer;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < chunk; ++j) out[o * out_chunk + offset + j] = part[o * chunk + j];
        }
        offset += chunk;
      }
      n.value = std::move(out);
      break;
    }
    case Op::Reshape:
      n.value = in(0).reshaped(n.shape);
      break;
    case Op::Transpose: {
      const Tensor& a = in(0);
      const std::size_t r = a.dim(0), c = a.dim(1);
      Tensor out({c, r});
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
      }
      n.value = std::move(out);
      break;
    }
    case Op::Softmax: {
      const Tensor& a = in(0);
      Tensor out(a.shape());
      const std::size_t cols = a.shape().back();
      kernels::softmax_rows(a.data().data(), out.data().data(), a.numel() / cols, cols);
      n.value = std::move(out);
      break;
    }
    case Op::LayerNorm: {
      const Tensor& a = in(0);
      Tensor out(a.shape());
      const std::size_t cols = a.shape().back();
      const std::size_t rows = a.numel() / cols;
      n.aux.assign(rows, 0.0);
      kernels::layernorm_rows(a.data().data(), out.data().data(), n.aux.data(), rows, cols,
                              n.scalar);
      n.value = std::move(out);
      break;
    }
    case Op::Silu: {
      const Tensor& a = in(0);
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * sigmoid(a[i]);
      n.value = std::move(out);
      break;
    }
    case Op::Gather: {
      const Tensor& table = in(0);
      const std::size_t d = table.dim(1);
      Tensor out({n.ids.size(), d});
      for (std::size_t r = 0; r < n.ids.size(); ++r) {
        const auto src = static_cast<std::size_t>(n.ids[r]) * d;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = table[src + j];
      }
      n.value = std::move(out);
      break;
    }
    case Op::Scale: {
      const Tensor& a = in(0);
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = n.scalar * a[i];
      n.value = std::move(out);
      break;
    }
    case Op::Mean:
    case Op::Sum: {
      const Tensor& a = in(0);
      double s = 0.0;
      for (double v : a.data()) s += v;
      if (n.op == Op::Mean) s /= static_cast<double>(a.numel());
      n.value = Tensor::scalar(s);
      break;
    }
    case Op::Square: {
      const Tensor& a = in(0);
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * a[i];
      n.value = std::move(out);
      break;
    }
  }

  if (!n.value.all_finite()) {
    fail(ErrorKind::NonFinite, "node #" + std::to_string(id) + " (" + std::string(op_name(n.op)) +
                                   (n.label.empty() ? "" : " '" + n.label + "'") +
                                   ") produced a non-finite value");
  }
}

void Graph::forward(const Bindings& bindings) {
  for (const auto& [var, tensor] : bindings) {
    Node& n = nodes_.at(var.id);
    if (n.op != Op::Constant && n.op != Op::Parameter) {
      fail(ErrorKind::ShapeMismatch, "node #" + std::to_string(var.id) + " is not a leaf");
    }
    if (n.value.shape() != tensor.shape() && !n.value.empty()) {
      fail(ErrorKind::ShapeMismatch, "binding for node #" + std::to_string(var.id) + " has shape " +
                                         shape_string(tensor.shape()));
    }
    if (!tensor.all_finite()) {
      fail(ErrorKind::NonFinite, "binding for node #" + std::to_string(var.id));
    }
    n.value = tensor;
  }
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].value.empty() && (nodes_[id].op == Op::Constant || nodes_[id].op == Op::Parameter)) {
      fail(ErrorKind::ForwardNotRun, "leaf #" + std::to_string(id) + " is unbound");
    }
    nodes_[id].has_grad = false;
    nodes_[id].grad = Tensor();
    evaluate(id);
  }
  evaluated_ = true;
}

void Graph::reset() {
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
    if (n.op != Op::Constant && n.op != Op::Parameter) {
      n.value = Tensor();
      n.aux.clear();
    }
  }
  evaluated_ = false;
}

std::vector<Var> Graph::parameters() const {
  std::vector<Var> out;
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].op == Op::Parameter) out.push_back(Var{id});
  }
  return out;
}

Tensor& Graph::grad_slot(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

GradientMap Graph::backward(Var root) {
  if (!evaluated_) fail(ErrorKind::ForwardNotRun, "backward before forward");
  const Node& r = node(root);
  if (r.value.empty()) fail(ErrorKind::ForwardNotRun, "root has no value");
  if (r.value.numel() != 1) {
    fail(ErrorKind::NotScalarRoot, "root node #" + std::to_string(root.id) + " has shape " +
                                       shape_string(r.value.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_slot(root.id)[0] = 1.0;
  backward_visits_ = 0;
  for (std::int64_t id = root.id; id >= 0; --id) {
    const auto uid = static_cast<std::uint32_t>(id);
    if (!nodes_[uid].has_grad || !nodes_[uid].requires_grad) continue;
    ++backward_visits_;
    propagate(uid);
  }
  GradientMap out;
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].op != Op::Parameter) continue;
    out.emplace(Var{id}, nodes_[id].has_grad ? nodes_[id].grad : Tensor(nodes_[id].value.shape(), 0.0));
  }
  return out;
}

void Graph::propagate(std::uint32_t id) {
  // Copies of small fields only; tensors are referenced through nodes_,
  // which does not reallocate during backward.
  const Node& n = nodes_[id];
  const Tensor& g = n.grad;
  auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto input = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.op) {
    case Op::Constant:
    case Op::Parameter:
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      const bool row = n.op != Op::Sub && broadcast_kind(a, b) == Broadcast::Row;
      const std::size_t cols = b.numel();
      if (needs(0)) {
        Tensor& ga = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga[i] += (n.op == Op::Mul) ? g[i] * b[row ? i % cols : i] : g[i];
        }
      }
      if (needs(1)) {
        Tensor& gb = grad_slot(n.inputs[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const std::size_t j = row ? i % cols : i;
          if (n.op == Op::Mul) {
            gb[j] += g[i] * a[i];
          } else if (n.op == Op::Add) {
            gb[j] += g[i];
          } else {
            gb[j] -= g[i];
          }
        }
      }
      break;
    }
    case Op::MatMul: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      if (needs(0)) {
        kernels::gemm(kernels::Trans::No, kernels::Trans::Yes, m, k, cols, g.data().data(),
                      b.data().data(), grad_slot(n.inputs[0]).data().data(), true);
      }
      if (needs(1)) {
        kernels::gemm(kernels::Trans::Yes, kernels::Trans::No, k, cols, m, a.data().data(),
                      g.data().data(), grad_slot(n.inputs[1]).data().data(), true);
      }
      break;
    }
    case Op::Concat: {
      std::size_t outer = 1;
      for (std::size_t d = 0; d < n.axis; ++d) outer *= g.dim(d);
      const std::size_t out_chunk = g.numel() / outer;
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t chunk = nodes_[n.inputs[k]].value.numel() / outer;
        if (needs(k)) {
          Tensor& gp = grad_slot(n.inputs[k]);
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < chunk; ++j) gp[o * chunk + j] += g[o * out_chunk + offset + j];
          }
        }
        offset += chunk;
      }
      break;
    }
    case Op::Reshape: {
      Tensor& ga = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      break;
    }
    case Op::Transpose: {
      Tensor& ga = grad_slot(n.inputs[0]);
      const std::size_t r = ga.dim(0), c = ga.dim(1);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
      }
      break;
    }
    case Op::Softmax: {
      const std::size_t cols = g.shape().back();
      kernels::softmax_rows_backward(n.value.data().data(), g.data().data(),
                                     grad_slot(n.inputs[0]).data().data(), g.numel() / cols, cols);
      break;
    }
    case Op::LayerNorm: {
      const std::size_t cols = g.shape().back();
      kernels::layernorm_rows_backward(n.value.data().data(), n.aux.data(), g.data().data(),
                                       grad_slot(n.inputs[0]).data().data(), g.numel() / cols,
                                       cols);
      break;
    }
    case Op::Silu: {
      const Tensor& a = input(0);
      Tensor& ga = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double s = sigmoid(a[i]);
        ga[i] += g[i] * (s + a[i] * s * (1.0 - s));
      }
      break;
    }
    case Op::Gather: {
      Tensor& gt = grad_slot(n.inputs[0]);
      const std::size_t d = gt.dim(1);
      for (std::size_t r = 0; r < n.ids.size(); ++r) {
        const auto dst = static_cast<std::size_t>(n.ids[r]) * d;
        for (std::size_t j = 0; j < d; ++j) gt[dst + j] += g[r * d + j];
      }
      break;
    }
    case Op::Scale: {
      Tensor& ga = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += n.scalar * g[i];
      break;
    }
    case Op::Mean:
    case Op::Sum: {
      Tensor& ga = grad_slot(n.inputs[0]);
      const double v = n.op == Op::Mean ? g[0] / static_cast<double>(ga.numel()) : g[0];
      for (auto& x : ga.data()) x += v;
      break;
    }
    case Op::Square: {
      const Tensor& a = input(0);
      Tensor& ga = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += 2.0 * a[i] * g[i];
      break;
    }
  }
}

}  // namespace kdiff
