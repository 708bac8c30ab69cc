#include "kdiff/params.hpp"

#include <cmath>

#include "kdiff/error.hpp"

namespace kdiff {

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) fail(ErrorKind::ShapeMismatch, "duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first == name) return i;
  }
  fail(ErrorKind::ShapeMismatch, "no parameter named '" + std::string(name) + "'");
}

const Tensor& ParamSet::get(std::string_view name) const { return entries_[index_of(name)].second; }
Tensor& ParamSet::get(std::string_view name) { return entries_[index_of(name)].second; }

bool ParamSet::contains(std::string_view name) const {
  for (const auto& [n, _] : entries_) {
    if (n == name) return true;
  }
  return false;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.entries()[i].first != b.entries()[i].first) return false;
    if (!bitwise_equal(a.entries()[i].second, b.entries()[i].second)) return false;
  }
  return true;
}

BoundParams::BoundParams(Graph& graph, const ParamSet& params, bool trainable,
                         std::string_view prefix) {
  for (const auto& [name, value] : params.entries()) {
    std::string label = std::string(prefix) + name;
    Var v = trainable ? graph.parameter(value, label) : graph.constant(value, label);
    index_.emplace(name, vars_.size());
    vars_.emplace_back(name, v);
  }
}

Var BoundParams::operator[](std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::ShapeMismatch, "unbound parameter '" + std::string(name) + "'");
  return vars_[it->second].second;
}

Tensor init_normal(const Shape& shape, double stddev, Rng& rng) { return rng.normal_tensor(shape, stddev); }

std::vector<double> sinusoid(double position, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(position * freq);
    out[half + i] = std::cos(position * freq);
  }
  return out;
}

namespace nn {

Var linear(Graph& g, Var x, Var weight, Var bias) { return g.add(g.matmul(x, weight), bias); }

Var linear(Graph& g, Var x, Var weight) { return g.matmul(x, weight); }

Var layer_norm(Graph& g, Var x, Var gain, Var bias) {
  return g.add(g.mul(g.layer_norm(x), gain), bias);
}

}  // namespace nn
}  // namespace kdiff
