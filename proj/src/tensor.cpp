#include "kdiff/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "kdiff/error.hpp"

namespace kdiff {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) fail(ErrorKind::ShapeMismatch, "tensor needs at least one axis");
  for (auto e : shape) {
    if (e == 0) fail(ErrorKind::ShapeMismatch, "zero extent in " + shape_string(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    fail(ErrorKind::ShapeMismatch, "shape " + shape_string(shape_) + " holds " +
                                       std::to_string(shape_numel(shape_)) + " values, got " +
                                       std::to_string(data_.size()));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) fail(ErrorKind::NotScalarRoot, "item() on " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) fail(ErrorKind::ShapeMismatch, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace kdiff
