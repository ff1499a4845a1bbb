#include "physctl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "physctl/error.hpp"

namespace physctl {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor rank must be >= 1");
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be >= 1, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw DimensionError("index rank mismatch for " + shape_str(shape_));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range for " + shape_str(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor t = *this;
  t.reshape(std::move(shape));
  return t;
}

void Tensor::reshape(Shape shape) {
  validate_shape(shape);
  if (shape_size(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
double Tensor::mean() const { return sum() / static_cast<double>(data_.size()); }

double Tensor::max_abs() const {
  double m = 0.0;
  for (auto v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (begin >= end || end > t.extent(0)) throw DimensionError("bad row slice of " + shape_str(t.shape()));
  const std::size_t stride = t.size() / t.extent(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  std::vector<double> data(t.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                           t.data().begin() + static_cast<std::ptrdiff_t>(end * stride));
  return Tensor(std::move(shape), std::move(data));
}

Tensor row(const Tensor& t, std::size_t i) {
  Tensor r = slice_rows(t, i, i + 1);
  if (t.rank() == 1) return r;
  Shape shape(t.shape().begin() + 1, t.shape().end());
  r.reshape(std::move(shape));
  return r;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ContractError("stack of zero tensors");
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const auto& t : items) {
    require_same_shape(t, items[0], "stack");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace physctl
