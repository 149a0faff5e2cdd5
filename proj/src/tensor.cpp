#include "mrnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mrnet {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : d_(std::make_shared<Storage>()) {
  for (std::int64_t e : shape) {
    if (e < 0) throw std::invalid_argument("tensor extent must be nonnegative, got " + shape_str(shape));
  }
  d_->shape = std::move(shape);
  d_->value.assign(static_cast<std::size_t>(shape_numel(d_->shape)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : d_(std::make_shared<Storage>()) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match buffer length " +
                                std::to_string(values.size()));
  }
  d_->shape = std::move(shape);
  d_->value = std::move(values);
}

double& Tensor::at(std::initializer_list<std::int64_t> idx) {
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (std::int64_t i : idx) flat = flat * d_->shape[k++] + i;
  return d_->value[static_cast<std::size_t>(flat)];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

std::vector<double>& Tensor::grad() {
  if (d_->grad.empty() && !d_->value.empty()) d_->grad.assign(d_->value.size(), 0.0);
  return d_->grad;
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) d_->grad.assign(d_->grad.size(), 0.0);
}

Tensor Tensor::clone() const {
  return Tensor(d_->shape, d_->value);
}

bool Tensor::all_finite() const {
  for (double v : d_->value) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  loss.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backprop();
}

}  // namespace mrnet
