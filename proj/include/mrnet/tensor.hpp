#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace mrnet {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Rank-N numeric array in row-major order with an optional gradient buffer.
// Canonical image layout is batch x channels x height x width. Copies are
// shallow: a Tensor is a shared handle onto one storage, which is what lets
// tape closures and optimizer state refer to the same parameter buffers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::int64_t dim(std::size_t i) const { return d_->shape[i]; }
  std::int64_t size() const { return static_cast<std::int64_t>(d_->value.size()); }

  double* data() { return d_->value.data(); }
  const double* data() const { return d_->value.data(); }
  std::vector<double>& values() { return d_->value; }
  const std::vector<double>& values() const { return d_->value; }

  double& operator[](std::int64_t i) { return d_->value[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return d_->value[static_cast<std::size_t>(i)]; }

  // Row-major element access, rank checked only by assert-level indexing math.
  double& at(std::initializer_list<std::int64_t> idx);
  double at(std::initializer_list<std::int64_t> idx) const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool v) { d_->requires_grad = v; }

  bool has_grad() const { return !d_->grad.empty(); }
  // Allocates a zero gradient buffer on first use.
  std::vector<double>& grad();
  const std::vector<double>& grad() const { return d_->grad; }
  double* grad_data() { return grad().data(); }
  void zero_grad();
  void drop_grad() { d_->grad.clear(); }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  // Deep copy of values (gradient buffer is not copied).
  Tensor clone() const;

  bool all_finite() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> d_;
};

// Ordered record of executed operations. Each forward op that participates in
// differentiation appends one node; backward() replays the nodes in reverse
// execution order, visiting each exactly once.
class Tape {
 public:
  void record(const char* op_name, std::function<void()> backprop) {
    nodes_.push_back({op_name, std::move(backprop)});
  }

  // Seeds d(loss)/d(loss) = 1 and propagates adjoints through the record.
  // The loss must be a scalar produced through this tape.
  void backward(Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    const char* op_name;
    std::function<void()> backprop;
  };
  std::vector<Node> nodes_;
};

}  // namespace mrnet
