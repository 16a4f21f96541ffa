#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace clam {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Thread-local autograd switch. While disabled, ops compute values only and
// record no graph edges.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily on first accumulation
  bool requires_grad = false;

  // Graph edges, present only on nodes produced while GradMode is enabled.
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad();
};

// Value-semantics handle onto shared storage: copies alias the same node.
// Shape is row-major dense; the usual axis order is [N, C, H, W].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  int64_t ndim() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t numel() const;

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::span<const double> values() const { return node_->value; }
  std::vector<double>& vec() { return node_->value; }
  const std::vector<double>& vec() const { return node_->value; }

  // Flat single-element access used by tests and small-scale code.
  double& operator[](int64_t i) { return node_->value[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return node_->value[static_cast<size_t>(i)]; }
  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  double item() const;  // requires numel() == 1

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double>& grad_vec() { return node_->grad; }
  void zero_grad();

  // Reverse-mode sweep from a scalar node. Deterministic: the topological
  // order is fixed by the graph construction order.
  void backward() const;

  // Deep copy of the value buffer; the result is a fresh leaf.
  Tensor clone() const;

  std::shared_ptr<TensorNode>& node() { return node_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

}  // namespace clam
