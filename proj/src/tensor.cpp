#include "clam/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "clam/errors.hpp"

namespace clam {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor::Tensor(Shape shape, double fill) {
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->value.assign(static_cast<size_t>(shape_numel(node_->shape)), fill);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("from_data: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  Tensor t;
  t.node_ = std::make_shared<TensorNode>();
  t.node_->shape = std::move(shape);
  t.node_->value = std::move(data);
  return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(node_->value.size()); }

double& Tensor::at(std::initializer_list<int64_t> idx) {
  const Shape& s = node_->shape;
  int64_t flat = 0;
  size_t i = 0;
  for (int64_t v : idx) {
    flat = flat * s[i] + v;
    ++i;
  }
  return node_->value[static_cast<size_t>(flat)];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  return from_data(node_->shape, node_->value);
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));

  // Iterative post-order DFS; parent order fixes the topological order.
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> seen;
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  seen.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace clam
