#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace etio::nn {

class NnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One vertex of the recorded graph. `backprop` pushes this node's gradient into
// its inputs; it is cleared once backward() has consumed the graph.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense double-precision tensor, row-major, with an optional gradient buffer. Copies
/// share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> values() { return node_->value; }
  /// Empty until a gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();
  /// True when this tensor was produced by a recorded op that backward() has not yet consumed.
  bool has_graph() const { return static_cast<bool>(node_->backprop); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode pass from a scalar. Throws NnError when `loss` carries no
/// recorded graph (never produced by a differentiable op, or already consumed).
void backward(const Tensor& loss);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// While alive, collects on which side of its kink every ReLU unit and triplet
/// hinge on the current thread was evaluated. Finite-difference checks use it
/// to spot perturbations that straddle a kink.
class KinkTrace {
 public:
  KinkTrace();
  ~KinkTrace();
  KinkTrace(const KinkTrace&) = delete;
  KinkTrace& operator=(const KinkTrace&) = delete;

  void record(bool positive_side) { pattern_.push_back(positive_side); }
  const std::vector<bool>& pattern() const { return pattern_; }

 private:
  std::vector<bool> pattern_;
  KinkTrace* previous_;
};

using Triple = std::array<int, 3>;  // (z, y, x)

// Volumetric tensors are [C, Z, Y, X]; vectors are [N].
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, Triple stride, Triple padding);
Tensor relu(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);
/// Concatenates along the leading axis; trailing extents must agree.
Tensor concat(const Tensor& a, const Tensor& b);
/// Every `step`-th slice along Z starting at `start`.
Tensor take_slices(const Tensor& x, int start, int step);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor softmax(const Tensor& logits);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Sum of scalar tensors.
Tensor sum(std::span<const Tensor> scalars);
/// -weight * log(max(probs[index], floor)); no gradient flows through the clamp.
Tensor weighted_neg_log(const Tensor& probs, int index, double weight, double floor);
/// max(0, |a-p|^2 - |a-n|^2 + margin) with squared Euclidean distances.
Tensor triplet_hinge(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double margin);

}  // namespace etio::nn
