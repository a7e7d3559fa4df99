#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace varcaps {

/// Flat storage for tensor values and gradients. Double precision throughout:
/// the gradient checks this library is validated against run at 1e-4 relative
/// error, which single precision cannot sustain.
using Array = Eigen::ArrayXd;

/// Row-major extents. Rank 0 (empty shape) is a scalar with one element.
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_numel(const Shape& s);

class Tape;

namespace detail {

struct TensorNode {
  Shape shape;
  Array values;
  Array grad;  // sized like values while the node participates in a tape
  bool requires_grad = false;
  Tape* tape = nullptr;  // non-owning; valid for the forward/backward pass
};

}  // namespace detail

/// Dense n-dimensional array of doubles. Values are immutable after
/// construction; only the gradient slot is written, by Tape::backward.
/// Copies are cheap handles to the same node.
class Tensor {
 public:
  /// Rank-0 scalar holding 0.
  Tensor();
  Tensor(Shape shape, Array values);
  Tensor(Shape shape, const std::vector<double>& values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int numel() const { return static_cast<int>(node_->values.size()); }
  const Array& array() const { return node_->values; }

  /// Value of a rank-0 / single-element tensor.
  double value() const;
  /// Row-major multi-index access.
  double at(std::initializer_list<int> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient populated by Tape::backward. Error if this tensor never
  /// required gradients.
  const Array& grad() const;
  Tensor grad_tensor() const;

  /// Constant copy of the values: no tape, no gradient tracking.
  Tensor detach() const;

  Tape* tape() const { return node_->tape; }
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorNode> node);

  std::shared_ptr<detail::TensorNode> node_;
};

/// Record of one forward pass. Operations involving a tracked tensor append
/// themselves in execution order (inputs always precede their consumers), and
/// backward() replays the record once in reverse. A tape and its tensors stay
/// on one logical thread; independent tapes are fully independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// New tracked leaf initialized with the values of `init`.
  Tensor leaf(const Tensor& init);
  Tensor leaf(Shape shape, Array values);

  /// Appends a recorded operation. `backward` must accumulate (+=) into the
  /// input gradients from the output gradient.
  void record(std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  /// Reverse pass from a scalar loss recorded on this tape. Populates the
  /// gradient of every tracked ancestor; runs at most once per tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return steps_.size(); }

 private:
  struct Step {
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> run;
  };

  std::vector<Step> steps_;
  bool backward_done_ = false;
};

/// The tape shared by any tracked argument; null when all arguments are
/// constants. Mixing tensors from two live tapes is an error.
Tape* recording_tape(std::initializer_list<const Tensor*> ts);

/// Result construction used by every operation: verifies finiteness and, when
/// `tape` is non-null, marks the result tracked on it.
Tensor make_result(const char* op, Shape shape, Array values, Tape* tape);

/// Every operation forbids NaN/Inf in its output.
void check_finite(const Array& a, const char* op);

void require_same_shape(const char* op, const Tensor& a, const Tensor& b);

}  // namespace varcaps
