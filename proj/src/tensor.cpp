#include "varcaps/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace varcaps {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int shape_numel(const Shape& s) {
  long long n = 1;
  for (int d : s) {
    if (d <= 0)
      throw std::invalid_argument("tensor shape has non-positive extent " +
                                  shape_str(s));
    n *= d;
  }
  if (n > (1LL << 30))
    throw std::invalid_argument("tensor shape too large " + shape_str(s));
  return static_cast<int>(n);
}

void check_finite(const Array& a, const char* op) {
  if (!a.allFinite())
    throw std::domain_error(std::string(op) +
                            ": result contains a non-finite value");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

Tensor::Tensor() : Tensor(Shape{}, Array::Zero(1)) {}

Tensor::Tensor(std::shared_ptr<detail::TensorNode> node)
    : node_(std::move(node)) {}

Tensor::Tensor(Shape shape, Array values) {
  const int n = shape_numel(shape);
  if (n != values.size())
    throw std::invalid_argument(
        "tensor: " + std::to_string(values.size()) +
        " values do not fill shape " + shape_str(shape));
  check_finite(values, "tensor");
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : Tensor(std::move(shape),
             Eigen::Map<const Array>(values.data(),
                                     static_cast<Eigen::Index>(values.size()))) {}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, Array::Constant(1, v)); }

Tensor Tensor::zeros(Shape shape) {
  const int n = shape_numel(shape);
  return Tensor(std::move(shape), Array::Zero(n));
}

Tensor Tensor::full(Shape shape, double v) {
  const int n = shape_numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, v));
}

double Tensor::value() const {
  if (numel() != 1)
    throw std::invalid_argument("value(): tensor " + shape_str(shape()) +
                                " is not a scalar");
  return node_->values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size())
    throw std::invalid_argument("at(): " + std::to_string(idx.size()) +
                                " indices for shape " + shape_str(s));
  long long flat = 0;
  std::size_t k = 0;
  for (int i : idx) {
    if (i < 0 || i >= s[k])
      throw std::out_of_range("at(): index " + std::to_string(i) +
                              " out of range for shape " + shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return node_->values[static_cast<Eigen::Index>(flat)];
}

const Array& Tensor::grad() const {
  if (!node_->requires_grad)
    throw std::logic_error("grad(): tensor does not require gradients");
  return node_->grad;
}

Tensor Tensor::grad_tensor() const { return Tensor(shape(), grad()); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->values); }

Tensor Tape::leaf(const Tensor& init) {
  return leaf(init.shape(), init.array());
}

Tensor Tape::leaf(Shape shape, Array values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->grad = Array::Zero(t.numel());
  t.node_->tape = this;
  return t;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> backward) {
  if (output.tape() != this)
    throw std::logic_error("Tape::record: output is not tracked on this tape");
  Step step;
  step.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) step.inputs.push_back(t.node());
  step.output = output.node();
  step.run = std::move(backward);
  steps_.push_back(std::move(step));
}

void Tape::backward(const Tensor& loss) {
  if (backward_done_)
    throw std::logic_error("Tape::backward: tape already traversed");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss has shape " +
                                shape_str(loss.shape()) + ", expected scalar");
  if (!loss.requires_grad() || loss.tape() != this)
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  backward_done_ = true;

  loss.node()->grad.setConstant(1.0);
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->run();

  for (const Step& s : steps_) {
    for (const auto& in : s.inputs)
      if (in->requires_grad) check_finite(in->grad, "backward");
    check_finite(s.output->grad, "backward");
  }
}

Tape* recording_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    Tape* tt = t->tape();
    if (!tt) continue;
    if (tape && tape != tt)
      throw std::logic_error("operation mixes tensors from two tapes");
    tape = tt;
  }
  return tape;
}

Tensor make_result(const char* op, Shape shape, Array values, Tape* tape) {
  check_finite(values, op);
  Tensor r(std::move(shape), std::move(values));
  if (tape) {
    r.node()->requires_grad = true;
    r.node()->grad = Array::Zero(r.numel());
    r.node()->tape = tape;
  }
  return r;
}

}  // namespace varcaps
