#include "varcaps/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace varcaps {

namespace {

using Node = std::shared_ptr<detail::TensorNode>;

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct AxisSlices {
  int outer;  // product of extents before axis
  int n;      // extent of axis
  int inner;  // product of extents after axis
};

AxisSlices axis_slices(const char* op, const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument(std::string(op) + ": axis " +
                                std::to_string(axis) +
                                " invalid for shape " + shape_str(s));
  AxisSlices sl{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) sl.outer *= s[i];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) sl.inner *= s[i];
  return sl;
}

// Common pattern for unary elementwise ops: out = f(a), da += dOut * dfda
// where dfda is computed from the saved input/output values.
template <typename Fwd, typename Bwd>
Tensor unary_op(const char* op, const Tensor& a, Fwd fwd, Bwd bwd) {
  Array out = fwd(a.array());
  Tape* tape = recording_tape({&a});
  Tensor r = make_result(op, a.shape(), std::move(out), tape);
  if (tape) {
    Node an = a.node(), rn = r.node();
    tape->record({a}, r, [an, rn, bwd] {
      if (an->requires_grad) an->grad += bwd(an->values, rn->values, rn->grad);
    });
  }
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tape* tape = recording_tape({&a, &b});
  Tensor r = make_result("add", a.shape(), a.array() + b.array(), tape);
  if (tape) {
    Node an = a.node(), bn = b.node(), rn = r.node();
    tape->record({a, b}, r, [an, bn, rn] {
      if (an->requires_grad) an->grad += rn->grad;
      if (bn->requires_grad) bn->grad += rn->grad;
    });
  }
  return r;
}

Tensor add(const Tensor& a, double b) {
  return unary_op(
      "add", a, [b](const Array& x) { return Array(x + b); },
      [](const Array&, const Array&, const Array& g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tape* tape = recording_tape({&a, &b});
  Tensor r = make_result("sub", a.shape(), a.array() - b.array(), tape);
  if (tape) {
    Node an = a.node(), bn = b.node(), rn = r.node();
    tape->record({a, b}, r, [an, bn, rn] {
      if (an->requires_grad) an->grad += rn->grad;
      if (bn->requires_grad) bn->grad -= rn->grad;
    });
  }
  return r;
}

Tensor sub(const Tensor& a, double b) { return add(a, -b); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tape* tape = recording_tape({&a, &b});
  Tensor r = make_result("mul", a.shape(), a.array() * b.array(), tape);
  if (tape) {
    Node an = a.node(), bn = b.node(), rn = r.node();
    tape->record({a, b}, r, [an, bn, rn] {
      if (an->requires_grad) an->grad += rn->grad * bn->values;
      if (bn->requires_grad) bn->grad += rn->grad * an->values;
    });
  }
  return r;
}

Tensor mul(const Tensor& a, double b) {
  return unary_op(
      "mul", a, [b](const Array& x) { return Array(x * b); },
      [b](const Array&, const Array&, const Array& g) { return Array(g * b); });
}

Tensor scale(const Tensor& a, double s) { return mul(a, s); }

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](const Array& x) { return Array(x.exp()); },
      [](const Array&, const Array& y, const Array& g) { return Array(g * y); });
}

Tensor log(const Tensor& a) {
  if ((a.array() <= 0.0).any())
    throw std::domain_error("log: non-positive input");
  return unary_op(
      "log", a, [](const Array& x) { return Array(x.log()); },
      [](const Array& x, const Array&, const Array& g) { return Array(g / x); });
}

Tensor sigmoid(const Tensor& a) {
  auto stable = [](const Array& x) {
    Array y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x[i];
      y[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
    }
    return y;
  };
  return unary_op(
      "sigmoid", a, stable,
      [](const Array&, const Array& y, const Array& g) {
        return Array(g * y * (1.0 - y));
      });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](const Array& x) { return Array(x.max(0.0)); },
      [](const Array& x, const Array&, const Array& g) {
        return Array((x > 0.0).select(g, 0.0));
      });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      "abs", a, [](const Array& x) { return Array(x.abs()); },
      [](const Array& x, const Array&, const Array& g) {
        return Array(x.sign() * g);
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: cannot view " +
                                shape_str(a.shape()) + " as " +
                                shape_str(shape));
  Tape* tape = recording_tape({&a});
  Tensor r = make_result("reshape", std::move(shape), a.array(), tape);
  if (tape) {
    Node an = a.node(), rn = r.node();
    tape->record({a}, r, [an, rn] {
      if (an->requires_grad) an->grad += rn->grad;
    });
  }
  return r;
}

Tensor narrow(const Tensor& a, int start, int len) {
  if (a.rank() < 1)
    throw std::invalid_argument("narrow: scalar has no axis 0");
  const int rows = a.shape()[0];
  if (start < 0 || len < 1 || start + len > rows)
    throw std::invalid_argument("narrow: rows [" + std::to_string(start) +
                                "," + std::to_string(start + len) +
                                ") out of range for shape " +
                                shape_str(a.shape()));
  const int rowsz = a.numel() / rows;
  Shape out_shape = a.shape();
  out_shape[0] = len;
  Array out = a.array().segment(static_cast<Eigen::Index>(start) * rowsz,
                                static_cast<Eigen::Index>(len) * rowsz);
  Tape* tape = recording_tape({&a});
  Tensor r = make_result("narrow", std::move(out_shape), std::move(out), tape);
  if (tape) {
    Node an = a.node(), rn = r.node();
    tape->record({a}, r, [an, rn, start, len, rowsz] {
      if (an->requires_grad)
        an->grad.segment(static_cast<Eigen::Index>(start) * rowsz,
                         static_cast<Eigen::Index>(len) * rowsz) += rn->grad;
    });
  }
  return r;
}

Tensor concat0(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || a.rank() != b.rank())
    throw std::invalid_argument("concat0: ranks differ: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  for (int i = 1; i < a.rank(); ++i)
    if (a.shape()[i] != b.shape()[i])
      throw std::invalid_argument("concat0: trailing extents differ: " +
                                  shape_str(a.shape()) + " vs " +
                                  shape_str(b.shape()));
  Shape out_shape = a.shape();
  out_shape[0] += b.shape()[0];
  Array out(a.numel() + b.numel());
  out << a.array(), b.array();
  Tape* tape = recording_tape({&a, &b});
  Tensor r = make_result("concat0", std::move(out_shape), std::move(out), tape);
  if (tape) {
    Node an = a.node(), bn = b.node(), rn = r.node();
    const Eigen::Index na = a.numel(), nb = b.numel();
    tape->record({a, b}, r, [an, bn, rn, na, nb] {
      if (an->requires_grad) an->grad += rn->grad.head(na);
      if (bn->requires_grad) bn->grad += rn->grad.tail(nb);
    });
  }
  return r;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expected rank-2 operands, got " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Array out(static_cast<Eigen::Index>(m) * n);
  {
    ConstMatMap A(a.array().data(), m, k), B(b.array().data(), k, n);
    MatMap C(out.data(), m, n);
    C.noalias() = A * B;
  }
  Tape* tape = recording_tape({&a, &b});
  Tensor r = make_result("matmul", {m, n}, std::move(out), tape);
  if (tape) {
    Node an = a.node(), bn = b.node(), rn = r.node();
    tape->record({a, b}, r, [an, bn, rn, m, k, n] {
      ConstMatMap A(an->values.data(), m, k), B(bn->values.data(), k, n),
          dC(rn->grad.data(), m, n);
      if (an->requires_grad) {
        MatMap dA(an->grad.data(), m, k);
        dA.noalias() += dC * B.transpose();
      }
      if (bn->requires_grad) {
        MatMap dB(bn->grad.data(), k, n);
        dB.noalias() += A.transpose() * dC;
      }
    });
  }
  return r;
}

Tensor softmax(const Tensor& a, int axis) {
  const AxisSlices sl = axis_slices("softmax", a.shape(), axis);
  Array out(a.numel());
  const Array& x = a.array();
  for (int o = 0; o < sl.outer; ++o)
    for (int i = 0; i < sl.inner; ++i) {
      const Eigen::Index base = static_cast<Eigen::Index>(o) * sl.n * sl.inner + i;
      double mx = x[base];
      for (int k = 1; k < sl.n; ++k)
        mx = std::max(mx, x[base + static_cast<Eigen::Index>(k) * sl.inner]);
      double denom = 0.0;
      for (int k = 0; k < sl.n; ++k) {
        const Eigen::Index p = base + static_cast<Eigen::Index>(k) * sl.inner;
        out[p] = std::exp(x[p] - mx);
        denom += out[p];
      }
      for (int k = 0; k < sl.n; ++k)
        out[base + static_cast<Eigen::Index>(k) * sl.inner] /= denom;
    }
  Tape* tape = recording_tape({&a});
  Tensor r = make_result("softmax", a.shape(), std::move(out), tape);
  if (tape) {
    Node an = a.node(), rn = r.node();
    tape->record({a}, r, [an, rn, sl] {
      if (!an->requires_grad) return;
      const Array& y = rn->values;
      const Array& dy = rn->grad;
      for (int o = 0; o < sl.outer; ++o)
        for (int i = 0; i < sl.inner; ++i) {
          const Eigen::Index base =
              static_cast<Eigen::Index>(o) * sl.n * sl.inner + i;
          double dots = 0.0;
          for (int k = 0; k < sl.n; ++k) {
            const Eigen::Index p = base + static_cast<Eigen::Index>(k) * sl.inner;
            dots += dy[p] * y[p];
          }
          for (int k = 0; k < sl.n; ++k) {
            const Eigen::Index p = base + static_cast<Eigen::Index>(k) * sl.inner;
            an->grad[p] += y[p] * (dy[p] - dots);
          }
        }
    });
  }
  return r;
}

Tensor l2_norm(const Tensor& a, int axis) {
  const AxisSlices sl = axis_slices("l2_norm", a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  Array out(static_cast<Eigen::Index>(sl.outer) * sl.inner);
  const Array& x = a.array();
  for (int o = 0; o < sl.outer; ++o)
    for (int i = 0; i < sl.inner; ++i) {
      const Eigen::Index base = static_cast<Eigen::Index>(o) * sl.n * sl.inner + i;
      double ss = 0.0;
      for (int k = 0; k < sl.n; ++k) {
        const double v = x[base + static_cast<Eigen::Index>(k) * sl.inner];
        ss += v * v;
      }
      out[static_cast<Eigen::Index>(o) * sl.inner + i] = std::sqrt(ss);
    }
  Tape* tape = recording_tape({&a});
  Tensor r = make_result("l2_norm", std::move(out_shape), std::move(out), tape);
  if (tape) {
    Node an = a.node(), rn = r.node();
    // Gradient at the zero vector is defined as zero (subgradient choice),
    // which keeps squash finite at s = 0.
    tape->record({a}, r, [an, rn, sl] {
      if (!an->requires_grad) return;
      const Array& x = an->values;
      for (int o = 0; o < sl.outer; ++o)
        for (int i = 0; i < sl.inner; ++i) {
          const Eigen::Index out_p = static_cast<Eigen::Index>(o) * sl.inner + i;
          const double norm = rn->values[out_p];
          if (norm == 0.0) continue;
          const double g = rn->grad[out_p] / norm;
          const Eigen::Index base =
              static_cast<Eigen::Index>(o) * sl.n * sl.inner + i;
          for (int k = 0; k < sl.n; ++k) {
            const Eigen::Index p = base + static_cast<Eigen::Index>(k) * sl.inner;
            an->grad[p] += g * x[p];
          }
        }
    });
  }
  return r;
}

Tensor sum(const Tensor& a) {
  Tape* tape = recording_tape({&a});
  Tensor r = make_result("sum", Shape{}, Array::Constant(1, a.array().sum()),
                         tape);
  if (tape) {
    Node an = a.node(), rn = r.node();
    tape->record({a}, r, [an, rn] {
      if (an->requires_grad) an->grad += rn->grad[0];
    });
  }
  return r;
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / a.numel();
  Tape* tape = recording_tape({&a});
  Tensor r = make_result("mean", Shape{},
                         Array::Constant(1, a.array().sum() * inv), tape);
  if (tape) {
    Node an = a.node(), rn = r.node();
    tape->record({a}, r, [an, rn, inv] {
      if (an->requires_grad) an->grad += rn->grad[0] * inv;
    });
  }
  return r;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape("dot", a, b);
  Tape* tape = recording_tape({&a, &b});
  Tensor r = make_result("dot", Shape{},
                         Array::Constant(1, (a.array() * b.array()).sum()),
                         tape);
  if (tape) {
    Node an = a.node(), bn = b.node(), rn = r.node();
    tape->record({a, b}, r, [an, bn, rn] {
      if (an->requires_grad) an->grad += rn->grad[0] * bn->values;
      if (bn->requires_grad) bn->grad += rn->grad[0] * an->values;
    });
  }
  return r;
}

Tensor conv2d(const Tensor& image, const Tensor& kernel, const Tensor& bias,
              int stride) {
  if (image.rank() != 3 || kernel.rank() != 4 || bias.rank() != 1)
    throw std::invalid_argument(
        "conv2d: expected image [H,W,C], kernel [kh,kw,C,M], bias [M]; got " +
        shape_str(image.shape()) + ", " + shape_str(kernel.shape()) + ", " +
        shape_str(bias.shape()));
  const int h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
  const int kh = kernel.shape()[0], kw = kernel.shape()[1];
  const int kc = kernel.shape()[2], m = kernel.shape()[3];
  if (kc != c)
    throw std::invalid_argument("conv2d: channel mismatch: image " +
                                shape_str(image.shape()) + " vs kernel " +
                                shape_str(kernel.shape()));
  if (bias.shape()[0] != m)
    throw std::invalid_argument("conv2d: bias " + shape_str(bias.shape()) +
                                " does not match " + std::to_string(m) +
                                " kernels");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (h < kh || w < kw)
    throw std::invalid_argument("conv2d: image " + shape_str(image.shape()) +
                                " smaller than kernel " +
                                shape_str(kernel.shape()));
  const int oh = (h - kh) / stride + 1;
  const int ow = (w - kw) / stride + 1;

  const double* x = image.array().data();
  const double* kk = kernel.array().data();
  const double* bb = bias.array().data();
  Array out(static_cast<Eigen::Index>(oh) * ow * m);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int f = 0; f < m; ++f) {
        double acc = bb[f];
        for (int dy = 0; dy < kh; ++dy)
          for (int dx = 0; dx < kw; ++dx) {
            const double* xrow =
                x + (static_cast<long>(oy * stride + dy) * w +
                     (ox * stride + dx)) * c;
            const double* krow = kk + (static_cast<long>(dy) * kw + dx) * c * m + f;
            for (int ch = 0; ch < c; ++ch) acc += xrow[ch] * krow[ch * m];
          }
        out[(static_cast<Eigen::Index>(oy) * ow + ox) * m + f] = acc;
      }

  Tape* tape = recording_tape({&image, &kernel, &bias});
  Tensor r = make_result("conv2d", {oh, ow, m}, std::move(out), tape);
  if (tape) {
    Node in = image.node(), kn = kernel.node(), bn = bias.node(), rn = r.node();
    tape->record({image, kernel, bias}, r, [in, kn, bn, rn, h, w, c, kh, kw, m,
                                            oh, ow, stride] {
      const double* x = in->values.data();
      const double* kk = kn->values.data();
      const double* dout = rn->grad.data();
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          for (int f = 0; f < m; ++f) {
            const double g =
                dout[(static_cast<Eigen::Index>(oy) * ow + ox) * m + f];
            if (bn->requires_grad) bn->grad[f] += g;
            for (int dy = 0; dy < kh; ++dy)
              for (int dx = 0; dx < kw; ++dx) {
                const long xoff = (static_cast<long>(oy * stride + dy) * w +
                                   (ox * stride + dx)) * c;
                const long koff = (static_cast<long>(dy) * kw + dx) * c * m + f;
                for (int ch = 0; ch < c; ++ch) {
                  if (kn->requires_grad)
                    kn->grad[koff + static_cast<long>(ch) * m] += g * x[xoff + ch];
                  if (in->requires_grad)
                    in->grad[xoff + ch] += g * kk[koff + static_cast<long>(ch) * m];
                }
              }
          }
    });
  }
  return r;
}

}  // namespace varcaps
