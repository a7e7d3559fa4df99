#pragma once

#include "varcaps/tensor.hpp"

namespace varcaps {

// Elementwise. Binary forms require equal shapes; the scalar forms are the
// only broadcasting this library does.
Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor scale(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // domain error on non-positive input
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);

// Structure. All are differentiable views-by-copy.
Tensor reshape(const Tensor& a, Shape shape);
Tensor narrow(const Tensor& a, int start, int len);  // rows along axis 0
Tensor concat0(const Tensor& a, const Tensor& b);

// Linear algebra and reductions.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& a, int axis);
Tensor l2_norm(const Tensor& a, int axis);  // axis removed from the shape
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

/// Valid 2-d convolution over an [H,W,C] image with [kh,kw,C,M] kernels and
/// an [M] bias, producing [oh,ow,M].
Tensor conv2d(const Tensor& image, const Tensor& kernel, const Tensor& bias,
              int stride);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

}  // namespace varcaps
