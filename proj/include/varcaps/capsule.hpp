#pragma once

#include "varcaps/ops.hpp"
#include "varcaps/tensor.hpp"

namespace varcaps {

/// Dimensions of one routed capsule layer pair.
struct CapsuleLayerSpec {
  int num_lower = 32;
  int num_higher = 1;
  int dim_lower = 8;
  int dim_higher = 16;
  int routing_iterations = 3;

  void validate() const;
};

/// Per-(lower, higher) prediction transform, [num_lower, num_higher,
/// dim_higher, dim_lower].
struct TransformWeights {
  Tensor w;
};

/// Routing variables for one layer pair. b holds the connection logits, c the
/// coupling coefficients (rows over higher capsules sum to 1), s the coupled
/// sums and v the squashed activity vectors.
struct RoutingState {
  Tensor u_hat;  // [num_lower, num_higher, dim_higher]
  Tensor b;      // [num_lower, num_higher]
  Tensor c;      // [num_lower, num_higher]
  Tensor s;      // [num_higher, dim_higher]
  Tensor v;      // [num_higher, dim_higher]
};

/// Convolutional stem emitting the lower capsule bank: a relu convolution
/// followed by a linear capsule convolution whose feature maps reshape into
/// num_primary capsules of capsule_dim each.
struct PrimaryStemSpec {
  int input_height = 32;
  int input_width = 32;
  int channels = 1;
  int conv1_maps = 8;
  int kernel = 9;
  int conv1_stride = 1;
  int conv2_stride = 2;
  int feature_maps = 4;  // capsule convolution output maps
  int capsule_dim = 8;
  int num_primary = 32;

  int conv1_out_h() const { return (input_height - kernel) / conv1_stride + 1; }
  int conv1_out_w() const { return (input_width - kernel) / conv1_stride + 1; }
  int conv2_out_h() const { return (conv1_out_h() - kernel) / conv2_stride + 1; }
  int conv2_out_w() const { return (conv1_out_w() - kernel) / conv2_stride + 1; }

  /// Checks that the stacked feature maps reshape exactly into the
  /// num_primary x capsule_dim capsule bank.
  void validate() const;
};

struct StemParams {
  Tensor conv1_w;  // [kernel, kernel, channels, conv1_maps]
  Tensor conv1_b;  // [conv1_maps]
  Tensor conv2_w;  // [kernel, kernel, conv1_maps, feature_maps]
  Tensor conv2_b;  // [feature_maps]
};

/// v = (|s|^2 / (1 + |s|^2)) * (s / |s|) along the last axis; v = 0 at s = 0.
/// Shrinks the norm into [0, 1) and preserves direction.
Tensor squash(const Tensor& s);

/// Prediction vectors u_hat[i,j,:] = W[i,j] * u[i,:].
Tensor predict(const Tensor& u, const TransformWeights& w);

/// Agreement between one prediction and one activity vector: their inner
/// product.
Tensor agreement(const Tensor& u_hat_ij, const Tensor& v_j);

/// Coupled sums s[j,:] = sum_i c[i,j] * u_hat[i,j,:].
Tensor coupling_sum(const Tensor& c, const Tensor& u_hat);

/// All pairwise agreements: out[i,j] = <u_hat[i,j,:], v[j,:]>.
Tensor pairwise_agreement(const Tensor& u_hat, const Tensor& v);

/// One routing pass: c = softmax(b) over the higher axis, s = coupled sum,
/// v = squash(s), b += pairwise agreement.
RoutingState routing_iteration(const RoutingState& state);

/// Routing-by-agreement: b starts at zero and routing_iteration runs exactly
/// spec.routing_iterations times. Returns the final activity vectors and
/// couplings; gradients flow through every unrolled iteration.
std::pair<Tensor, Tensor> dynamic_routing(const Tensor& u_hat,
                                          const CapsuleLayerSpec& spec);

/// Image -> lower capsule bank [num_primary, capsule_dim] via the stem.
Tensor primary_capsules(const Tensor& image, const PrimaryStemSpec& stem,
                        const StemParams& params);

}  // namespace varcaps
