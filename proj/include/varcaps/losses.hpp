#pragma once

#include "varcaps/tensor.hpp"

namespace varcaps {

struct MarginLossConfig {
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 0.5;  // negative sample loss rate

  void validate() const;
};

struct TotalLossConfig {
  double alpha = 0.5;
  double beta = 0.005;
  double recon_weight = 0.0;  // 0 disables the reconstruction term

  void validate() const;
};

/// Per-class margin loss over activity-vector norms:
/// sum_c [ T_c max(0, m+ - |v_c|)^2 + lambda (1 - T_c) max(0, |v_c| - m-)^2 ].
/// Norms outside [0, 1) are an error — they indicate a missing squash.
Tensor capsule_margin_loss(const Tensor& v_norms, const Tensor& labels,
                           const MarginLossConfig& cfg);

/// mean_c max(0, 1 - t_c * y_c) with targets t in {-1, +1}.
Tensor hinge_loss(const Tensor& targets, const Tensor& scores);

/// Maps capsule norms in [0, 1) onto hinge scores in [-1, 1).
Tensor norms_to_scores(const Tensor& v_norms);

/// Maps one-hot labels onto hinge targets in {-1, +1}.
Tensor labels_to_targets(const Tensor& labels);

/// Mean squared error between a reconstruction and the input image.
Tensor reconstruction_loss(const Tensor& reconstruction, const Tensor& image);

/// marginal + alpha * capsule + beta * kl + recon_weight * recon.
Tensor total_loss(const Tensor& marginal, const Tensor& capsule,
                  const Tensor& kl, const Tensor& recon,
                  const TotalLossConfig& cfg);

}  // namespace varcaps
