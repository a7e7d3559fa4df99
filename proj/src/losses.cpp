#include "varcaps/losses.hpp"

#include "varcaps/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace varcaps {

void MarginLossConfig::validate() const {
  if (!(m_plus > 0.0 && m_plus < 1.0) || !(m_minus > 0.0 && m_minus < 1.0))
    throw std::invalid_argument("margin loss: thresholds must lie in (0,1)");
  if (m_minus >= m_plus)
    throw std::invalid_argument("margin loss: m_minus must be below m_plus");
  if (lambda < 0.0)
    throw std::invalid_argument("margin loss: lambda must be nonnegative");
}

void TotalLossConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(recon_weight >= 0.0) ||
      !std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(recon_weight))
    throw std::invalid_argument("total loss: weights must be finite and nonnegative");
}

Tensor capsule_margin_loss(const Tensor& v_norms, const Tensor& labels,
                           const MarginLossConfig& cfg) {
  cfg.validate();
  require_same_shape("capsule_margin_loss", v_norms, labels);
  for (Eigen::Index i = 0; i < v_norms.numel(); ++i) {
    const double n = v_norms.array()[i];
    if (n < 0.0 || n >= 1.0)
      throw std::domain_error("capsule_margin_loss: norm " + std::to_string(n) +
                              " outside [0,1) — input was not squashed");
  }
  for (Eigen::Index i = 0; i < labels.numel(); ++i) {
    const double t = labels.array()[i];
    if (t != 0.0 && t != 1.0)
      throw std::invalid_argument("capsule_margin_loss: labels must be one-hot");
  }

  Tensor present = relu(add(scale(v_norms, -1.0), cfg.m_plus));   // m+ - |v|
  Tensor absent = relu(sub(v_norms, cfg.m_minus));                // |v| - m-
  Tensor pos = mul(labels, mul(present, present));
  Tensor neg = mul(add(scale(labels, -1.0), 1.0), mul(absent, absent));
  return sum(add(pos, scale(neg, cfg.lambda)));
}

Tensor hinge_loss(const Tensor& targets, const Tensor& scores) {
  require_same_shape("hinge_loss", targets, scores);
  for (Eigen::Index i = 0; i < targets.numel(); ++i) {
    const double t = targets.array()[i];
    if (t != -1.0 && t != 1.0)
      throw std::invalid_argument("hinge_loss: targets must be -1 or +1");
  }
  return mean(relu(add(scale(mul(targets, scores), -1.0), 1.0)));
}

Tensor norms_to_scores(const Tensor& v_norms) {
  return add(scale(v_norms, 2.0), -1.0);
}

Tensor labels_to_targets(const Tensor& labels) {
  return add(scale(labels, 2.0), -1.0);
}

Tensor reconstruction_loss(const Tensor& reconstruction, const Tensor& image) {
  require_same_shape("reconstruction_loss", reconstruction, image);
  Tensor diff = sub(reconstruction, image);
  return mean(mul(diff, diff));
}

Tensor total_loss(const Tensor& marginal, const Tensor& capsule,
                  const Tensor& kl, const Tensor& recon,
                  const TotalLossConfig& cfg) {
  cfg.validate();
  const struct { const char* name; const Tensor* t; } parts[] = {
      {"marginal", &marginal}, {"capsule", &capsule}, {"kl", &kl},
      {"reconstruction", &recon}};
  for (const auto& p : parts)
    if (!std::isfinite(p.t->value()))
      throw std::domain_error(std::string("total_loss: component '") + p.name +
                              "' is not finite");
  Tensor acc = add(marginal, scale(capsule, cfg.alpha));
  acc = add(acc, scale(kl, cfg.beta));
  if (cfg.recon_weight != 0.0) acc = add(acc, scale(recon, cfg.recon_weight));
  return acc;
}

}  // namespace varcaps
