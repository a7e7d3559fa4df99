#pragma once

#include "varcaps/tensor.hpp"

namespace varcaps {

/// Per-class diagonal Gaussian over the latent capsule space: mu and log
/// sigma^2, each [K, d]. Log variance keeps sigma^2 = exp(logvar) positive by
/// construction.
struct GaussianCapsule {
  Tensor mu;
  Tensor logvar;
};

/// Splits a doubled capsule bank [2K, d] into its mean half (first K rows)
/// and log-variance half (last K rows), class order preserved.
GaussianCapsule split_mean_logvar(const Tensor& top_capsules);

/// z = mu + exp(0.5 * logvar) * noise. The standard-normal draw is an input,
/// never sampled internally, so callers own determinism.
Tensor reparameterize(const GaussianCapsule& g, const Tensor& noise);

/// Closed-form KL from N(mu, diag(sigma^2)) to N(0, I):
/// 0.5 * sum(sigma^2 + mu^2 - 1 - log sigma^2). Nonnegative, zero only for
/// the standard normal itself.
Tensor kl_divergence(const GaussianCapsule& g);

/// Deterministic evaluation-time latent: the distribution mode, mu.
Tensor eval_latent(const GaussianCapsule& g);

}  // namespace varcaps
