#include "varcaps/variational.hpp"

#include "varcaps/ops.hpp"

#include <stdexcept>

namespace varcaps {

GaussianCapsule split_mean_logvar(const Tensor& top_capsules) {
  if (top_capsules.rank() < 1 || top_capsules.shape()[0] % 2 != 0)
    throw std::invalid_argument(
        "split_mean_logvar: first axis of " + shape_str(top_capsules.shape()) +
        " must be even (mean bank stacked on log-variance bank)");
  const int k = top_capsules.shape()[0] / 2;
  return {narrow(top_capsules, 0, k), narrow(top_capsules, k, k)};
}

Tensor reparameterize(const GaussianCapsule& g, const Tensor& noise) {
  require_same_shape("reparameterize", g.mu, g.logvar);
  require_same_shape("reparameterize", g.mu, noise);
  return add(g.mu, mul(exp(scale(g.logvar, 0.5)), noise));
}

Tensor kl_divergence(const GaussianCapsule& g) {
  require_same_shape("kl_divergence", g.mu, g.logvar);
  Tensor per_coord = sub(add(exp(g.logvar), mul(g.mu, g.mu)),
                         add(g.logvar, 1.0));
  return scale(sum(per_coord), 0.5);
}

Tensor eval_latent(const GaussianCapsule& g) { return g.mu; }

}  // namespace varcaps
