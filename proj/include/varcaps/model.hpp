#pragma once

#include "varcaps/capsule.hpp"
#include "varcaps/config.hpp"
#include "varcaps/decoder.hpp"
#include "varcaps/rng.hpp"
#include "varcaps/variational.hpp"

#include <vector>

namespace varcaps {

/// Master copies of every trainable tensor. Bound onto a fresh tape each
/// forward pass; the optimizer writes updates back here.
struct ModelParams {
  StemParams stem;
  Tensor transform;  // [num_primary, 2K, class_dim, primary_dim]
  std::vector<Tensor> dec_w, dec_b;  // per non-root decoder layer
  Tensor recon_w, recon_b;           // optional reconstruction head
  bool has_recon = false;

  bool has_decoder() const { return !dec_w.empty(); }
};

ModelParams init_capsule_params(const ModelConfig& cfg, Rng& rng);
void init_decoder_params(ModelParams& params, const HierarchyTopology& topology,
                         Rng& rng);
void init_recon_params(ModelParams& params, const ModelConfig& cfg, Rng& rng);

/// Stem, prediction transform and routing over the doubled class bank, split
/// into the per-class Gaussian. Works with tracked or constant parameters.
GaussianCapsule capsule_forward(const Tensor& image, const ModelConfig& cfg,
                                const StemParams& stem, const Tensor& transform);

/// Mean-bank activity norms, the per-class presence scores.
Tensor class_norms(const GaussianCapsule& g);

/// latent [K,d] -> sigmoid(latent_flat * W + b) reshaped to the image.
Tensor reconstruct(const Tensor& latent, const ModelConfig& cfg,
                   const Tensor& recon_w, const Tensor& recon_b);

}  // namespace varcaps
