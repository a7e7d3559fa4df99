#include "varcaps/model.hpp"

#include "varcaps/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace varcaps {

namespace {

Tensor random_normal(Rng& rng, Shape shape, double stddev) {
  std::vector<double> vals(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : vals) v = rng.normal() * stddev;
  return Tensor(std::move(shape), vals);
}

}  // namespace

ModelParams init_capsule_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.num_classes < 1)
    throw std::invalid_argument("init_capsule_params: num_classes must be set");
  const PrimaryStemSpec stem = cfg.stem();
  ModelParams p;
  p.stem.conv1_w = random_normal(
      rng, {stem.kernel, stem.kernel, stem.channels, stem.conv1_maps},
      std::sqrt(2.0 / (stem.kernel * stem.kernel * stem.channels)));
  p.stem.conv1_b = Tensor::zeros({stem.conv1_maps});
  p.stem.conv2_w = random_normal(
      rng, {stem.kernel, stem.kernel, stem.conv1_maps, stem.feature_maps},
      std::sqrt(1.0 / (stem.kernel * stem.kernel * stem.conv1_maps)));
  p.stem.conv2_b = Tensor::zeros({stem.feature_maps});
  p.transform = random_normal(
      rng, {cfg.num_primary, 2 * cfg.num_classes, cfg.class_dim, cfg.primary_dim},
      0.5);
  return p;
}

void init_decoder_params(ModelParams& params, const HierarchyTopology& topology,
                         Rng& rng) {
  topology.validate();
  params.dec_w.clear();
  params.dec_b.clear();
  for (std::size_t l = 0; l + 1 < topology.layers.size(); ++l) {
    const int n = topology.layers[l + 1];
    params.dec_w.push_back(random_normal(rng, {n}, 0.5));
    params.dec_b.push_back(Tensor::zeros({n}));
  }
}

void init_recon_params(ModelParams& params, const ModelConfig& cfg, Rng& rng) {
  const int latent = cfg.num_classes * cfg.class_dim;
  const int pixels = cfg.image_size * cfg.image_size * cfg.channels;
  params.recon_w = random_normal(rng, {latent, pixels},
                                 std::sqrt(1.0 / latent));
  params.recon_b = Tensor::zeros({1, pixels});
  params.has_recon = true;
}

GaussianCapsule capsule_forward(const Tensor& image, const ModelConfig& cfg,
                                const StemParams& stem, const Tensor& transform) {
  Tensor u = primary_capsules(image, cfg.stem(), stem);
  Tensor u_hat = predict(u, TransformWeights{transform});
  auto [v, c] = dynamic_routing(u_hat, cfg.routing_spec());
  return split_mean_logvar(v);
}

Tensor class_norms(const GaussianCapsule& g) { return l2_norm(g.mu, 1); }

Tensor reconstruct(const Tensor& latent, const ModelConfig& cfg,
                   const Tensor& recon_w, const Tensor& recon_b) {
  Tensor flat = reshape(latent, {1, latent.numel()});
  Tensor pre = add(matmul(flat, recon_w), recon_b);
  return reshape(sigmoid(pre), {cfg.image_size, cfg.image_size, cfg.channels});
}

}  // namespace varcaps
