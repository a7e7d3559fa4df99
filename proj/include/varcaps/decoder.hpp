#pragma once

#include "varcaps/dataset.hpp"
#include "varcaps/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace varcaps {

/// The cross-domain characteristic token set, lexicographically ordered so
/// token indices are stable across runs.
struct CharacteristicVocabulary {
  std::vector<std::string> tokens;
  std::map<std::string, int> index;

  int size() const { return static_cast<int>(tokens.size()); }
  /// Token position, or -1 when unknown.
  int lookup(const std::string& token) const;

  static CharacteristicVocabulary from_tokens(std::vector<std::string> tokens);
};

/// Union of all characteristic tokens in the manifest, normalized and
/// ordered. Order-independent: shuffling manifest rows cannot change it.
CharacteristicVocabulary build_vocabulary(const DatasetManifest& manifest);

/// Plain-text serialization, one token per line in index order, LF
/// terminated; bit-exact for checkpoint compatibility.
void save_vocabulary(const CharacteristicVocabulary& vocab,
                     const std::string& path);
CharacteristicVocabulary load_vocabulary(const std::string& path);

/// Decoder tree: layer 0 has one node per latent capsule coordinate, the
/// leaf layer one node per vocabulary token, and every non-root node is
/// connected to exactly one parent in the previous layer.
struct HierarchyTopology {
  std::vector<int> layers;                  // sizes, root layer first
  std::vector<std::vector<int>> parent_of;  // [L][n]: parent of node n in layer L+1

  int num_roots() const { return layers.front(); }
  int num_leaves() const { return layers.back(); }
  void validate() const;

  /// Node indices on the leaf's unique path, root first, leaf last.
  std::vector<int> leaf_chain(int leaf) const;
  int leaf_root(int leaf) const { return leaf_chain(leaf).front(); }
};

/// Builds the tree with round-robin parent assignment (child n of a layer
/// attaches to node n mod previous-layer-size), so per-parent child counts
/// differ by at most 1. hidden_sizes may be empty for a depth-1 forest.
HierarchyTopology build_topology(int num_roots, int vocab_size,
                                 const std::vector<int>& hidden_sizes);

/// Scalar weight and bias per non-root node; fan-in is exactly 1 by
/// construction, so richer per-edge maps would add nothing.
struct DecoderParams {
  std::vector<Tensor> weights;  // [layer size] per non-root layer
  std::vector<Tensor> biases;
};

/// pre[n] = w[n] * parent_acts[parent_idx[n]] + b[n]; the single recorded
/// primitive behind the parent-only connectivity.
Tensor tree_affine(const Tensor& parent_acts, const Tensor& w, const Tensor& b,
                   const std::vector<int>& parent_idx);

/// Leaf pre-activations; hidden nodes apply sigmoid internally.
Tensor decode_logits(const Tensor& latent, const HierarchyTopology& topology,
                     const DecoderParams& params);

/// Characteristic probabilities in (0,1), one per vocabulary token. A leaf's
/// value depends only on its root-to-leaf ancestor chain.
Tensor decode(const Tensor& latent, const HierarchyTopology& topology,
              const DecoderParams& params);

/// Multi-hot thresholding, boundary inclusive: 1 where probs >= tau.
Tensor threshold_multihot(const Tensor& probs, double tau);

}  // namespace varcaps
