#include "varcaps/decoder.hpp"

#include "varcaps/ops.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

namespace varcaps {

namespace {
using Node = std::shared_ptr<detail::TensorNode>;

std::string normalize_token(const std::string& raw) {
  std::size_t b = 0, e = raw.size();
  while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string tok = raw.substr(b, e - b);
  for (char& c : tok)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return tok;
}
}  // namespace

int CharacteristicVocabulary::lookup(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? -1 : it->second;
}

CharacteristicVocabulary CharacteristicVocabulary::from_tokens(
    std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  CharacteristicVocabulary vocab;
  vocab.tokens = std::move(tokens);
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    if (vocab.tokens[i].empty())
      throw std::invalid_argument("vocabulary: empty token");
    vocab.index[vocab.tokens[i]] = static_cast<int>(i);
  }
  return vocab;
}

CharacteristicVocabulary build_vocabulary(const DatasetManifest& manifest) {
  if (manifest.samples.empty())
    throw std::invalid_argument("build_vocabulary: empty manifest");
  std::vector<std::string> tokens;
  for (const SampleRecord& rec : manifest.samples) {
    if (rec.characteristics.empty())
      throw std::invalid_argument("build_vocabulary: sample '" +
                                  rec.image_name + "' has no characteristics");
    for (const std::string& raw : rec.characteristics) {
      const std::string tok = normalize_token(raw);
      if (tok.empty())
        throw std::invalid_argument("build_vocabulary: sample '" +
                                    rec.image_name + "' has a blank token");
      tokens.push_back(tok);
    }
  }
  return CharacteristicVocabulary::from_tokens(std::move(tokens));
}

void save_vocabulary(const CharacteristicVocabulary& vocab,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  for (const std::string& tok : vocab.tokens) out << tok << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

CharacteristicVocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty())
      throw std::runtime_error("vocabulary " + path + ": blank line");
    tokens.push_back(line);
  }
  if (tokens.empty())
    throw std::runtime_error("vocabulary " + path + " is empty");
  if (!std::is_sorted(tokens.begin(), tokens.end()) ||
      std::adjacent_find(tokens.begin(), tokens.end()) != tokens.end())
    throw std::runtime_error("vocabulary " + path +
                             " is not sorted and unique");
  return CharacteristicVocabulary::from_tokens(std::move(tokens));
}

void HierarchyTopology::validate() const {
  if (layers.size() < 2)
    throw std::invalid_argument("topology: need at least root and leaf layers");
  for (int size : layers)
    if (size < 1) throw std::invalid_argument("topology: empty layer");
  if (parent_of.size() != layers.size() - 1)
    throw std::invalid_argument("topology: parent table does not cover every "
                                "non-root layer");
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    if (static_cast<int>(parent_of[l].size()) != layers[l + 1])
      throw std::invalid_argument(
          "topology: layer " + std::to_string(l + 1) + " has " +
          std::to_string(parent_of[l].size()) + " parent entries for " +
          std::to_string(layers[l + 1]) + " nodes");
    for (int p : parent_of[l])
      if (p < 0 || p >= layers[l])
        throw std::invalid_argument("topology: parent index out of range");
  }
}

std::vector<int> HierarchyTopology::leaf_chain(int leaf) const {
  if (leaf < 0 || leaf >= num_leaves())
    throw std::out_of_range("topology: leaf " + std::to_string(leaf) +
                            " out of range");
  std::vector<int> chain{leaf};
  for (std::size_t l = parent_of.size(); l-- > 0;)
    chain.push_back(parent_of[l][static_cast<std::size_t>(chain.back())]);
  std::reverse(chain.begin(), chain.end());
  return chain;
}

HierarchyTopology build_topology(int num_roots, int vocab_size,
                                 const std::vector<int>& hidden_sizes) {
  if (num_roots < 1 || vocab_size < 1)
    throw std::invalid_argument("build_topology: need num_roots >= 1 and "
                                "vocab_size >= 1");
  HierarchyTopology topo;
  topo.layers.push_back(num_roots);
  for (int h : hidden_sizes) {
    if (h < 1) throw std::invalid_argument("build_topology: empty hidden layer");
    topo.layers.push_back(h);
  }
  topo.layers.push_back(vocab_size);
  for (std::size_t l = 0; l + 1 < topo.layers.size(); ++l) {
    std::vector<int> parents(static_cast<std::size_t>(topo.layers[l + 1]));
    for (int n = 0; n < topo.layers[l + 1]; ++n)
      parents[static_cast<std::size_t>(n)] = n % topo.layers[l];
    topo.parent_of.push_back(std::move(parents));
  }
  topo.validate();
  return topo;
}

Tensor tree_affine(const Tensor& parent_acts, const Tensor& w, const Tensor& b,
                   const std::vector<int>& parent_idx) {
  if (parent_acts.rank() != 1 || w.rank() != 1 || b.rank() != 1)
    throw std::invalid_argument("tree_affine: expected rank-1 tensors");
  const int p = parent_acts.shape()[0];
  const int n = w.shape()[0];
  if (b.shape()[0] != n || static_cast<int>(parent_idx.size()) != n)
    throw std::invalid_argument("tree_affine: weight/bias/parent sizes differ");
  for (int idx : parent_idx)
    if (idx < 0 || idx >= p)
      throw std::invalid_argument("tree_affine: parent index out of range");

  Array out(n);
  for (int i = 0; i < n; ++i)
    out[i] = w.array()[i] * parent_acts.array()[parent_idx[static_cast<std::size_t>(i)]] +
             b.array()[i];

  Tape* tape = recording_tape({&parent_acts, &w, &b});
  Tensor r = make_result("tree_affine", {n}, std::move(out), tape);
  if (tape) {
    Node pn = parent_acts.node(), wn = w.node(), bn = b.node(), rn = r.node();
    tape->record({parent_acts, w, b}, r, [pn, wn, bn, rn, parent_idx, n] {
      for (int i = 0; i < n; ++i) {
        const double g = rn->grad[i];
        const int pi = parent_idx[static_cast<std::size_t>(i)];
        if (wn->requires_grad) wn->grad[i] += g * pn->values[pi];
        if (bn->requires_grad) bn->grad[i] += g;
        if (pn->requires_grad) pn->grad[pi] += g * wn->values[i];
      }
    });
  }
  return r;
}

Tensor decode_logits(const Tensor& latent, const HierarchyTopology& topology,
                     const DecoderParams& params) {
  topology.validate();
  if (latent.numel() != topology.num_roots())
    throw std::invalid_argument(
        "decode: latent " + shape_str(latent.shape()) + " does not provide " +
        std::to_string(topology.num_roots()) + " root activations");
  const std::size_t depth = topology.parent_of.size();
  if (params.weights.size() != depth || params.biases.size() != depth)
    throw std::invalid_argument("decode: params do not match topology depth");

  Tensor acts = reshape(latent, {topology.num_roots()});
  Tensor pre;
  for (std::size_t l = 0; l < depth; ++l) {
    pre = tree_affine(acts, params.weights[l], params.biases[l],
                      topology.parent_of[l]);
    if (l + 1 < depth) acts = sigmoid(pre);
  }
  return pre;
}

Tensor decode(const Tensor& latent, const HierarchyTopology& topology,
              const DecoderParams& params) {
  return sigmoid(decode_logits(latent, topology, params));
}

Tensor threshold_multihot(const Tensor& probs, double tau) {
  if (!(tau > 0.0 && tau < 1.0))
    throw std::invalid_argument("threshold_multihot: tau must lie in (0,1)");
  for (int i = 0; i < probs.numel(); ++i) {
    const double p = probs.array()[i];
    if (!(p > 0.0 && p < 1.0))
      throw std::domain_error(
          "threshold_multihot: probability outside (0,1) at index " +
          std::to_string(i));
  }
  Array out(probs.numel());
  for (int i = 0; i < probs.numel(); ++i)
    out[i] = probs.array()[i] >= tau ? 1.0 : 0.0;
  return Tensor(probs.shape(), std::move(out));
}

}  // namespace varcaps
