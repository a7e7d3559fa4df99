#include "varcaps/trainer.hpp"

#include "varcaps/losses.hpp"
#include "varcaps/ops.hpp"
#include "varcaps/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace varcaps {

std::optional<double> Metrics::recall() const {
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> Metrics::precision() const {
  if (tp + fp == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double Metrics::exact_match_accuracy() const {
  if (samples == 0)
    throw std::logic_error("exact_match_accuracy: no samples accumulated");
  return static_cast<double>(exact_matches) / static_cast<double>(samples);
}

void accumulate_sample(Metrics& m, const std::vector<bool>& predicted,
                       const std::vector<bool>& truth,
                       int unknown_truth_tokens) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("accumulate_sample: bitmap sizes differ");
  bool exact = unknown_truth_tokens == 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && truth[i]) ++m.tp;
    else if (predicted[i] && !truth[i]) ++m.fp;
    else if (!predicted[i] && truth[i]) ++m.fn;
    if (predicted[i] != truth[i]) exact = false;
  }
  m.fn += unknown_truth_tokens;
  ++m.samples;
  if (exact) ++m.exact_matches;
}

namespace {

std::string fmt_ratio(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

std::string metrics_kv(const Metrics& m) {
  std::ostringstream out;
  out << "recall=" << fmt_ratio(m.recall()) << "\n"
      << "precision=" << fmt_ratio(m.precision()) << "\n"
      << "exact_match_accuracy=" << fmt_ratio(m.exact_match_accuracy()) << "\n"
      << "tp=" << m.tp << "\nfp=" << m.fp << "\nfn=" << m.fn << "\n";
  return out.str();
}

std::string metrics_table(const Metrics& m) {
  std::ostringstream out;
  out << "metric                 value\n"
      << "recall                 " << fmt_ratio(m.recall()) << "\n"
      << "precision              " << fmt_ratio(m.precision()) << "\n"
      << "exact_match_accuracy   " << fmt_ratio(m.exact_match_accuracy()) << "\n"
      << "tp/fp/fn               " << m.tp << "/" << m.fp << "/" << m.fn << "\n"
      << "samples                " << m.samples << "\n";
  return out.str();
}

LoadedDataset load_dataset(const std::string& data_dir,
                           const ModelConfig& model) {
  LoadedDataset data;
  data.manifest = load_manifest((fs::path(data_dir) / "manifest.csv").string());
  data.split = load_split((fs::path(data_dir) / "train.txt").string(),
                          (fs::path(data_dir) / "test.txt").string(),
                          data.manifest);

  std::map<std::string, int> class_ids;
  for (const SampleRecord& s : data.manifest.samples)
    class_ids.emplace(s.domain + "/" + s.type_name, 0);
  for (auto& [key, id] : class_ids) {
    id = static_cast<int>(data.class_names.size());
    data.class_names.push_back(key);
  }

  ImageOptions img_opts;
  img_opts.grayscale = model.channels == 1;
  for (std::size_t i = 0; i < data.manifest.samples.size(); ++i) {
    SampleRecord& s = data.manifest.samples[i];
    s.pixels = load_image((fs::path(data_dir) / s.image_name).string(),
                          model.image_size, model.image_size, img_opts);
    s.pixels_loaded = true;
    data.images.push_back(s.pixels);
    data.labels.push_back(class_ids.at(s.domain + "/" + s.type_name));
    if (data.split.train_names.count(s.image_name))
      data.train_indices.push_back(static_cast<int>(i));
    else if (data.split.test_names.count(s.image_name))
      data.test_indices.push_back(static_cast<int>(i));
  }
  return data;
}

namespace {

// Plain SGD over master tensors, reading gradients from their tape-bound
// copies. Masters are replaced, never mutated in place.
struct Sgd {
  double lr;
  double momentum;
  std::vector<Array> velocity;

  void step(const std::vector<Tensor*>& masters,
            const std::vector<Tensor>& bound) {
    if (velocity.empty() && momentum > 0.0)
      for (const Tensor* m : masters) velocity.push_back(Array::Zero(m->numel()));
    for (std::size_t i = 0; i < masters.size(); ++i) {
      const Array& g = bound[i].grad();
      Array next;
      if (momentum > 0.0) {
        velocity[i] = momentum * velocity[i] + g;
        next = masters[i]->array() - lr * velocity[i];
      } else {
        next = masters[i]->array() - lr * g;
      }
      *masters[i] = Tensor(masters[i]->shape(), std::move(next));
    }
  }
};

Tensor one_hot(int k, int index) {
  Array v = Array::Zero(k);
  v[index] = 1.0;
  return Tensor({k}, v);
}

ModelConfig resolve_model(const RunConfig& cfg, const LoadedDataset& data) {
  ModelConfig model = cfg.model;
  const int k = static_cast<int>(data.class_names.size());
  if (model.num_classes == 0) model.num_classes = k;
  if (model.num_classes != k)
    throw std::invalid_argument(
        "config num_classes " + std::to_string(model.num_classes) +
        " does not match the dataset's " + std::to_string(k) + " classes");
  model.validate();
  return model;
}

void require_class_coverage(const LoadedDataset& data) {
  std::vector<int> per_class(data.class_names.size(), 0);
  for (int idx : data.train_indices)
    ++per_class[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(idx)])];
  for (std::size_t c = 0; c < per_class.size(); ++c)
    if (per_class[c] == 0)
      throw std::invalid_argument("training split has no sample of class '" +
                                  data.class_names[c] + "'");
}

std::vector<bool> truth_bitmap(const SampleRecord& sample,
                               const CharacteristicVocabulary& vocab,
                               int* unknown) {
  std::vector<bool> truth(static_cast<std::size_t>(vocab.size()), false);
  int missing = 0;
  for (const std::string& tok : sample.characteristics) {
    const int idx = vocab.lookup(tok);
    if (idx < 0)
      ++missing;
    else
      truth[static_cast<std::size_t>(idx)] = true;
  }
  if (unknown) *unknown = missing;
  return truth;
}

// Binary cross-entropy from leaf logits, the numerically stable form
// mean(max(l,0) - l*y + log(1 + exp(-|l|))).
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  Tensor softplus_term = log(add(exp(scale(abs(logits), -1.0)), 1.0));
  return mean(add(sub(relu(logits), mul(logits, targets)), softplus_term));
}

HierarchyTopology decoder_topology(const ModelConfig& model, int vocab_size) {
  const int roots = model.num_classes * model.class_dim;
  const int hidden = model.decoder_hidden > 0 ? model.decoder_hidden : vocab_size;
  return build_topology(roots, vocab_size, {hidden});
}

}  // namespace

TrainResult train_capsule_stage(const RunConfig& cfg, const LoadedDataset& data) {
  cfg.validate();
  ModelConfig model = resolve_model(cfg, data);
  require_class_coverage(data);

  Rng rng(cfg.seed);
  ModelParams params = init_capsule_params(model, rng);
  if (cfg.total.recon_weight > 0.0) init_recon_params(params, model, rng);

  Sgd sgd{cfg.capsules.learning_rate, cfg.capsules.momentum, {}};
  std::vector<double> epoch_losses;

  std::vector<int> order = data.train_indices;
  const int n = static_cast<int>(order.size());
  for (int epoch = 0; epoch < cfg.capsules.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    for (int start = 0; start < n; start += cfg.capsules.batch_size) {
      const int batch_id = start / cfg.capsules.batch_size;
      const int end = std::min(n, start + cfg.capsules.batch_size);
      double last_margin = 0.0, last_hinge = 0.0, last_kl = 0.0;
      try {
        Tape tape;
        StemParams stem{tape.leaf(params.stem.conv1_w),
                        tape.leaf(params.stem.conv1_b),
                        tape.leaf(params.stem.conv2_w),
                        tape.leaf(params.stem.conv2_b)};
        Tensor transform = tape.leaf(params.transform);
        Tensor recon_w, recon_b;
        if (params.has_recon) {
          recon_w = tape.leaf(params.recon_w);
          recon_b = tape.leaf(params.recon_b);
        }

        Tensor batch_loss = Tensor::scalar(0.0);
        for (int i = start; i < end; ++i) {
          const int idx = order[static_cast<std::size_t>(i)];
          const Tensor& image = data.images[static_cast<std::size_t>(idx)];
          GaussianCapsule g = capsule_forward(image, model, stem, transform);
          Tensor norms = class_norms(g);
          Tensor labels = one_hot(model.num_classes,
                                  data.labels[static_cast<std::size_t>(idx)]);
          Tensor margin = capsule_margin_loss(norms, labels, cfg.margin);
          Tensor hinge =
              hinge_loss(labels_to_targets(labels), norms_to_scores(norms));
          Tensor kl = kl_divergence(g);
          last_margin = margin.value();
          last_hinge = hinge.value();
          last_kl = kl.value();
          Tensor recon_term = Tensor::scalar(0.0);
          if (params.has_recon) {
            std::vector<double> eps(static_cast<std::size_t>(
                model.num_classes * model.class_dim));
            for (double& e : eps) e = rng.normal();
            Tensor noise({model.num_classes, model.class_dim}, eps);
            Tensor z = reparameterize(g, noise);
            recon_term =
                reconstruction_loss(reconstruct(z, model, recon_w, recon_b), image);
          }
          Tensor total = total_loss(hinge, margin, kl, recon_term, cfg.total);
          epoch_sum += total.value();
          batch_loss = add(batch_loss, total);
        }
        batch_loss = scale(batch_loss, 1.0 / (end - start));
        tape.backward(batch_loss);

        std::vector<Tensor*> masters{&params.stem.conv1_w, &params.stem.conv1_b,
                                     &params.stem.conv2_w, &params.stem.conv2_b,
                                     &params.transform};
        std::vector<Tensor> bound{stem.conv1_w, stem.conv1_b, stem.conv2_w,
                                  stem.conv2_b, transform};
        if (params.has_recon) {
          masters.push_back(&params.recon_w);
          masters.push_back(&params.recon_b);
          bound.push_back(recon_w);
          bound.push_back(recon_b);
        }
        sgd.step(masters, bound);
      } catch (const std::exception& e) {
        std::ostringstream msg;
        msg << "capsule stage aborted at epoch " << epoch << " batch "
            << batch_id << ": " << e.what() << " (last components: margin="
            << last_margin << " hinge=" << last_hinge << " kl=" << last_kl
            << ")";
        throw std::runtime_error(msg.str());
      }
    }
    epoch_losses.push_back(epoch_sum / n);
  }

  TrainResult result;
  result.checkpoint.model = model;
  RunConfig resolved = cfg;
  resolved.model = model;
  result.checkpoint.config_text = resolved.to_text();
  result.checkpoint.has_capsules = true;
  result.checkpoint.params = std::move(params);
  result.checkpoint.class_names = data.class_names;
  result.epoch_losses = std::move(epoch_losses);
  return result;
}

TrainResult train_decoder_stage(const Checkpoint& from, const RunConfig& cfg,
                                const LoadedDataset& data) {
  cfg.validate();
  if (!from.has_capsules)
    throw std::invalid_argument(
        "train_decoder_stage: checkpoint lacks the capsule stage");
  const ModelConfig& model = from.model;
  if (static_cast<int>(data.class_names.size()) != model.num_classes)
    throw std::invalid_argument(
        "train_decoder_stage: dataset classes do not match the checkpoint");

  CharacteristicVocabulary vocab = build_vocabulary(data.manifest);
  if (from.has_decoder && from.vocab.tokens != vocab.tokens)
    throw std::invalid_argument(
        "train_decoder_stage: vocabulary mismatch between checkpoint and "
        "dataset");

  ModelConfig dec_model = model;
  dec_model.decoder_hidden = cfg.model.decoder_hidden;
  HierarchyTopology topology = decoder_topology(dec_model, vocab.size());

  Rng rng(cfg.seed);
  ModelParams params = from.params;  // capsule tensors stay frozen
  init_decoder_params(params, topology, rng);

  // The capsule side is frozen, so each sample's latent is fixed for the
  // whole stage; compute it once on the constant path. The decoder consumes
  // the deterministic mean latent, the same path evaluation reads.
  const int latent_n = model.num_classes * model.class_dim;
  std::vector<Array> mu_cache;
  mu_cache.reserve(data.train_indices.size());
  for (int idx : data.train_indices) {
    GaussianCapsule g =
        capsule_forward(data.images[static_cast<std::size_t>(idx)], model,
                        from.params.stem, from.params.transform);
    mu_cache.push_back(eval_latent(g).array());
  }

  std::vector<std::vector<bool>> targets;
  targets.reserve(data.train_indices.size());
  for (int idx : data.train_indices)
    targets.push_back(truth_bitmap(
        data.manifest.samples[static_cast<std::size_t>(idx)], vocab, nullptr));

  Sgd sgd{cfg.decoder.learning_rate, cfg.decoder.momentum, {}};
  std::vector<double> epoch_losses;
  const int n = static_cast<int>(data.train_indices.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.decoder.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    for (int start = 0; start < n; start += cfg.decoder.batch_size) {
      const int end = std::min(n, start + cfg.decoder.batch_size);
      Tape tape;
      std::vector<Tensor> w_bound, b_bound;
      for (std::size_t l = 0; l < params.dec_w.size(); ++l) {
        w_bound.push_back(tape.leaf(params.dec_w[l]));
        b_bound.push_back(tape.leaf(params.dec_b[l]));
      }
      DecoderParams bound{w_bound, b_bound};

      Tensor batch_loss = Tensor::scalar(0.0);
      for (int i = start; i < end; ++i) {
        const int pos = order[static_cast<std::size_t>(i)];
        Tensor latent({latent_n}, mu_cache[static_cast<std::size_t>(pos)]);

        const std::vector<bool>& truth = targets[static_cast<std::size_t>(pos)];
        Array y(vocab.size());
        for (int t = 0; t < vocab.size(); ++t)
          y[t] = truth[static_cast<std::size_t>(t)] ? 1.0 : 0.0;

        Tensor logits = decode_logits(latent, topology, bound);
        Tensor loss = bce_with_logits(logits, Tensor({vocab.size()}, std::move(y)));
        epoch_sum += loss.value();
        batch_loss = add(batch_loss, loss);
      }
      batch_loss = scale(batch_loss, 1.0 / (end - start));
      tape.backward(batch_loss);

      std::vector<Tensor*> masters;
      std::vector<Tensor> bound_flat;
      for (std::size_t l = 0; l < params.dec_w.size(); ++l) {
        masters.push_back(&params.dec_w[l]);
        masters.push_back(&params.dec_b[l]);
        bound_flat.push_back(w_bound[l]);
        bound_flat.push_back(b_bound[l]);
      }
      sgd.step(masters, bound_flat);
    }
    epoch_losses.push_back(n > 0 ? epoch_sum / n : 0.0);
  }

  TrainResult result;
  result.checkpoint = from;
  result.checkpoint.params = std::move(params);
  result.checkpoint.vocab = std::move(vocab);
  result.checkpoint.topology = std::move(topology);
  result.checkpoint.has_decoder = true;
  RunConfig resolved = cfg;
  resolved.model = dec_model;
  result.checkpoint.config_text = resolved.to_text();
  result.epoch_losses = std::move(epoch_losses);
  return result;
}

TrainResult train_end_to_end(const RunConfig& cfg, const LoadedDataset& data) {
  cfg.validate();
  ModelConfig model = resolve_model(cfg, data);
  require_class_coverage(data);

  CharacteristicVocabulary vocab = build_vocabulary(data.manifest);
  HierarchyTopology topology = decoder_topology(model, vocab.size());

  Rng rng(cfg.seed);
  ModelParams params = init_capsule_params(model, rng);
  init_decoder_params(params, topology, rng);

  Sgd sgd{cfg.capsules.learning_rate, cfg.capsules.momentum, {}};
  std::vector<double> epoch_losses;
  std::vector<int> order = data.train_indices;
  const int n = static_cast<int>(order.size());

  for (int epoch = 0; epoch < cfg.capsules.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    for (int start = 0; start < n; start += cfg.capsules.batch_size) {
      const int end = std::min(n, start + cfg.capsules.batch_size);
      Tape tape;
      StemParams stem{tape.leaf(params.stem.conv1_w),
                      tape.leaf(params.stem.conv1_b),
                      tape.leaf(params.stem.conv2_w),
                      tape.leaf(params.stem.conv2_b)};
      Tensor transform = tape.leaf(params.transform);
      std::vector<Tensor> w_bound, b_bound;
      for (std::size_t l = 0; l < params.dec_w.size(); ++l) {
        w_bound.push_back(tape.leaf(params.dec_w[l]));
        b_bound.push_back(tape.leaf(params.dec_b[l]));
      }
      DecoderParams dec_bound{w_bound, b_bound};

      Tensor batch_loss = Tensor::scalar(0.0);
      for (int i = start; i < end; ++i) {
        const int idx = order[static_cast<std::size_t>(i)];
        GaussianCapsule g = capsule_forward(
            data.images[static_cast<std::size_t>(idx)], model, stem, transform);
        std::vector<double> eps(
            static_cast<std::size_t>(model.num_classes * model.class_dim));
        for (double& e : eps) e = rng.normal();
        Tensor z = reparameterize(g, Tensor({model.num_classes, model.class_dim}, eps));

        int unknown = 0;
        std::vector<bool> truth = truth_bitmap(
            data.manifest.samples[static_cast<std::size_t>(idx)], vocab, &unknown);
        Array y(vocab.size());
        for (int t = 0; t < vocab.size(); ++t)
          y[t] = truth[static_cast<std::size_t>(t)] ? 1.0 : 0.0;

        Tensor loss = bce_with_logits(decode_logits(z, topology, dec_bound),
                                      Tensor({vocab.size()}, std::move(y)));
        epoch_sum += loss.value();
        batch_loss = add(batch_loss, loss);
      }
      batch_loss = scale(batch_loss, 1.0 / (end - start));
      tape.backward(batch_loss);

      std::vector<Tensor*> masters{&params.stem.conv1_w, &params.stem.conv1_b,
                                   &params.stem.conv2_w, &params.stem.conv2_b,
                                   &params.transform};
      std::vector<Tensor> bound{stem.conv1_w, stem.conv1_b, stem.conv2_w,
                                stem.conv2_b, transform};
      for (std::size_t l = 0; l < params.dec_w.size(); ++l) {
        masters.push_back(&params.dec_w[l]);
        masters.push_back(&params.dec_b[l]);
        bound.push_back(w_bound[l]);
        bound.push_back(b_bound[l]);
      }
      sgd.step(masters, bound);
    }
    epoch_losses.push_back(epoch_sum / n);
  }

  TrainResult result;
  result.checkpoint.model = model;
  RunConfig resolved = cfg;
  resolved.model = model;
  result.checkpoint.config_text = resolved.to_text();
  result.checkpoint.has_capsules = true;
  result.checkpoint.has_decoder = true;
  result.checkpoint.params = std::move(params);
  result.checkpoint.class_names = data.class_names;
  result.checkpoint.vocab = std::move(vocab);
  result.checkpoint.topology = std::move(topology);
  result.epoch_losses = std::move(epoch_losses);
  return result;
}

namespace {

Tensor decode_probs_for(const Checkpoint& ckpt, const Tensor& image) {
  GaussianCapsule g = capsule_forward(image, ckpt.model, ckpt.params.stem,
                                      ckpt.params.transform);
  Tensor latent = eval_latent(g);
  DecoderParams dec{ckpt.params.dec_w, ckpt.params.dec_b};
  return decode(latent, ckpt.topology, dec);
}

void require_complete(const Checkpoint& ckpt, const char* op) {
  if (!ckpt.has_capsules || !ckpt.has_decoder)
    throw std::invalid_argument(std::string(op) +
                                ": checkpoint is missing a training stage");
}

}  // namespace

Metrics evaluate(const Checkpoint& ckpt, const LoadedDataset& data, double tau) {
  require_complete(ckpt, "evaluate");
  if (!(tau > 0.0 && tau < 1.0))
    throw std::invalid_argument("evaluate: tau must lie in (0,1)");
  if (data.test_indices.empty())
    throw std::invalid_argument("evaluate: empty test set");

  Metrics m;
  for (int idx : data.test_indices) {
    Tensor probs =
        decode_probs_for(ckpt, data.images[static_cast<std::size_t>(idx)]);
    Tensor hot = threshold_multihot(probs, tau);
    std::vector<bool> predicted(static_cast<std::size_t>(probs.numel()));
    for (int i = 0; i < probs.numel(); ++i) predicted[i] = hot.array()[i] != 0.0;

    int unknown = 0;
    std::vector<bool> truth = truth_bitmap(
        data.manifest.samples[static_cast<std::size_t>(idx)], ckpt.vocab,
        &unknown);
    accumulate_sample(m, predicted, truth, unknown);
  }
  return m;
}

double classification_accuracy(const Checkpoint& ckpt,
                               const LoadedDataset& data,
                               const std::vector<int>& indices) {
  if (!ckpt.has_capsules)
    throw std::invalid_argument("classification_accuracy: capsule stage missing");
  if (indices.empty())
    throw std::invalid_argument("classification_accuracy: no samples");
  int correct = 0;
  for (int idx : indices) {
    GaussianCapsule g =
        capsule_forward(data.images[static_cast<std::size_t>(idx)], ckpt.model,
                        ckpt.params.stem, ckpt.params.transform);
    Tensor norms = class_norms(g);
    int best = 0;
    for (int c = 1; c < norms.numel(); ++c)
      if (norms.array()[c] > norms.array()[best]) best = c;
    if (best == data.labels[static_cast<std::size_t>(idx)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

void emit_report(const Checkpoint& ckpt, const std::string& image_path,
                 const std::string& out_path) {
  require_complete(ckpt, "emit_report");
  ImageOptions opts;
  opts.grayscale = ckpt.model.channels == 1;
  Tensor image =
      load_image(image_path, ckpt.model.image_size, ckpt.model.image_size, opts);
  Tensor probs = decode_probs_for(ckpt, image);

  std::vector<std::pair<double, std::string>> rows;
  for (int i = 0; i < ckpt.vocab.size(); ++i)
    rows.emplace_back(probs.array()[i], ckpt.vocab.tokens[static_cast<std::size_t>(i)]);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report: " + out_path);
  out << "characteristic,probability\n";
  char buf[40];
  for (const auto& [p, tok] : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", p);
    out << tok << "," << buf << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + out_path);
}

}  // namespace varcaps
