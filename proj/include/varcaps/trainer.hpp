#pragma once

#include "varcaps/checkpoint.hpp"
#include "varcaps/config.hpp"
#include "varcaps/dataset.hpp"

#include <optional>
#include <string>
#include <vector>

namespace varcaps {

/// Micro-averaged multi-label counts over (sample, token) pairs.
/// Undefined-denominator ratios are reported as absent, never as 0/0.
struct Metrics {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long samples = 0;
  long long exact_matches = 0;

  std::optional<double> recall() const;
  std::optional<double> precision() const;
  double exact_match_accuracy() const;
};

/// Adds one sample's prediction/truth bitmaps over the vocabulary.
/// `unknown_truth_tokens` counts truth tokens outside the vocabulary; they
/// can never be predicted and are false negatives.
void accumulate_sample(Metrics& m, const std::vector<bool>& predicted,
                       const std::vector<bool>& truth,
                       int unknown_truth_tokens);

/// Stable key=value lines: recall, precision, exact_match_accuracy, tp, fp, fn.
std::string metrics_kv(const Metrics& m);
std::string metrics_table(const Metrics& m);

/// Manifest, split, pixels and class labels resolved against a data
/// directory laid out as manifest.csv / train.txt / test.txt / images.
struct LoadedDataset {
  DatasetManifest manifest;
  SplitSpec split;
  std::vector<Tensor> images;  // aligned with manifest.samples
  std::vector<int> labels;     // class index per sample
  std::vector<std::string> class_names;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

LoadedDataset load_dataset(const std::string& data_dir,
                           const ModelConfig& model);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;  // mean per-sample loss per epoch
};

/// Stage 1: minimizes the combined hinge + margin + KL objective over the
/// stem and prediction transform; the mean and log-variance banks are routed
/// and updated in the same backward pass.
TrainResult train_capsule_stage(const RunConfig& cfg, const LoadedDataset& data);

/// Stage 2: freezes the capsule parameters and trains the hierarchical
/// decoder with per-token binary cross-entropy on sampled latents.
TrainResult train_decoder_stage(const Checkpoint& from, const RunConfig& cfg,
                                const LoadedDataset& data);

/// The single-stage supervised image-to-characteristics baseline, kept only
/// to reproduce its poor behavior; trains everything jointly on the decoder
/// cross-entropy.
TrainResult train_end_to_end(const RunConfig& cfg, const LoadedDataset& data);

/// Decodes every test sample on the deterministic mean path, thresholds at
/// tau and pools micro-averaged counts.
Metrics evaluate(const Checkpoint& ckpt, const LoadedDataset& data, double tau);

/// Fraction of the indexed samples whose arg-max class norm matches the label.
double classification_accuracy(const Checkpoint& ckpt,
                               const LoadedDataset& data,
                               const std::vector<int>& indices);

/// Writes `characteristic,probability` rows for one image, descending by
/// probability, full vocabulary included.
void emit_report(const Checkpoint& ckpt, const std::string& image_path,
                 const std::string& out_path);

}  // namespace varcaps
