#pragma once

#include "varcaps/capsule.hpp"
#include "varcaps/losses.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace varcaps {

/// Model dimensions shared by both training stages and evaluation.
struct ModelConfig {
  int image_size = 32;
  int channels = 1;  // grayscale by default
  int conv1_maps = 8;
  int kernel = 9;
  int conv1_stride = 1;
  int conv2_stride = 2;
  int feature_maps = 4;
  int num_primary = 32;
  int primary_dim = 8;
  int num_classes = 0;  // K, derived from the dataset when 0
  int class_dim = 2;    // d, latent width per class capsule
  int routing_iterations = 3;
  int decoder_hidden = 0;  // 0: use the vocabulary size

  PrimaryStemSpec stem() const;
  /// The routed layer: lower bank to the doubled (mean + log-variance)
  /// class bank.
  CapsuleLayerSpec routing_spec() const;
  void validate() const;
};

struct StageConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 0.1;
  double momentum = 0.0;

  void validate(const char* stage) const;
};

/// Everything a run needs, parsed from the sectioned key/value config file.
struct RunConfig {
  ModelConfig model;
  StageConfig capsules;
  StageConfig decoder;
  MarginLossConfig margin;
  TotalLossConfig total;
  std::uint64_t seed = 0;
  bool has_seed = false;  // the seed is mandatory before training starts
  double tau = 0.5;

  void validate() const;  // requires the seed
  /// Canonical serialization of every resolved value, itself parseable.
  std::string to_text() const;
};

/// Parses the documented schema. Unknown sections or keys are rejected;
/// [loss] gamma is accepted for forward compatibility but multiplies nothing,
/// and a warning is printed to `warnings` when it appears.
RunConfig parse_run_config(const std::string& text, std::ostream& warnings);
RunConfig load_run_config(const std::string& path, std::ostream& warnings);

}  // namespace varcaps
