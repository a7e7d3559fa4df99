#pragma once

#include "varcaps/tensor.hpp"

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace varcaps {

/// One annotated image: its manifest name, the set of visible characteristic
/// tokens, and the domain/type inferred from the path convention
/// <domain>/<type>/<image>.
struct SampleRecord {
  std::string image_name;
  std::set<std::string> characteristics;  // nonempty, normalized tokens
  std::string domain;
  std::string type_name;
  Tensor pixels;  // filled by load_image when needed
  bool pixels_loaded = false;
};

struct DatasetManifest {
  std::vector<SampleRecord> samples;  // sorted by image_name
  std::string source_path;
};

struct SplitSpec {
  std::set<std::string> train_names;
  std::set<std::string> test_names;
};

struct ManifestOptions {
  std::string token_delimiters = ";,";
  /// Enforce the full released-dataset cardinality: 3 domains x 5 types x
  /// 200 images. Leave off for synthetic or partial datasets.
  bool expect_full_dataset = false;
};

/// Splits a characteristics cell on the delimiter set, trims, lowercases,
/// drops empties and deduplicates. An empty result is an error.
std::set<std::string> parse_characteristics(const std::string& cell,
                                            const std::string& delimiters = ";,");

/// Two-column CSV with header `image_name,characteristics`; cells containing
/// delimiters must be double-quoted. Malformed rows are rejected with their
/// row number.
DatasetManifest load_manifest(const std::string& path,
                              const ManifestOptions& opts = {});

/// Plain-text split files, one image name per line. Names must resolve
/// against the manifest and the two sets must be disjoint. With
/// `expect_real_sizes` the 2400/600 train/test cardinality is enforced.
SplitSpec load_split(const std::string& train_path,
                     const std::string& test_path,
                     const DatasetManifest& manifest,
                     bool expect_real_sizes = false);

struct ImageOptions {
  bool grayscale = true;  // collapse RGB to luminance
};

/// Reads PGM/PPM (ASCII or binary, maxval <= 255) or the raw MDIC tensor
/// format (magic "MDIC", u32 height/width/channels little-endian, float32
/// payload). Pixels are scaled to [0,1] for netpbm inputs and taken verbatim
/// for MDIC; the image is nearest-neighbor resized to the target extents.
Tensor load_image(const std::string& path, int target_h, int target_w,
                  const ImageOptions& opts = {});

struct SynthSpec {
  int domains = 2;
  int types_per_domain = 2;
  int images_per_type = 32;
  int image_size = 32;
  /// 0 derives the count from the spec (types + 4 visual attributes). Any
  /// other value must match exactly: the generator cannot render more
  /// distinguishable attributes, and fewer would leave attributes untagged.
  int num_tokens = 0;
};

struct SynthSampleInfo {
  std::string image_name;
  std::string domain;
  std::string type_name;
  bool vivid = false;    // bright fill band
  bool trimmed = false;  // border frame
  bool shaded = false;   // background ramp
  bool thick = false;    // stroke weight
};

struct SynthResult {
  std::string root_dir;
  std::string manifest_path;
  std::string train_path;
  std::string test_path;
  DatasetManifest manifest;  // reloaded through load_manifest
  SplitSpec split;           // reloaded through load_split
  std::vector<SynthSampleInfo> truth;  // generator flags, the label oracle
};

/// Ground truth tokens implied by a generated sample's attribute flags.
std::set<std::string> synth_tokens_for(const SynthSampleInfo& info);

/// Procedurally renders a desk-scale multi-domain characteristic dataset:
/// each type is a shape family drawn with per-sample jitter, and every token
/// corresponds to a visible attribute (the shape itself, a vivid fill, a
/// trimmed border frame, background shading, stroke weight). Writes PGM images, a
/// manifest and stratified 80/20 split files under `out_dir`; fully
/// deterministic for a given seed.
SynthResult synthesize_dataset(std::uint64_t seed, const SynthSpec& spec,
                               const std::string& out_dir);

}  // namespace varcaps
