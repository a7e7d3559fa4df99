#pragma once

#include "varcaps/config.hpp"
#include "varcaps/decoder.hpp"
#include "varcaps/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace varcaps {

/// Everything the two-stage pipeline produces: model dimensions, the resolved
/// config snapshot, class order, parameters, and (after the decoder stage)
/// vocabulary and topology. Save/load round trips bitwise.
struct Checkpoint {
  std::uint32_t version_major = 1;
  std::uint32_t version_minor = 0;
  ModelConfig model;
  std::string config_text;
  bool has_capsules = false;
  bool has_decoder = false;
  ModelParams params;
  std::vector<std::string> class_names;  // index = class id
  CharacteristicVocabulary vocab;        // empty until the decoder stage
  HierarchyTopology topology;            // layers empty until the decoder stage
};

/// Versioned binary format: magic, version, a section table with byte
/// offsets, section payloads, and a trailing checksum over the whole file.
/// A corrupted byte fails the checksum before any field is parsed.
void checkpoint_save(const Checkpoint& ckpt, const std::string& path);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace varcaps
