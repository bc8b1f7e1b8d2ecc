#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiersum/config.hpp"
#include "hiersum/model.hpp"
#include "hiersum/optim.hpp"

namespace hiersum {

/// Named-tensor container: a text config block plus float32 payloads.
/// Layout, all little-endian: magic "HSAR", u32 version, u64 config length
/// and bytes, u32 tensor count, per tensor (u32 name length, name bytes,
/// u8 dtype 0=f32, u32 ndim, u32 dims, u64 payload byte offset), u64
/// payload length, payload bytes.
struct ArchiveTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

struct Archive {
  KvMap config;
  std::vector<ArchiveTensor> tensors;

  const ArchiveTensor* find(const std::string& name) const;
};

void save_archive(const Archive& archive, const std::string& path);
Archive load_archive(const std::string& path);

/// Model parameters, optimizer moments, and step count plus the model
/// configuration and any extra entries in the config block.
Archive checkpoint_archive(const HierTransformer& model, const OptimizerState* opt,
                           const KvMap& extra_config);

void save_checkpoint(const HierTransformer& model, const OptimizerState* opt,
                     const KvMap& extra_config, const std::string& path);

ModelConfig model_config_of_archive(const Archive& archive);

/// Copies parameter (and, when opt is non-null, moment) tensors into the
/// model. The archive's model configuration must match the model's exactly.
void load_checkpoint_into(const Archive& archive, HierTransformer& model, OptimizerState* opt);

/// Rounds every parameter (and moment) through float32 so the in-memory
/// state equals what a save/load round trip would produce.
void canonicalize_f32(HierTransformer& model, OptimizerState* opt);

}  // namespace hiersum
