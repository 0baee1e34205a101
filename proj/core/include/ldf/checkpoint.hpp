#pragma once

#include "ldf/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ldf {

constexpr std::uint32_t kCheckpointVersion = 1;

/// One named float32 tensor of a checkpoint file.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

/// Raw contents of a checkpoint: header fields plus the tensor table.
struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t rig_seed = 0;
  std::string variant;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  const NamedTensor& at(const std::string& name) const;
};

/// `MRHC`, u32 version, u64 rig seed, u32-length variant tag, u32 tensor
/// count, then per tensor: u32-length name, u32 ndims, u32 dims, float32 data.
/// All integers and floats little-endian.
std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes);

CheckpointFile to_checkpoint(const TrainState& state);
/// Regenerates the rig from the stored seed and dimensions.
TrainState from_checkpoint(const CheckpointFile& file);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace ldf
