#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "xmodal/trainer.hpp"

namespace xmodal {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_echo;  // KeyValueConfig text of the model and training configs
  TrainState state;
};

// Layout (all integers u64 little-endian unless noted):
//   "XMSSL1"  version:u32  echo:str  epochs_done
//   tensor count, then per tensor: name:str rank dims... raw doubles
//   adam step, m tensors, v tensors (same shapes as the parameters, no names)
//   report:str (training CSV, seconds zeroed so identical runs give identical files)
// where str = length + bytes.
std::string encode_checkpoint(const Checkpoint& checkpoint);

// Decodes fully before returning; any truncation, trailing bytes, version or shape
// mismatch throws ValidationError.
Checkpoint decode_checkpoint(const std::string& bytes);

// Written to a sibling temp file, then renamed over `path`.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds the echo for a run and recovers the configs from it.
std::string config_echo(const ModelConfig& model, const TrainConfig& train);
ModelConfig model_config_from_echo(const std::string& echo);
TrainConfig train_config_from_echo(const std::string& echo);

}  // namespace xmodal
