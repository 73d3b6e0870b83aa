#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mssm/model.hpp"

// Checkpoint archive, all integers little-endian:
//
//   "MSSMCKPT"             8-byte magic
//   u32 version            currently 1
//   u64 n, n bytes         model config as JSON text
//   u32 count              number of tensors
//   count x {
//     u32 n, n bytes       parameter name
//     u32 rank, rank x u64 shape
//     f32 x numel          values
//   }
//
// Tensors are stored in Model::named_parameters() order. Values are always
// f32; loading into a double model widens them.
namespace mssm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointData {
  ModelConfig config;
  std::vector<CheckpointTensor> tensors;
};

template <typename T>
CheckpointData snapshot(const Model<T>& model);

std::string encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::string& bytes);

/// Builds a model from a snapshot; every parameter must be present with a
/// matching shape.
template <typename T>
Model<T> restore(const CheckpointData& data);

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path);

template <typename T>
Model<T> load_checkpoint(const std::string& path);

CheckpointData read_checkpoint(const std::string& path);
void write_checkpoint(const CheckpointData& data, const std::string& path);

}  // namespace mssm
