#pragma once

// Training checkpoints.
//
// File layout: 8-byte magic "HPRLCKPT", u32 format version, u64 payload
// length, payload, u32 CRC-32 of the payload. The payload holds the resolved
// run configuration (key=value text), the named parameter tensors with their
// shapes, optimizer state and the training counters, so a resumed run
// continues exactly where the saved one stopped.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hperl/nn/tensor.hpp"
#include "hperl/types.hpp"

namespace hperl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct CheckpointTensor {
  std::string name;
  nn::Shape shape;
  std::vector<double> values;
  bool operator==(const CheckpointTensor&) const = default;
};

struct Checkpoint {
  std::string config;  // key=value text
  std::vector<CheckpointTensor> tensors;
  // Optimizer moments in parameter order (empty before the first step).
  std::vector<std::vector<double>> first_moment, second_moment;
  std::int64_t optimizer_steps = 0;
  std::int32_t epochs_done = 0;
  std::int64_t global_step = 0;
  double best_loss = 0;
  std::int32_t best_epoch = -1;
  std::string loss_log;  // CSV rows written so far, header included
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Writes to a temporary file and renames it into place.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hperl
