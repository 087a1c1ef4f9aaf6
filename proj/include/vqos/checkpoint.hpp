#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vqos/tensor.hpp"

namespace vqos {

/// File system failure while writing artifacts.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, corrupt or mismatched checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Container layout (little-endian): "VQOS", version u32, metadata length
/// u32, metadata JSON; per tensor: name length u32, name, rank u32, dims
/// u32 each, f32 data; then CRC32 of everything before it.
struct Checkpoint {
  nlohmann::json metadata;
  std::vector<NamedTensor> tensors;

  const Tensor& at(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies stored values into `params`, matching names and shapes.
void assign_parameters(const Checkpoint& ckpt, std::vector<NamedTensor>& params);

/// Values rounded to the f32 precision checkpoints store.
void round_to_stored_precision(std::vector<NamedTensor>& params);

/// Writes `bytes` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace vqos
