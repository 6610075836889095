#pragma once

// Binary parameter snapshots. Layout, all multi-byte fields little-endian:
//   magic "LAFS" | u32 version | u32 entry count
//   per entry: u16 name length | UTF-8 name | u8 ndim | ndim x u32 dims
//              | float32 payload (product of dims values)
// Metadata rides as reserved entries named "__meta/<key>=<value>" with
// ndim 1, dims [0], and an empty payload; they are split out on load.
// save -> load -> save reproduces the file byte for byte.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lafs/tensor.hpp"

namespace lafs {

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// wrong leading magic bytes
struct BadMagicError : CheckpointError {
  using CheckpointError::CheckpointError;
};
// magic ok, unsupported version number
struct BadVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
// file ends before the declared structure does
struct TruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};
// structure is internally inconsistent (trailing bytes, duplicate names)
struct CorruptError : CheckpointError {
  using CheckpointError::CheckpointError;
};

// Ordered key/value metadata; keys unique, later set() overwrites.
struct CheckpointMeta {
  std::vector<std::pair<std::string, std::string>> items;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key, const std::string& fallback = "") const;
  bool has(const std::string& key) const;
};

struct LoadedCheckpoint {
  std::vector<NamedTensor> params;
  CheckpointMeta meta;
};

void save_checkpoint(const std::vector<NamedTensor>& params, const CheckpointMeta& meta,
                     const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies loaded values into same-named destination tensors; every destination
// name must be present with a matching shape.
void restore_params(std::vector<NamedTensor> dest, const std::vector<NamedTensor>& loaded);

}  // namespace lafs
