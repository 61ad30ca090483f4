#pragma once
// Binary checkpoints: "SCPR1", u32 record count, then per record u32 name
// length + name, u32 dtype length + "f32", u32 rank, u64 extents; after the
// manifest the little-endian f32 payloads follow in manifest order.

#include <cstdint>
#include <string>
#include <vector>

#include "scpr/core/graph.hpp"
#include "scpr/train/optim.hpp"

namespace scpr {

struct CheckpointRecord {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

/// Writes atomically through a temporary file. Throws FormatError on I/O
/// failure.
void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records);
/// Throws FormatError on bad magic, unknown dtype or truncated payload.
std::vector<CheckpointRecord> read_checkpoint(const std::string& path);

/// Parameters by name, followed by "optim.m.<name>", "optim.v.<name>" and
/// "optim.step" when an optimizer is given.
template <typename T>
std::vector<CheckpointRecord> checkpoint_records(const ParameterSet<T>& params,
                                                 const AdamW<T>* optim = nullptr);

template <typename T>
void save_checkpoint(const std::string& path, const ParameterSet<T>& params,
                     const AdamW<T>* optim = nullptr);

/// Restores every parameter (and the optimizer state when given). Throws
/// FormatError naming the first tensor that is missing, unexpected or of the
/// wrong shape.
template <typename T>
void load_checkpoint(const std::string& path, ParameterSet<T>& params, AdamW<T>* optim = nullptr);

}  // namespace scpr
