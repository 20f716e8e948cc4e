#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "got/model.hpp"
#include "got/trainer.hpp"

namespace got {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Truncated archive, malformed manifest, or content digest mismatch.
class CorruptionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TaskMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr int kCheckpointFormatVersion = 1;

struct TensorEntry {
  std::string name;
  Shape shape;
  std::string file;
};

struct Manifest {
  int format_version = kCheckpointFormatVersion;
  Task task = Task::Caption;
  CaptionMode mode = CaptionMode::OCN2;
  std::map<std::string, std::string> config;
  std::vector<std::string> vocabulary;
  std::vector<std::string> superclasses;
  long iteration = 0;
  std::vector<double> loss_tail;
  std::vector<TensorEntry> tensors;
  std::vector<TensorEntry> velocity;
  std::string digest;  // 16 hex digits over the parameter tensors
  std::string pretrained_backbone;  // reserved; empty when trained from scratch
};

struct Checkpoint {
  Model model;
  Manifest manifest;
  std::optional<MomentumState> momentum;
};

std::string digest_hex(std::uint64_t digest);

/// Writes a ustar archive holding manifest.json and one little-endian float32
/// blob per tensor (velocity tensors too when given).
void save_checkpoint(const std::filesystem::path& path, const Model& model, long iteration = 0,
                     const std::vector<double>& loss_tail = {}, const MomentumState* momentum = nullptr);

/// Throws UnsupportedVersionError, CorruptionError, or TaskMismatchError
/// when `expected_task` is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Task> expected_task = std::nullopt);

/// Only the manifest (still digest-checked).
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace got
