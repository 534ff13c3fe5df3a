#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rapa/network.hpp"

namespace rapa {

inline constexpr char kCheckpointMagic[] = "RAPA1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all integers little-endian):
///   "RAPA1" | u32 version | u64 seed | u64 epoch
///   u32 length + network config text
///   u32 entry count, then per entry: u32 name length, name, u32 rank,
///       u64 dims[rank], u64 absolute byte offset
///   float32 payloads in manifest order
/// Fixed partitions of random-fixed layers are stored as entries named
/// convN.partition holding the tile index of every patch.
struct ManifestEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  NetworkConfig network;
  std::vector<ManifestEntry> manifest;
  std::uint64_t file_size = 0;
};

struct LoadedCheckpoint {
  Network<float> net;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     std::uint64_t seed, std::uint64_t epoch);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Header and manifest only.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace rapa
