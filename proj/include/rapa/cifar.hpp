#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rapa/tensor.hpp"

namespace rapa {

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarPixels = kCifarSide * kCifarSide * kCifarChannels;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixels;
inline constexpr std::size_t kCifarClasses = 10;

/// Undecoded records: one label byte and 3072 channel-planar pixel bytes each.
struct RawRecords {
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // size() * 3072, planar R then G then B

  std::size_t size() const noexcept { return labels.size(); }
  void append(const RawRecords& other);
};

/// `source` names the data in error messages.
RawRecords parse_cifar_records(std::span<const std::uint8_t> bytes, const std::string& source);
std::vector<std::uint8_t> serialize_cifar_records(const RawRecords& records);
RawRecords read_cifar_file(const std::filesystem::path& path);
void write_cifar_file(const std::filesystem::path& path, const RawRecords& records);

/// Images scaled to [0, 1], stored HWC with the training-set mean image
/// subtracted. `mean` is kept so the unnormalised image can be recovered.
struct DatasetSplit {
  TensorF images;  // N x 32 x 32 x 3
  std::vector<std::uint8_t> labels;
  TensorF mean;    // 32 x 32 x 3
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_size() const noexcept { return kCifarPixels; }
  TensorF image(std::size_t i) const;
  std::span<const float> image_span(std::size_t i) const;
};

struct CifarData {
  DatasetSplit train;
  DatasetSplit test;
};

/// Decodes planar bytes into HWC floats in [0, 1].
TensorF decode_images(const RawRecords& records);
TensorF mean_image(const TensorF& images);
DatasetSplit make_split(const RawRecords& records, const TensorF& mean, std::string name);

/// Reads data_batch_1..5.bin and test_batch.bin from `dir`.
CifarData load_cifar10(const std::filesystem::path& dir);

/// `n` images chosen by a seeded shuffle (all of them when n is 0 or >= size).
DatasetSplit take_subset(const DatasetSplit& split, std::size_t n, std::uint64_t seed);

/// Writes a synthetic 10-class dataset in the CIFAR-10 binary layout:
/// oriented colour gratings with a class-specific blob, random phase, shift,
/// contrast and pixel noise. `train_per_batch` records go in each of the five
/// training files.
void write_synthetic_cifar10(const std::filesystem::path& dir, std::size_t train_per_batch,
                             std::size_t test_count, std::uint64_t seed);

}  // namespace rapa
