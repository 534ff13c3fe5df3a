#pragma once

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <string>

#include "rapa/cifar.hpp"
#include "rapa/rng.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  ScratchDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = std::filesystem::temp_directory_path() /
            ("rapa_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" +
             std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() { std::filesystem::remove_all(path_); }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// n random images with uniformly random labels, normalized against their own mean.
inline rapa::DatasetSplit random_split(std::size_t n, std::uint64_t seed) {
  rapa::SeededRng rng(seed);
  rapa::RawRecords raw;
  for (std::size_t i = 0; i < n; ++i) {
    raw.labels.push_back(static_cast<std::uint8_t>(rng.below(rapa::kCifarClasses)));
    for (std::size_t p = 0; p < rapa::kCifarPixels; ++p) {
      raw.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
    }
  }
  return rapa::make_split(raw, rapa::mean_image(rapa::decode_images(raw)), "random");
}

}  // namespace testutil
