#include "rapa/cifar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "rapa/rng.hpp"

namespace rapa {

namespace {

constexpr std::size_t kPlane = kCifarSide * kCifarSide;

const char* const kTrainFiles[] = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                   "data_batch_4.bin", "data_batch_5.bin"};
constexpr const char* kTestFile = "test_batch.bin";

}  // namespace

void RawRecords::append(const RawRecords& other) {
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
}

RawRecords parse_cifar_records(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t whole = bytes.size() / kCifarRecordBytes;
    throw Error(source + ": truncated record at byte offset " +
                std::to_string(whole * kCifarRecordBytes) + " (" +
                std::to_string(bytes.size() - whole * kCifarRecordBytes) + " of " +
                std::to_string(kCifarRecordBytes) + " bytes)");
  }
  RawRecords out;
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  out.labels.reserve(n);
  out.pixels.reserve(n * kCifarPixels);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t offset = r * kCifarRecordBytes;
    const std::uint8_t label = bytes[offset];
    if (label >= kCifarClasses) {
      throw Error(source + ": label " + std::to_string(label) + " at byte offset " +
                  std::to_string(offset) + " is not below " + std::to_string(kCifarClasses));
    }
    out.labels.push_back(label);
    out.pixels.insert(out.pixels.end(), bytes.begin() + offset + 1,
                      bytes.begin() + offset + kCifarRecordBytes);
  }
  return out;
}

std::vector<std::uint8_t> serialize_cifar_records(const RawRecords& records) {
  if (records.pixels.size() != records.size() * kCifarPixels) {
    throw Error("raw records hold " + std::to_string(records.pixels.size()) + " pixel bytes for " +
                std::to_string(records.size()) + " labels");
  }
  std::vector<std::uint8_t> out;
  out.reserve(records.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < records.size(); ++r) {
    out.push_back(records.labels[r]);
    const auto* px = records.pixels.data() + r * kCifarPixels;
    out.insert(out.end(), px, px + kCifarPixels);
  }
  return out;
}

RawRecords read_cifar_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.empty()) throw Error(path.string() + ": empty file, truncated at byte offset 0");
  return parse_cifar_records(bytes, path.string());
}

void write_cifar_file(const std::filesystem::path& path, const RawRecords& records) {
  const auto bytes = serialize_cifar_records(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

TensorF DatasetSplit::image(std::size_t i) const {
  const auto s = image_span(i);
  return TensorF({kCifarSide, kCifarSide, kCifarChannels}, std::vector<float>(s.begin(), s.end()));
}

std::span<const float> DatasetSplit::image_span(std::size_t i) const {
  if (i >= size()) throw Error("image index " + std::to_string(i) + " out of range " + std::to_string(size()));
  return images.values().subspan(i * kCifarPixels, kCifarPixels);
}

TensorF decode_images(const RawRecords& records) {
  const std::size_t n = records.size();
  TensorF out({n, kCifarSide, kCifarSide, kCifarChannels});
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* src = records.pixels.data() + r * kCifarPixels;
    float* dst = out.data() + r * kCifarPixels;
    for (std::size_t p = 0; p < kPlane; ++p) {
      for (std::size_t c = 0; c < kCifarChannels; ++c) {
        dst[p * kCifarChannels + c] = static_cast<float>(src[c * kPlane + p]) / 255.0f;
      }
    }
  }
  return out;
}

TensorF mean_image(const TensorF& images) {
  if (images.rank() != 4 || images.dim(0) == 0) throw Error("mean image needs a non-empty N x H x W x C tensor");
  const std::size_t n = images.dim(0), m = images.size() / n;
  std::vector<double> acc(m, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const float* src = images.data() + r * m;
    for (std::size_t i = 0; i < m; ++i) acc[i] += src[i];
  }
  TensorF mean({images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < m; ++i) mean[i] = static_cast<float>(acc[i] / static_cast<double>(n));
  return mean;
}

DatasetSplit make_split(const RawRecords& records, const TensorF& mean, std::string name) {
  require_shape(mean.shape(), {kCifarSide, kCifarSide, kCifarChannels}, "mean image");
  DatasetSplit split;
  split.images = decode_images(records);
  split.labels = records.labels;
  split.mean = mean;
  split.name = std::move(name);
  for (std::size_t r = 0; r < split.size(); ++r) {
    float* img = split.images.data() + r * kCifarPixels;
    for (std::size_t i = 0; i < kCifarPixels; ++i) img[i] -= mean[i];
  }
  return split;
}

CifarData load_cifar10(const std::filesystem::path& dir) {
  RawRecords train;
  for (const char* name : kTrainFiles) train.append(read_cifar_file(dir / name));
  const RawRecords test = read_cifar_file(dir / kTestFile);
  const TensorF mean = mean_image(decode_images(train));
  return {make_split(train, mean, "train"), make_split(test, mean, "test")};
}

DatasetSplit take_subset(const DatasetSplit& split, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= split.size()) return split;
  SeededRng rng = SeededRng::derive(seed, {0x5b5e7});
  auto order = shuffle(split.size(), rng);
  order.resize(n);
  std::sort(order.begin(), order.end());
  DatasetSplit out;
  out.images = TensorF({n, kCifarSide, kCifarSide, kCifarChannels});
  out.mean = split.mean;
  out.name = split.name;
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = split.image_span(order[i]);
    std::copy(src.begin(), src.end(), out.images.data() + i * kCifarPixels);
    out.labels.push_back(split.labels[order[i]]);
  }
  return out;
}

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kClassTint[kCifarClasses] = {
    {0.9, 0.3, 0.3}, {0.3, 0.9, 0.3}, {0.3, 0.3, 0.9}, {0.9, 0.9, 0.3}, {0.9, 0.3, 0.9},
    {0.3, 0.9, 0.9}, {0.8, 0.6, 0.3}, {0.5, 0.5, 0.5}, {0.3, 0.6, 0.8}, {0.7, 0.4, 0.7}};

void render_synthetic(std::uint8_t label, SeededRng& rng, std::uint8_t* planar) {
  const double pi = std::numbers::pi;
  const double angle = label * pi / kCifarClasses + rng.normal() * (7.0 * pi / 180.0);
  const double cycles = (2.5 + 0.8 * (label % 3)) * rng.uniform(0.85, 1.15);
  const double phase = rng.uniform(0.0, 2.0 * pi);
  const double contrast = rng.uniform(0.12, 0.32);
  const double background = rng.uniform(0.3, 0.7);
  const double mix = rng.uniform(0.0, 0.7);
  const Rgb random_tint{rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)};
  const Rgb& tint = kClassTint[label];
  const Rgb colour{(1 - mix) * tint.r + mix * random_tint.r, (1 - mix) * tint.g + mix * random_tint.g,
                   (1 - mix) * tint.b + mix * random_tint.b};
  // A blob whose position loosely depends on the class, plus a distractor
  // blob of random colour anywhere in the image.
  const double blob_x = 8.0 + 16.0 * ((label * 7) % 10) / 9.0 + rng.normal() * 4.0;
  const double blob_y = 8.0 + 16.0 * ((label * 3) % 10) / 9.0 + rng.normal() * 4.0;
  const double blob_amp = rng.uniform(0.0, 0.25);
  const double dist_x = rng.uniform(0.0, 32.0), dist_y = rng.uniform(0.0, 32.0);
  const double dist_amp = rng.uniform(-0.3, 0.3);
  const Rgb dist_tint{rng.uniform(), rng.uniform(), rng.uniform()};
  const double noise = rng.uniform(0.04, 0.12);
  const double kx = std::cos(angle) * 2.0 * pi * cycles / kCifarSide;
  const double ky = std::sin(angle) * 2.0 * pi * cycles / kCifarSide;
  for (std::size_t y = 0; y < kCifarSide; ++y) {
    for (std::size_t x = 0; x < kCifarSide; ++x) {
      const double wave = contrast * std::sin(kx * x + ky * y + phase);
      const double b2 = ((x - blob_x) * (x - blob_x) + (y - blob_y) * (y - blob_y)) / 18.0;
      const double blob = blob_amp * std::exp(-b2);
      const double d2 = ((x - dist_x) * (x - dist_x) + (y - dist_y) * (y - dist_y)) / 30.0;
      const double dist = dist_amp * std::exp(-d2);
      const double channel[3] = {colour.r, colour.g, colour.b};
      const double dist_c[3] = {dist_tint.r, dist_tint.g, dist_tint.b};
      for (std::size_t c = 0; c < kCifarChannels; ++c) {
        double v = background + wave * channel[c] + blob * channel[c] + dist * dist_c[c] +
                   noise * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        planar[c * kPlane + y * kCifarSide + x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
}

RawRecords synthetic_records(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  RawRecords out;
  out.labels.resize(n);
  out.pixels.resize(n * kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    SeededRng rng = SeededRng::derive(seed, {stream, i});
    const auto label = static_cast<std::uint8_t>(rng.below(kCifarClasses));
    out.labels[i] = label;
    render_synthetic(label, rng, out.pixels.data() + i * kCifarPixels);
  }
  return out;
}

}  // namespace

void write_synthetic_cifar10(const std::filesystem::path& dir, std::size_t train_per_batch,
                             std::size_t test_count, std::uint64_t seed) {
  if (train_per_batch == 0 || test_count == 0) throw Error("synthetic dataset sizes must be positive");
  std::filesystem::create_directories(dir);
  for (std::size_t b = 0; b < std::size(kTrainFiles); ++b) {
    write_cifar_file(dir / kTrainFiles[b], synthetic_records(train_per_batch, seed, b + 1));
  }
  write_cifar_file(dir / kTestFile, synthetic_records(test_count, seed, 100));
}

}  // namespace rapa
