#include "rapa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rapa/config.hpp"

namespace rapa {

namespace {

constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void string(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, std::string source) : buf_(buf), source_(std::move(source)) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > buf_.size()) {
      throw Error(source_ + ": truncated at offset " + std::to_string(pos_) + " while reading " + what);
    }
  }
  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string string(const char* what) {
    const auto n = uint<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n, const char* what) {
    need(n, what);
    pos_ += n;
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string partition_name(std::size_t layer) {
  return "conv" + std::to_string(layer + 1) + ".partition";
}

CheckpointInfo parse_header(const std::vector<std::uint8_t>& buf, const std::string& source,
                            Reader& r) {
  CheckpointInfo info;
  info.file_size = buf.size();
  r.need(kMagicSize, "magic");
  if (std::memcmp(buf.data(), kCheckpointMagic, kMagicSize) != 0) {
    throw Error(source + ": bad magic, expected \"" + std::string(kCheckpointMagic) + "\"");
  }
  r.skip(kMagicSize, "magic");
  info.version = r.uint<std::uint32_t>("version");
  if (info.version != kCheckpointVersion) {
    throw Error(source + ": format version " + std::to_string(info.version) + ", expected " +
                std::to_string(kCheckpointVersion));
  }
  info.seed = r.uint<std::uint64_t>("seed");
  info.epoch = r.uint<std::uint64_t>("epoch");
  info.network = parse_network_text(r.string("network config"), source + " (network config)");
  const auto entries = r.uint<std::uint32_t>("manifest size");
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < entries; ++i) {
    ManifestEntry e;
    e.name = r.string("manifest name");
    const auto rank = r.uint<std::uint32_t>("manifest rank");
    if (rank > 8) throw Error(source + ": manifest entry " + e.name + " has rank " + std::to_string(rank));
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.uint<std::uint64_t>("manifest dims"));
    e.offset = r.uint<std::uint64_t>("manifest offset");
    if (i > 0 && e.offset != expected_offset) {
      throw Error(source + ": manifest entry " + e.name + " at offset " + std::to_string(e.offset) +
                  ", expected " + std::to_string(expected_offset));
    }
    expected_offset = e.offset + 4 * shape_volume(e.shape);
    info.manifest.push_back(std::move(e));
  }
  if (!info.manifest.empty()) {
    if (info.manifest.front().offset != r.pos()) {
      throw Error(source + ": payload starts at offset " + std::to_string(info.manifest.front().offset) +
                  ", header ends at " + std::to_string(r.pos()));
    }
    if (expected_offset > buf.size()) {
      throw Error(source + ": truncated at offset " + std::to_string(buf.size()) + ", payload needs " +
                  std::to_string(expected_offset) + " bytes");
    }
  }
  return info;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::pair<std::string, std::vector<float>>> payloads;
  std::vector<Shape> shapes;
  net.params().visit([&](const std::string& name, const TensorF& t, bool) {
    payloads.emplace_back(name, std::vector<float>(t.values().begin(), t.values().end()));
    shapes.push_back(t.shape());
  });
  for (std::size_t l = 0; l < net.partitions().size(); ++l) {
    const auto& fixed = net.partitions()[l].fixed_partition();
    if (!fixed) continue;
    std::vector<float> tiles(fixed->assignment.begin(), fixed->assignment.end());
    shapes.push_back({tiles.size()});
    payloads.emplace_back(partition_name(l), std::move(tiles));
  }

  Writer header;
  header.bytes(kCheckpointMagic, kMagicSize);
  header.uint(kCheckpointVersion);
  header.uint(seed);
  header.uint(epoch);
  header.string(network_to_text(net.config()));
  header.uint(static_cast<std::uint32_t>(payloads.size()));
  std::uint64_t manifest_size = 0;
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    manifest_size += 4 + payloads[i].first.size() + 4 + 8 * shapes[i].size() + 8;
  }
  std::uint64_t offset = header.size() + manifest_size;
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    header.string(payloads[i].first);
    header.uint(static_cast<std::uint32_t>(shapes[i].size()));
    for (auto d : shapes[i]) header.uint(static_cast<std::uint64_t>(d));
    header.uint(offset);
    offset += 4 * payloads[i].second.size();
  }
  for (const auto& [name, values] : payloads) {
    for (float v : values) header.uint(std::bit_cast<std::uint32_t>(v));
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const auto& buf = header.buffer();
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("short write to checkpoint " + path.string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  Reader r(buf, path.string());
  return parse_header(buf, path.string(), r);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  const std::string source = path.string();
  Reader r(buf, source);
  CheckpointInfo info = parse_header(buf, source, r);

  auto read_floats = [&](const ManifestEntry& e) {
    std::vector<float> out(shape_volume(e.shape));
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t bits = 0;
      for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[e.offset + 4 * i + b]) << (8 * b);
      out[i] = std::bit_cast<float>(bits);
    }
    return out;
  };

  Network<float> fresh(info.network, 0);
  NetParams<float> params = fresh.params();
  std::size_t next = 0;
  params.visit([&](const std::string& name, TensorF& t, bool) {
    if (next >= info.manifest.size() || info.manifest[next].name != name) {
      throw Error(source + ": expected tensor " + name + " at manifest position " + std::to_string(next));
    }
    const ManifestEntry& e = info.manifest[next++];
    if (e.shape != t.shape()) {
      throw Error(source + ": tensor " + name + " has shape " + shape_string(e.shape) + ", expected " +
                  shape_string(t.shape()));
    }
    t = TensorF(e.shape, read_floats(e));
  });

  std::vector<std::optional<TilePartition>> fixed(info.network.layers());
  for (; next < info.manifest.size(); ++next) {
    const ManifestEntry& e = info.manifest[next];
    std::size_t layer = info.network.layers();
    for (std::size_t l = 0; l < info.network.layers(); ++l) {
      if (e.name == partition_name(l)) layer = l;
    }
    if (layer == info.network.layers()) throw Error(source + ": unexpected tensor " + e.name);
    TilePartition p;
    p.tiles = info.network.tiles[layer];
    for (float v : read_floats(e)) p.assignment.push_back(static_cast<std::uint32_t>(v));
    fixed[layer] = std::move(p);
  }
  return {Network<float>(info.network, std::move(params), std::move(fixed)), info.seed, info.epoch};
}

}  // namespace rapa
