#include "rapa/tiling.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "rapa/kernels.hpp"

namespace rapa {

namespace {

constexpr std::array<std::pair<SchemeKind, std::string_view>, 7> kSchemeNames{{
    {SchemeKind::none, "none"},
    {SchemeKind::random, "random"},
    {SchemeKind::random_fixed, "random-fixed"},
    {SchemeKind::image_overlap, "image-overlap"},
    {SchemeKind::image_pad, "image-pad"},
    {SchemeKind::alternate, "alternate"},
    {SchemeKind::perforated, "perforated"},
}};

TilePartition grid_partition(const ConvGeometry& geom, std::size_t q, bool alternate) {
  TilePartition part;
  part.tiles = q * q;
  const std::size_t ow = geom.out_w(), oh = geom.out_h();
  part.assignment.resize(oh * ow);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      part.assignment[oy * ow + ox] =
          alternate ? assign_alternate(ox, oy, q) : assign_image(ox, oy, ow, q);
    }
  }
  return part;
}

}  // namespace

SchemeKind parse_scheme(std::string_view name) {
  for (const auto& [kind, text] : kSchemeNames) {
    if (text == name) return kind;
  }
  throw Error("unknown tiling scheme '" + std::string(name) +
              "' (expected none, random, random-fixed, image-overlap, image-pad, alternate "
              "or perforated)");
}

std::string_view scheme_name(SchemeKind kind) {
  for (const auto& [k, text] : kSchemeNames) {
    if (k == kind) return text;
  }
  return "?";
}

bool scheme_needs_square_grid(SchemeKind kind) {
  return kind == SchemeKind::image_overlap || kind == SchemeKind::image_pad ||
         kind == SchemeKind::alternate;
}

std::optional<std::size_t> exact_sqrt(std::size_t n) {
  std::size_t q = 0;
  while ((q + 1) * (q + 1) <= n) ++q;
  if (q * q == n) return q;
  return std::nullopt;
}

void TilingScheme::validate(const ConvGeometry& geom) const {
  if (tiles == 0) throw Error("tile count must be at least 1");
  if (kind == SchemeKind::none && tiles != 1) {
    throw Error("scheme 'none' requires 1 tile per layer, got " + std::to_string(tiles));
  }
  if (tiles > geom.patches()) {
    throw Error("tile count " + std::to_string(tiles) + " exceeds patch count " +
                std::to_string(geom.patches()));
  }
  if (scheme_needs_square_grid(kind)) {
    if (!exact_sqrt(tiles)) {
      throw Error("scheme '" + std::string(scheme_name(kind)) +
                  "' needs a square tile count, got " + std::to_string(tiles));
    }
    if (geom.out_h() != geom.out_w()) {
      throw Error("scheme '" + std::string(scheme_name(kind)) + "' needs a square output, got " +
                  std::to_string(geom.out_h()) + "x" + std::to_string(geom.out_w()));
    }
  }
}

TilePartition TilePartition::single(std::size_t patches) {
  return {std::vector<std::uint32_t>(patches, 0), 1};
}

std::vector<std::vector<std::uint32_t>> TilePartition::subsets() const {
  std::vector<std::vector<std::uint32_t>> out(tiles);
  for (std::size_t l = 0; l < assignment.size(); ++l) {
    const auto t = assignment[l];
    if (t != kDropped && t < tiles) out[t].push_back(static_cast<std::uint32_t>(l));
  }
  return out;
}

bool TilePartition::is_partition() const {
  if (tiles == 0) return false;
  return std::all_of(assignment.begin(), assignment.end(),
                     [&](std::uint32_t t) { return t < tiles; });
}

std::uint32_t assign_image(std::size_t x, std::size_t y, std::size_t n, std::size_t q) {
  if (n == 0 || q == 0 || x >= n || y >= n) {
    throw Error("assign_image: coordinate (" + std::to_string(x) + "," + std::to_string(y) +
                ") outside a " + std::to_string(n) + "-pixel image");
  }
  return static_cast<std::uint32_t>((q * x) / n + q * ((q * y) / n));
}

std::uint32_t assign_alternate(std::size_t x, std::size_t y, std::size_t q) {
  if (q == 0) throw Error("assign_alternate: grid side must be positive");
  return static_cast<std::uint32_t>(x % q + q * (y % q));
}

TilePartition sample_random_partition(std::size_t patches, std::size_t tiles, SeededRng& rng) {
  if (tiles == 0) throw Error("random partition needs at least one tile");
  if (tiles > patches) {
    throw Error("cannot split " + std::to_string(patches) + " patches into " +
                std::to_string(tiles) + " non-empty tiles");
  }
  const auto order = shuffle(patches, rng);
  TilePartition part;
  part.tiles = tiles;
  part.assignment.resize(patches);
  const std::size_t base = patches / tiles, extra = patches % tiles;
  std::size_t pos = 0;
  for (std::size_t t = 0; t < tiles; ++t) {
    const std::size_t count = base + (t < extra ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) part.assignment[order[pos++]] = static_cast<std::uint32_t>(t);
  }
  return part;
}

TilePartition sample_perforation(std::size_t patches, std::size_t tiles, SeededRng& rng) {
  if (tiles == 0) throw Error("perforation needs a positive divisor");
  const std::size_t keep = (patches + tiles - 1) / tiles;
  if (keep == 0) throw Error("perforation would keep no patches");
  const auto order = shuffle(patches, rng);
  TilePartition part{std::vector<std::uint32_t>(patches, TilePartition::kDropped), 1};
  for (std::size_t i = 0; i < keep; ++i) part.assignment[order[i]] = 0;
  return part;
}

PartitionBuilder::PartitionBuilder(TilingScheme scheme, ConvGeometry geom, SeededRng& init_rng)
    : scheme_(scheme), geom_(geom) {
  geom_.validate();
  scheme_.validate(geom_);
  if (scheme_needs_square_grid(scheme_.kind)) grid_ = *exact_sqrt(scheme_.tiles);
  if (scheme_.kind == SchemeKind::random_fixed) {
    fixed_ = sample_random_partition(geom_.patches(), scheme_.tiles, init_rng);
  }
}

TilePartition PartitionBuilder::build(SeededRng& rng) const {
  switch (scheme_.kind) {
    case SchemeKind::random_fixed:
      return *fixed_;
    case SchemeKind::perforated:
      return sample_perforation(geom_.patches(), scheme_.tiles, rng);
    default:
      return build_partition(scheme_, geom_, rng);
  }
}

TilePartition PartitionBuilder::build_for_test(SeededRng& rng) const {
  if (scheme_.kind == SchemeKind::perforated) return TilePartition::single(geom_.patches());
  return build(rng);
}

void PartitionBuilder::set_fixed_partition(TilePartition partition) {
  if (scheme_.kind != SchemeKind::random_fixed) {
    throw Error("only the random-fixed scheme holds a fixed partition");
  }
  if (partition.patches() != geom_.patches() || partition.tiles != scheme_.tiles ||
      !partition.is_partition()) {
    throw Error("fixed partition does not match layer geometry");
  }
  fixed_ = std::move(partition);
}

TilePartition build_partition(const TilingScheme& scheme, const ConvGeometry& geom,
                              SeededRng& rng) {
  scheme.validate(geom);
  switch (scheme.kind) {
    case SchemeKind::none:
      return TilePartition::single(geom.patches());
    case SchemeKind::random:
      return sample_random_partition(geom.patches(), scheme.tiles, rng);
    case SchemeKind::random_fixed:
      throw Error("random-fixed partitions are cached per layer; use PartitionBuilder");
    case SchemeKind::image_overlap:
    case SchemeKind::image_pad:
      return grid_partition(geom, *exact_sqrt(scheme.tiles), false);
    case SchemeKind::alternate:
      return grid_partition(geom, *exact_sqrt(scheme.tiles), true);
    case SchemeKind::perforated:
      return sample_perforation(geom.patches(), scheme.tiles, rng);
  }
  throw Error("unhandled tiling scheme");
}

template <typename T>
void TiledKernelBank<T>::check() const {
  if (kernels.empty()) throw Error("kernel bank is empty");
  for (const auto& k : kernels) k.check(geom, "kernel bank member");
}

template <typename T>
void apply_region_padding(BasicTensor<T>& patch_rows, const ConvGeometry& g,
                          const TilePartition& partition, std::size_t grid) {
  const std::size_t ow = g.out_w(), k = g.patch_size();
  require_shape(patch_rows.shape(), {g.patches(), k}, "region padding patches");
  for (std::size_t l = 0; l < g.patches(); ++l) {
    const std::uint32_t tile = partition.assignment[l];
    const std::size_t oy = l / ow, ox = l % ow;
    T* row = patch_rows.data() + l * k;
    for (std::size_t ky = 0; ky < g.k_h; ++ky) {
      const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
      for (std::size_t kx = 0; kx < g.k_w; ++kx) {
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
        if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w)) {
          continue;  // already zero padding
        }
        if (assign_image(static_cast<std::size_t>(ix), static_cast<std::size_t>(iy), g.w, grid) !=
            tile) {
          std::fill(row + (ky * g.k_w + kx) * g.c_in, row + (ky * g.k_w + kx + 1) * g.c_in, T{});
        }
      }
    }
  }
}

namespace {

template <typename T>
void check_partition(const TilePartition& partition, std::size_t patches, std::size_t tiles) {
  if (partition.patches() != patches) {
    throw Error("partition covers " + std::to_string(partition.patches()) + " patches, layer has " +
                std::to_string(patches));
  }
  for (auto t : partition.assignment) {
    if (t != TilePartition::kDropped && t >= tiles) {
      throw Error("partition refers to tile " + std::to_string(t) + " but the bank has " +
                  std::to_string(tiles));
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> tiled_conv_forward(const PatchMatrix<T>& patches, const TiledKernelBank<T>& bank,
                                  const TilePartition& partition) {
  const ConvGeometry& g = patches.geom;
  bank.check();
  require_shape(patches.rows.shape(), {g.patches(), g.patch_size()}, "tiled forward patches");
  check_partition<T>(partition, g.patches(), bank.tiles());
  const std::size_t n = g.c_out;
  BasicTensor<T> out({g.patches(), n});
  for (std::size_t l = 0; l < g.patches(); ++l) {
    const auto t = partition.assignment[l];
    if (t == TilePartition::kDropped) continue;
    std::copy(bank.kernels[t].bias.data(), bank.kernels[t].bias.data() + n, out.data() + l * n);
  }
  const auto subsets = partition.subsets();
  for (std::size_t t = 0; t < bank.tiles() && t < subsets.size(); ++t) {
    if (subsets[t].empty()) continue;
    kernels::gemm_rows(patches.rows.data(), g.patch_size(), bank.kernels[t].weights.data(),
                       g.patch_size(), n, out.data(), n, subsets[t], true);
  }
  return out;
}

template <typename T>
BasicTensor<T> perforated_forward(const PatchMatrix<T>& patches, const KernelMatrix<T>& kernel,
                                  std::span<const std::uint32_t> keep) {
  if (keep.empty()) throw Error("perforated convolution needs a non-empty keep set");
  const std::size_t n_p = patches.geom.patches();
  TilePartition mask{std::vector<std::uint32_t>(n_p, TilePartition::kDropped), 1};
  for (auto l : keep) {
    if (l >= n_p) throw Error("perforation keeps row " + std::to_string(l) + " of " + std::to_string(n_p));
    mask.assignment[l] = 0;
  }
  TiledKernelBank<T> bank{patches.geom, {kernel}};
  return tiled_conv_forward(patches, bank, mask);
}

template <typename T>
TiledGradient<T> tiled_conv_backward(const PatchMatrix<T>& patches, const TiledKernelBank<T>& bank,
                                     const TilePartition& partition,
                                     const BasicTensor<T>& grad_out,
                                     TiledBackwardOptions options) {
  const ConvGeometry& g = patches.geom;
  bank.check();
  check_partition<T>(partition, g.patches(), bank.tiles());
  if (grad_out.size() != g.patches() * g.c_out) {
    throw Error("tiled backward: grad_out " + shape_string(grad_out.shape()) +
                " does not match " + std::to_string(g.patches()) + "x" + std::to_string(g.c_out));
  }
  const std::size_t k = g.patch_size(), n = g.c_out;
  const auto subsets = partition.subsets();

  TiledGradient<T> grad;
  grad.kernels.reserve(bank.tiles());
  for (std::size_t t = 0; t < bank.tiles(); ++t) {
    KernelGradient<T> kg{BasicTensor<T>({k, n}), BasicTensor<T>({n})};
    if (t < subsets.size() && !subsets[t].empty()) {
      kernels::gemm_tn_rows(patches.rows.data(), k, grad_out.data(), n, k, n, subsets[t],
                            kg.weights.data());
      for (auto l : subsets[t]) {
        for (std::size_t j = 0; j < n; ++j) kg.bias[j] += grad_out[l * n + j];
      }
    }
    grad.kernels.push_back(std::move(kg));
  }

  if (options.input_gradient) {
    BasicTensor<T> patch_grad({g.patches(), k});
    BasicTensor<T> kt({n, k});
    for (std::size_t t = 0; t < bank.tiles() && t < subsets.size(); ++t) {
      if (subsets[t].empty()) continue;
      const auto& w = bank.kernels[t].weights;
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) kt[j * k + p] = w[p * n + j];
      }
      kernels::gemm_rows(grad_out.data(), n, kt.data(), n, k, patch_grad.data(), k, subsets[t],
                         false);
    }
    if (options.region_padding_grid > 0) {
      apply_region_padding(patch_grad, g, partition, options.region_padding_grid);
    }
    grad.input = BasicTensor<T>({g.h, g.w, g.c_in});
    kernels::col2im(patch_grad.data(), g, grad.input.data());
  }
  return grad;
}

#define RAPA_INSTANTIATE_TILING(T)                                                              \
  template struct TiledKernelBank<T>;                                                           \
  template void apply_region_padding(BasicTensor<T>&, const ConvGeometry&, const TilePartition&, \
                                     std::size_t);                                              \
  template BasicTensor<T> tiled_conv_forward(const PatchMatrix<T>&, const TiledKernelBank<T>&,  \
                                             const TilePartition&);                             \
  template BasicTensor<T> perforated_forward(const PatchMatrix<T>&, const KernelMatrix<T>&,     \
                                             std::span<const std::uint32_t>);                   \
  template TiledGradient<T> tiled_conv_backward(const PatchMatrix<T>&, const TiledKernelBank<T>&, \
                                                const TilePartition&, const BasicTensor<T>&,    \
                                                TiledBackwardOptions);

RAPA_INSTANTIATE_TILING(float)
RAPA_INSTANTIATE_TILING(double)

#undef RAPA_INSTANTIATE_TILING

}  // namespace rapa
