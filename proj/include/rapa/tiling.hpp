#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "rapa/conv.hpp"
#include "rapa/rng.hpp"

namespace rapa {

// Tile indices are 0-based throughout: tile j here is tile j+1 in the
// 1-based numbering of the closed-form assignment rules.

enum class SchemeKind {
  none,
  random,
  random_fixed,
  image_overlap,
  image_pad,
  alternate,
  perforated,
};

/// CLI-facing names: none | random | random-fixed | image-overlap |
/// image-pad | alternate | perforated.
SchemeKind parse_scheme(std::string_view name);
std::string_view scheme_name(SchemeKind kind);

/// Image-region and alternate schemes need n_t = q^2 and a square output.
bool scheme_needs_square_grid(SchemeKind kind);

struct TilingScheme {
  SchemeKind kind = SchemeKind::none;
  std::size_t tiles = 1;

  /// Throws Error if the scheme cannot be applied to this geometry.
  void validate(const ConvGeometry& geom) const;
};

/// Assignment s_l of every patch (row of the im2col matrix) to a tile.
///
/// Rows marked kDropped belong to no tile and produce an all-zero output
/// row; they only appear in perforation masks, never in partitions.
struct TilePartition {
  static constexpr std::uint32_t kDropped = std::numeric_limits<std::uint32_t>::max();

  std::vector<std::uint32_t> assignment;
  std::size_t tiles = 1;

  static TilePartition single(std::size_t patches);

  std::size_t patches() const noexcept { return assignment.size(); }
  /// Row indices of each tile in ascending order (dropped rows omitted).
  std::vector<std::vector<std::uint32_t>> subsets() const;
  /// Disjoint cover of all rows with every index below `tiles`.
  bool is_partition() const;

  friend bool operator==(const TilePartition&, const TilePartition&) = default;
};

/// Integer q with q * q == n, if any.
std::optional<std::size_t> exact_sqrt(std::size_t n);

/// floor(q x / n) + q floor(q y / n), for 0 <= x, y < n.
std::uint32_t assign_image(std::size_t x, std::size_t y, std::size_t n, std::size_t q);
/// (x mod q) + q (y mod q).
std::uint32_t assign_alternate(std::size_t x, std::size_t y, std::size_t q);

/// Shuffle then split into n_t consecutive blocks; the first (n_p mod n_t)
/// blocks receive one extra patch.
TilePartition sample_random_partition(std::size_t patches, std::size_t tiles, SeededRng& rng);

/// Keeps ceil(n_p / n_t) uniformly chosen rows; all others are dropped.
TilePartition sample_perforation(std::size_t patches, std::size_t tiles, SeededRng& rng);

/// Draws partitions for one layer according to its scheme.
///
/// random_fixed samples its partition once, from `init_rng`, at
/// construction; every later draw returns that cached partition.
class PartitionBuilder {
 public:
  PartitionBuilder() = default;
  PartitionBuilder(TilingScheme scheme, ConvGeometry geom, SeededRng& init_rng);

  const TilingScheme& scheme() const noexcept { return scheme_; }
  const ConvGeometry& geometry() const noexcept { return geom_; }
  /// Grid side q for image-region schemes (1 otherwise).
  std::size_t grid() const noexcept { return grid_; }

  /// Training-time draw. For perforated this is a perforation mask.
  TilePartition build(SeededRng& rng) const;
  /// Test-time draw: perforated uses every row; the rest as build().
  TilePartition build_for_test(SeededRng& rng) const;

  const std::optional<TilePartition>& fixed_partition() const noexcept { return fixed_; }
  void set_fixed_partition(TilePartition partition);

 private:
  TilingScheme scheme_;
  ConvGeometry geom_;
  std::size_t grid_ = 1;
  std::optional<TilePartition> fixed_;
};

/// Stateless form of PartitionBuilder::build for schemes other than
/// random_fixed (which needs the cache held by PartitionBuilder).
TilePartition build_partition(const TilingScheme& scheme, const ConvGeometry& geom,
                              SeededRng& rng);

/// n_t replicated kernel matrices sharing one geometry.
template <typename T>
struct TiledKernelBank {
  ConvGeometry geom;
  std::vector<KernelMatrix<T>> kernels;

  std::size_t tiles() const noexcept { return kernels.size(); }
  void check() const;
};

/// Zeroes, in place, the patch entries whose source pixel lies outside the
/// image region of the patch's own tile (the "image w/pad" variant).
template <typename T>
void apply_region_padding(BasicTensor<T>& patch_rows, const ConvGeometry& geom,
                          const TilePartition& partition, std::size_t grid);

/// Row l = b_l^T K_{s_l} + bias_{s_l}; dropped rows are exactly 0.
/// Returned as patches x c_out in original patch order.
template <typename T>
BasicTensor<T> tiled_conv_forward(const PatchMatrix<T>& patches, const TiledKernelBank<T>& bank,
                                  const TilePartition& partition);

/// Perforated convolution with one kernel: rows outside `keep` are 0.
template <typename T>
BasicTensor<T> perforated_forward(const PatchMatrix<T>& patches, const KernelMatrix<T>& kernel,
                                  std::span<const std::uint32_t> keep);

template <typename T>
struct TiledGradient {
  std::vector<KernelGradient<T>> kernels;  // one per tile
  BasicTensor<T> input;                    // h x w x c_in; empty if not requested
};

struct TiledBackwardOptions {
  bool input_gradient = true;
  /// Non-zero: region padding with this grid was applied in the forward.
  std::size_t region_padding_grid = 0;
};

/// dK_j = I_j^T dM_j over rows of S_j; input gradient gathers every tile's
/// dM_j K_j^T back onto the image.
template <typename T>
TiledGradient<T> tiled_conv_backward(const PatchMatrix<T>& patches, const TiledKernelBank<T>& bank,
                                     const TilePartition& partition,
                                     const BasicTensor<T>& grad_out,
                                     TiledBackwardOptions options = {});

}  // namespace rapa
