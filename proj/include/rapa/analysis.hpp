#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "rapa/cifar.hpp"
#include "rapa/network.hpp"
#include "rapa/stats.hpp"

namespace rapa {

struct PairCorrelation {
  std::size_t channel = 0;
  std::size_t tile_i = 0, tile_j = 0;  // tile_i < tile_j
  double corr = 0.0;
  bool degenerate = false;
};

struct SimilarityReport {
  std::size_t layer = 0;
  double similarity = 0.0;  // mean of every pair correlation
  std::vector<PairCorrelation> pairs;
};

/// Pearson correlation of each output channel's filter across every
/// unordered pair of tiles. Requires at least two tiles.
template <typename T>
SimilarityReport filter_similarity(const TiledKernelBank<T>& bank);

/// Reports for every layer holding two or more tiles.
template <typename T>
std::vector<SimilarityReport> network_similarity(const Network<T>& net);

/// One conv layer as seen by the cost model.
struct CostLayerSpec {
  std::string name;
  std::uint64_t patches = 0;     // n_p
  std::uint64_t patch_size = 0;  // k
  std::uint64_t c_out = 0;
  std::uint64_t tiles = 1;
};

struct CostLayer {
  CostLayerSpec spec;
  std::uint64_t macs = 0;
  std::uint64_t untiled_units = 0;  // n_p
  std::uint64_t tiled_units = 0;    // ceil(n_p / n_t)
  double speedup = 1.0;
};

struct CostReport {
  std::vector<CostLayer> layers;
  std::uint64_t total_macs = 0;
  std::uint64_t total_untiled_units = 0;
  std::uint64_t total_tiled_units = 0;
  /// Every layer takes the same number of tiled time units.
  bool load_balanced = false;
};

CostReport analog_cost_model(std::span<const CostLayerSpec> layers);
CostReport analog_cost_model(const NetworkConfig& cfg);
void print_cost_report(std::ostream& out, const CostReport& report);

struct FgsmAttack {
  TensorF perturbed;  // clamp(x + eps' * sign(grad))
  TensorF gradient;   // d loss / d x at the clean image
};

/// FGSM step of `eps` on the 0-255 pixel scale. The image is mean-subtracted
/// HWC; clamping keeps the unnormalised pixels in [0, 1]. The gradient uses
/// a single test-mode forward drawing from `rng`.
FgsmAttack fgsm_perturb(const Network<float>& net, const TensorF& image, const TensorF& mean,
                        std::size_t label, double eps, SeededRng& rng);

/// Same step for a precomputed gradient.
TensorF fgsm_apply(const TensorF& image, const TensorF& mean, const TensorF& gradient, double eps);

/// 20 log10(|x| / |delta|) in dB; +inf when delta is zero.
double snr_of(std::span<const float> image, std::span<const float> perturbation);

struct AdversarialPoint {
  double eps = 0.0;
  double snr_db = 0.0;  // mean over the attacked images
  double accuracy_pct = 0.0;
};

struct AdversarialCurve {
  std::size_t evaluated = 0;  // test images examined
  std::size_t correct = 0;    // images that were attacked
  std::vector<AdversarialPoint> points;
};

/// Attacks every correctly classified image of `test` (the first
/// `max_images` when non-zero). Image i draws from one derived stream that
/// is restarted for filtering, the attack gradient and each evaluation, so
/// eps = 0 reproduces the clean prediction exactly.
AdversarialCurve adversarial_curve(const Network<float>& net, const DatasetSplit& test,
                                   std::span<const double> eps_grid, std::size_t votes,
                                   std::uint64_t seed, std::size_t max_images = 0);

/// Adjacent pairs where accuracy rises with eps.
std::size_t accuracy_inversions(const AdversarialCurve& curve);

/// 100 (new - base) / (100 - base); NaN when base is 100.
double gap_reduction(double base_pct, double new_pct);

void write_adversarial_csv(const std::filesystem::path& path, const AdversarialCurve& curve);
void write_similarity_csv(const std::filesystem::path& path,
                          std::span<const SimilarityReport> reports);

}  // namespace rapa
