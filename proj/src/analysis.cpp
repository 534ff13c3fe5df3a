#include "rapa/analysis.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace rapa {

namespace {

constexpr std::uint64_t kAttackStream = 30;

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

template <typename T>
SimilarityReport filter_similarity(const TiledKernelBank<T>& bank) {
  bank.check();
  const std::size_t tiles = bank.tiles();
  if (tiles < 2) throw Error("filter similarity needs at least 2 tiles, got " + std::to_string(tiles));
  const std::size_t k = bank.geom.patch_size(), n = bank.geom.c_out;
  SimilarityReport report;
  std::vector<std::vector<double>> columns(tiles, std::vector<double>(k));
  double sum = 0.0;
  for (std::size_t ch = 0; ch < n; ++ch) {
    for (std::size_t t = 0; t < tiles; ++t) {
      for (std::size_t p = 0; p < k; ++p) columns[t][p] = bank.kernels[t].weights[p * n + ch];
    }
    for (std::size_t i = 0; i < tiles; ++i) {
      for (std::size_t j = i + 1; j < tiles; ++j) {
        const Correlation c = pearson(columns[i], columns[j]);
        report.pairs.push_back({ch, i, j, c.value, c.degenerate});
        sum += c.value;
      }
    }
  }
  report.similarity = sum / static_cast<double>(report.pairs.size());
  return report;
}

template <typename T>
std::vector<SimilarityReport> network_similarity(const Network<T>& net) {
  std::vector<SimilarityReport> out;
  for (std::size_t l = 0; l < net.params().conv.size(); ++l) {
    const auto& bank = net.params().conv[l].bank;
    if (bank.tiles() < 2) continue;
    SimilarityReport r = filter_similarity(bank);
    r.layer = l;
    out.push_back(std::move(r));
  }
  return out;
}

CostReport analog_cost_model(std::span<const CostLayerSpec> layers) {
  CostReport report;
  for (const auto& spec : layers) {
    if (spec.patches == 0 || spec.tiles == 0) {
      throw Error("cost layer " + spec.name + " needs positive patches and tiles");
    }
    CostLayer layer;
    layer.spec = spec;
    layer.macs = spec.patches * spec.patch_size * spec.c_out;
    layer.untiled_units = spec.patches;
    layer.tiled_units = (spec.patches + spec.tiles - 1) / spec.tiles;
    layer.speedup = static_cast<double>(layer.untiled_units) / static_cast<double>(layer.tiled_units);
    report.total_macs += layer.macs;
    report.total_untiled_units += layer.untiled_units;
    report.total_tiled_units += layer.tiled_units;
    report.layers.push_back(layer);
  }
  report.load_balanced = !report.layers.empty();
  for (const auto& layer : report.layers) {
    report.load_balanced = report.load_balanced && layer.tiled_units == report.layers.front().tiled_units;
  }
  return report;
}

CostReport analog_cost_model(const NetworkConfig& cfg) {
  cfg.validate();
  std::vector<CostLayerSpec> specs;
  for (std::size_t l = 0; l < cfg.layers(); ++l) {
    const ConvGeometry g = cfg.conv_geometry(l);
    specs.push_back({"conv" + std::to_string(l + 1), g.patches(), g.patch_size(), g.c_out, cfg.tiles[l]});
  }
  return analog_cost_model(specs);
}

void print_cost_report(std::ostream& out, const CostReport& report) {
  out << std::left << std::setw(8) << "layer" << std::right << std::setw(8) << "n_p" << std::setw(8)
      << "k" << std::setw(7) << "c_out" << std::setw(7) << "tiles" << std::setw(13) << "MACs"
      << std::setw(10) << "untiled" << std::setw(9) << "tiled" << std::setw(9) << "speedup" << '\n';
  for (const auto& l : report.layers) {
    out << std::left << std::setw(8) << l.spec.name << std::right << std::setw(8) << l.spec.patches
        << std::setw(8) << l.spec.patch_size << std::setw(7) << l.spec.c_out << std::setw(7)
        << l.spec.tiles << std::setw(13) << l.macs << std::setw(10) << l.untiled_units << std::setw(9)
        << l.tiled_units << std::setw(9) << std::fixed << std::setprecision(2) << l.speedup
        << std::defaultfloat << '\n';
  }
  out << std::left << std::setw(38) << "total" << std::right << std::setw(13) << report.total_macs
      << std::setw(10) << report.total_untiled_units << std::setw(9) << report.total_tiled_units
      << '\n';
  out << "load balanced: " << (report.load_balanced ? "yes" : "no") << '\n';
}

TensorF fgsm_apply(const TensorF& image, const TensorF& mean, const TensorF& gradient, double eps) {
  if (eps < 0.0) throw Error("fgsm eps must be non-negative, got " + format_real(eps));
  require_shape(gradient.shape(), image.shape(), "fgsm gradient");
  require_shape(mean.shape(), image.shape(), "fgsm mean");
  if (eps == 0.0) return image;
  const auto step = static_cast<float>(eps / 255.0);
  TensorF out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float g = gradient[i];
    const float s = g > 0.0f ? step : (g < 0.0f ? -step : 0.0f);
    out[i] = std::clamp(image[i] + s, -mean[i], 1.0f - mean[i]);
  }
  return out;
}

FgsmAttack fgsm_perturb(const Network<float>& net, const TensorF& image, const TensorF& mean,
                        std::size_t label, double eps, SeededRng& rng) {
  const auto pass = net.forward(image, Mode::test, rng);
  const auto lg = softmax_cross_entropy(pass.prediction.logits, label);
  FgsmAttack attack;
  attack.gradient = net.backward(pass, lg.grad, true).input.reshaped(image.shape());
  attack.perturbed = fgsm_apply(image, mean, attack.gradient, eps);
  return attack;
}

double snr_of(std::span<const float> image, std::span<const float> perturbation) {
  if (image.size() != perturbation.size()) throw Error("snr: image and perturbation lengths differ");
  double signal = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    signal += static_cast<double>(image[i]) * image[i];
    noise += static_cast<double>(perturbation[i]) * perturbation[i];
  }
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

AdversarialCurve adversarial_curve(const Network<float>& net, const DatasetSplit& test,
                                   std::span<const double> eps_grid, std::size_t votes,
                                   std::uint64_t seed, std::size_t max_images) {
  if (votes == 0) throw Error("adversarial curve needs at least one vote");
  for (double e : eps_grid) {
    if (!(e >= 0.0)) throw Error("eps grid values must be non-negative, got " + format_real(e));
  }
  const std::size_t n = max_images == 0 ? test.size() : std::min(max_images, test.size());
  const std::size_t m = eps_grid.size();
  std::vector<char> correct(n, 0);
  std::vector<double> hits(n * m, 0.0), snr(n * m, 0.0);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < n; ++i) {
    const TensorF img = test.image(i);
    const std::size_t label = test.labels[i];
    SeededRng clean_rng = SeededRng::derive(seed, {kAttackStream, i});
    if (predict_majority(net, img, votes, clean_rng).label != label) continue;
    correct[i] = 1;
    SeededRng grad_rng = SeededRng::derive(seed, {kAttackStream, i});
    const FgsmAttack attack = fgsm_perturb(net, img, test.mean, label, 0.0, grad_rng);
    TensorF raw = img;
    for (std::size_t p = 0; p < raw.size(); ++p) raw[p] += test.mean[p];
    for (std::size_t e = 0; e < m; ++e) {
      const TensorF adv = fgsm_apply(img, test.mean, attack.gradient, eps_grid[e]);
      std::vector<float> delta(adv.size());
      for (std::size_t p = 0; p < adv.size(); ++p) delta[p] = adv[p] - img[p];
      snr[i * m + e] = snr_of(raw.values(), delta);
      SeededRng eval_rng = SeededRng::derive(seed, {kAttackStream, i});
      hits[i * m + e] = predict_majority(net, adv, votes, eval_rng).label == label ? 1.0 : 0.0;
    }
  }

  AdversarialCurve curve;
  curve.evaluated = n;
  for (char c : correct) curve.correct += c ? 1 : 0;
  if (curve.correct == 0) throw Error("adversarial curve: no correctly classified test image");
  for (std::size_t e = 0; e < m; ++e) {
    double acc = 0.0, snr_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!correct[i]) continue;
      acc += hits[i * m + e];
      snr_sum += snr[i * m + e];
    }
    const auto count = static_cast<double>(curve.correct);
    curve.points.push_back({eps_grid[e], snr_sum / count, 100.0 * acc / count});
  }
  return curve;
}

std::size_t accuracy_inversions(const AdversarialCurve& curve) {
  std::size_t inversions = 0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    if (curve.points[i].accuracy_pct > curve.points[i - 1].accuracy_pct) ++inversions;
  }
  return inversions;
}

double gap_reduction(double base_pct, double new_pct) {
  if (base_pct == 100.0) return std::numeric_limits<double>::quiet_NaN();
  return 100.0 * (new_pct - base_pct) / (100.0 - base_pct);
}

void write_adversarial_csv(const std::filesystem::path& path, const AdversarialCurve& curve) {
  std::ofstream out = open_csv(path);
  out << "eps,snr_db,accuracy_pct\n";
  for (const auto& p : curve.points) {
    out << format_real(p.eps) << ',' << format_real(p.snr_db) << ',' << format_real(p.accuracy_pct)
        << '\n';
  }
}

void write_similarity_csv(const std::filesystem::path& path,
                          std::span<const SimilarityReport> reports) {
  std::ofstream out = open_csv(path);
  out << "layer,channel,tile_i,tile_j,corr\n";
  for (const auto& r : reports) {
    for (const auto& p : r.pairs) {
      out << r.layer + 1 << ',' << p.channel + 1 << ',' << p.tile_i + 1 << ',' << p.tile_j + 1 << ','
          << format_real(p.corr) << '\n';
    }
  }
}

template SimilarityReport filter_similarity(const TiledKernelBank<float>&);
template SimilarityReport filter_similarity(const TiledKernelBank<double>&);
template std::vector<SimilarityReport> network_similarity(const Network<float>&);
template std::vector<SimilarityReport> network_similarity(const Network<double>&);

}  // namespace rapa
