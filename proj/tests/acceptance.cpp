// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Exit status is non-zero when any criterion fails.
//
// Criteria 8-10 train on CIFAR-10 from $RAPA_CIFAR10_DIR when set; otherwise
// a synthetic dataset in the same binary layout is generated under --work.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "rapa/analysis.hpp"
#include "rapa/checkpoint.hpp"
#include "rapa/commands.hpp"
#include "rapa/theory.hpp"
#include "rapa/training.hpp"

using namespace rapa;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- helpers

Tensor random_tensor(Shape shape, SeededRng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

std::vector<double> numeric_gradient(Tensor& param, const std::function<double()>& f) {
  std::vector<double> g(param.size());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double keep = param[i];
    param[i] = keep + 1e-5;
    const double up = f();
    param[i] = keep - 1e-5;
    const double down = f();
    param[i] = keep;
    g[i] = (up - down) / 2e-5;
  }
  return g;
}

double rel_error(std::span<const double> a, std::span<const double> n) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(n[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - n[i]) / scale);
  }
  return worst;
}

double project(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

// Inputs kept away from max-pool ties and ReLU kinks.
Tensor separated(Shape shape, SeededRng& rng, double offset) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = offset + 0.01 * static_cast<double>(rng.below(1000)) + 1e-3 * rng.uniform();
  }
  return t;
}

// ---------------------------------------------------------------- 1-7

Outcome parameter_counts() {
  NetworkConfig tiled;
  tiled.tiles = {16, 4, 1};
  tiled.scheme = SchemeKind::random;
  const auto a = count_parameters(NetworkConfig::reference());
  const auto b = count_parameters(tiled);
  const auto c = count_parameters(NetworkConfig::enlarged());
  return {a == 79'328 && b == 192'704 && c == 193'032,
          "reference " + std::to_string(a) + ", tiled (16,4,1) " + std::to_string(b) + ", enlarged " +
              std::to_string(c)};
}

Outcome identical_kernel_equivalence() {
  SeededRng rng(2);
  const SchemeKind schemes[] = {SchemeKind::none,          SchemeKind::random,
                                SchemeKind::random_fixed,  SchemeKind::image_overlap,
                                SchemeKind::image_pad,     SchemeKind::alternate,
                                SchemeKind::perforated};
  double worst = 0.0;
  std::size_t checks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ConvGeometry g;
    g.k_h = g.k_w = 1 + 2 * rng.below(3);
    g.pad = g.k_h / 2;
    g.h = g.w = 4 + rng.below(13);
    g.c_in = 1 + rng.below(4);
    g.c_out = 1 + rng.below(6);
    const Tensor x = random_tensor({g.h, g.w, g.c_in}, rng);
    const auto patches = im2col(x, g);
    const KernelMatrix<double> k{random_tensor({g.patch_size(), g.c_out}, rng), random_tensor({g.c_out}, rng)};
    const Tensor want = conv_forward(patches, k);
    for (SchemeKind kind : schemes) {
      const std::size_t q = 2 + rng.below(2);
      const std::size_t tiles = kind == SchemeKind::none ? 1 : q * q;
      SeededRng init(trial);
      PartitionBuilder builder({kind, tiles}, g, init);
      const std::size_t bank_size = kind == SchemeKind::perforated ? 1 : tiles;
      const TiledKernelBank<double> bank{g, std::vector(bank_size, k)};
      for (Mode mode : {Mode::train, Mode::test}) {
        // Perforation drops rows by definition while training; only its
        // test-time (all rows) form is an untiled convolution.
        if (kind == SchemeKind::perforated && mode == Mode::train) continue;
        const TilePartition part = mode == Mode::train ? builder.build(rng) : builder.build_for_test(rng);
        const Tensor got = tiled_conv_forward(patches, bank, part);
        for (std::size_t i = 0; i < got.size(); ++i) {
          worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(std::abs(want[i]), 1e-300));
        }
        ++checks;
      }
    }
  }
  return {worst <= 1e-12, std::to_string(checks) + " scheme/geometry checks, max rel err " + format_real(worst)};
}

Outcome gradient_suite() {
  SeededRng rng(3);
  std::vector<std::pair<std::string, double>> errs;
  // conv
  {
    ConvGeometry g = same_conv(8, 3, 4, 3);
    Tensor x = random_tensor({8, 8, 3}, rng);
    KernelMatrix<double> k{random_tensor({27, 4}, rng), random_tensor({4}, rng)};
    const Tensor w = random_tensor({64, 4}, rng);
    auto f = [&] { return project(conv_forward(im2col(x, g), k), w); };
    const auto gk = conv_backward_kernel(im2col(x, g), w);
    const Tensor gx = conv_backward_input(w, k, g);
    errs.push_back({"conv dK", rel_error(gk.weights.values(), numeric_gradient(k.weights, f))});
    errs.push_back({"conv dbias", rel_error(gk.bias.values(), numeric_gradient(k.bias, f))});
    errs.push_back({"conv dx", rel_error(gx.values(), numeric_gradient(x, f))});
  }
  // fully connected
  {
    Tensor x = random_tensor({20}, rng), wts = random_tensor({20, 5}, rng), b = random_tensor({5}, rng);
    const Tensor w = random_tensor({5}, rng);
    auto f = [&] { return project(fc_forward(x, wts, b), w); };
    const auto g = fc_backward(x, wts, w);
    errs.push_back({"fc dW", rel_error(g.weights.values(), numeric_gradient(wts, f))});
    errs.push_back({"fc db", rel_error(g.bias.values(), numeric_gradient(b, f))});
    errs.push_back({"fc dx", rel_error(g.input.values(), numeric_gradient(x, f))});
  }
  // LRN
  {
    const LrnParams p{3, 0.5, 0.75};
    Tensor x = random_tensor({6, 6, 3}, rng);
    const Tensor w = random_tensor({6, 6, 3}, rng);
    auto f = [&] { return project(lrn_forward(x, p, static_cast<LrnState<double>*>(nullptr)), w); };
    LrnState<double> state;
    lrn_forward(x, p, &state);
    errs.push_back({"lrn dx", rel_error(lrn_backward(w, state, p).values(), numeric_gradient(x, f))});
  }
  // pooling
  for (PoolKind kind : {PoolKind::max, PoolKind::average, PoolKind::stochastic, PoolKind::mixed}) {
    for (Mode mode : {Mode::train, Mode::test}) {
      Tensor x = separated({6, 6, 3}, rng, kind == PoolKind::stochastic ? 0.5 : -5.0);
      Tensor beta = random_tensor({3}, rng, 0.3);
      const Tensor* b = kind == PoolKind::mixed ? &beta : nullptr;
      const Tensor w = random_tensor({3, 3, 3}, rng);
      auto f = [&] {
        SeededRng draw(5);
        PoolState<double> s;
        return project(pool_forward(x, PoolSpec{kind}, b, kMixedPoolMu, mode, &draw, s), w);
      };
      SeededRng draw(5);
      PoolState<double> state;
      pool_forward(x, PoolSpec{kind}, b, kMixedPoolMu, mode, &draw, state);
      const auto g = pool_backward(w, state, b, kMixedPoolMu);
      const std::string name = std::string(pool_kind_name(kind)) + (mode == Mode::train ? " train" : " test");
      errs.push_back({name + " dx", rel_error(g.input.values(), numeric_gradient(x, f))});
      if (kind == PoolKind::mixed) {
        errs.push_back({name + " dbeta", rel_error(g.beta.values(), numeric_gradient(beta, f))});
      }
    }
  }
  std::string worst_name;
  double worst = 0.0;
  for (const auto& [name, e] : errs) {
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  }
  return {worst < 1e-4, std::to_string(errs.size()) + " gradients, max rel err " + format_real(worst) + " (" +
                            worst_name + ")"};
}

Outcome decomposition_identity() {
  const auto rows = theory::run_instances(100, 4, 4, 4, 8);
  double max_gap = 0.0, min_r = INFINITY;
  for (const auto& r : rows) {
    max_gap = std::max(max_gap, r.decomposition.gap);
    min_r = std::min(min_r, r.decomposition.regularizer);
  }
  return {rows.size() == 100 && max_gap < 1e-12 && min_r >= -1e-12,
          "100 instances, max gap " + format_real(max_gap) + ", min R " + format_real(min_r)};
}

Outcome taylor_consistency() {
  const auto w = theory::worked_instance();
  const double exact = theory::regularizer_exact(w.model, w.data);
  const double taylor = theory::regularizer_taylor(w.model, w.data);
  const auto half = theory::scale_spread(w.model, 0.5);
  const double e1 = std::abs(exact - taylor);
  const double e2 = std::abs(theory::regularizer_exact(half, w.data) - theory::regularizer_taylor(half, w.data));
  const double factor = e1 / e2;
  const bool ok = std::abs(exact - 0.120115) < 1e-6 && std::abs(taylor - 0.125) < 1e-6 && factor >= 4.0;
  return {ok, "R_exact " + fixed(exact, 6) + ", R_taylor " + fixed(taylor, 6) +
                  ", error reduction at half spread x" + fixed(factor, 2)};
}

Outcome cost_model() {
  NetworkConfig cfg;
  const auto untiled = analog_cost_model(cfg);
  cfg.tiles = {16, 4, 1};
  cfg.scheme = SchemeKind::random;
  const auto tiled = analog_cost_model(cfg);
  bool ok = tiled.load_balanced && tiled.layers.size() == 3 && untiled.layers.size() == 3;
  const std::uint64_t units[] = {1024, 256, 64};
  const double speedups[] = {16, 4, 1};
  std::string t, u, s;
  for (std::size_t l = 0; ok && l < 3; ++l) {
    ok = ok && tiled.layers[l].tiled_units == 64 && untiled.layers[l].tiled_units == units[l] &&
         tiled.layers[l].speedup == speedups[l];
    t += (l ? "," : "") + std::to_string(tiled.layers[l].tiled_units);
    u += (l ? "," : "") + std::to_string(untiled.layers[l].tiled_units);
    s += (l ? "," : "") + format_real(tiled.layers[l].speedup);
  }
  return {ok, "tiled units (" + t + ") balanced=" + (tiled.load_balanced ? "yes" : "no") + ", untiled (" + u +
                  "), speedups (" + s + ")"};
}

Outcome partition_properties() {
  SeededRng rng(7);
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto part = sample_random_partition(1024, 16, rng);
    if (!part.is_partition() || part.patches() != 1024) {
      ++bad;
      continue;
    }
    for (const auto& s : part.subsets()) bad += s.size() != 64;
  }
  std::size_t mismatches = 0, cells = 0;
  for (std::size_t q : {2u, 4u}) {
    for (std::size_t side : {8u, 16u, 32u}) {
      const auto g = same_conv(side, 1, 1);
      const auto img = build_partition({SchemeKind::image_overlap, q * q}, g, rng);
      const auto alt = build_partition({SchemeKind::alternate, q * q}, g, rng);
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const std::size_t l = y * side + x;
          mismatches += img.assignment[l] != (q * x) / side + q * ((q * y) / side);
          mismatches += alt.assignment[l] != x % q + q * (y % q);
          cells += 2;
        }
      }
    }
  }
  return {bad == 0 && mismatches == 0, "10000 random partitions, " + std::to_string(bad) + " invalid; " +
                                           std::to_string(cells) + " grid cells, " + std::to_string(mismatches) +
                                           " formula mismatches"};
}

// ---------------------------------------------------------------- 8-11

struct Run {
  std::string name;
  double train_err = 0.0;  // last-epoch training error
  double test_err = 0.0;
  double similarity = NAN;
  std::optional<Network<float>> net;
};

Run train_run(const std::string& name, const CifarData& data, SchemeKind scheme, PoolKind pooling,
              std::size_t epochs, std::uint64_t seed) {
  NetworkConfig cfg;
  cfg.pooling = pooling;
  if (scheme != SchemeKind::none) {
    cfg.scheme = scheme;
    cfg.tiles = {16, 4, 1};
  }
  TrainConfig tc = TrainConfig::defaults(cfg.tiled());
  tc.epochs = epochs;
  tc.seed = seed;
  Network<float> net(cfg, seed);
  Run run{name};
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t e = 0; e < epochs; ++e) run.train_err = train_epoch(net, data.train, tc, e).train_error_pct;
  run.test_err = evaluate(net, data.test, 1, seed);
  if (net.params().conv.front().bank.tiles() >= 2) {
    run.similarity = filter_similarity(net.params().conv.front().bank).similarity;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "  run " << name << ": train err " << fixed(run.train_err) << "%, test err " << fixed(run.test_err)
            << "%, S " << format_real(run.similarity) << " (" << fixed(secs, 0) << " s)" << std::endl;
  run.net = std::move(net);
  return run;
}

std::filesystem::path dataset_dir(const std::filesystem::path& work, std::string& origin) {
  if (const char* env = std::getenv("RAPA_CIFAR10_DIR"); env && *env) {
    origin = std::string("CIFAR-10 at ") + env;
    return env;
  }
  const auto dir = work / "synthetic";
  if (!std::filesystem::exists(dir / "test_batch.bin")) write_synthetic_cifar10(dir, 1000, 2000, 2024);
  origin = "synthetic CIFAR-format data (RAPA_CIFAR10_DIR unset)";
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome reproducibility(const std::filesystem::path& data, const std::filesystem::path& work) {
  auto cfg_for = [&](const std::string& out) {
    RunConfig cfg = default_config({{"data", data.string()}, {"out", (work / out).string()}, {"subset", "200"},
                                    {"test_subset", "200"}, {"epochs", "2"}, {"tiles", "16,4,1"}, {"seed", "5"}});
    cfg.command = "train";
    return cfg;
  };
  std::ostringstream log;
  run_command(cfg_for("repro_a"), log);
  run_command(cfg_for("repro_b"), log);
  const std::string a = slurp(work / "repro_a" / "metrics.csv");
  const bool same_metrics = !a.empty() && a == slurp(work / "repro_b" / "metrics.csv");

  const LoadedCheckpoint loaded = load_checkpoint(work / "repro_a" / "final.rapa");
  save_checkpoint(work / "repro_a" / "resaved.rapa", loaded.net, loaded.seed, loaded.epoch);
  const LoadedCheckpoint again = load_checkpoint(work / "repro_a" / "resaved.rapa");
  const CifarData d = load_run_data(cfg_for("repro_a"));
  std::size_t differ = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    for (Mode mode : {Mode::train, Mode::test}) {
      SeededRng r1(i), r2(i);
      const auto x = loaded.net.predict(d.test.image(i), mode, r1).logits;
      const auto y = again.net.predict(d.test.image(i), mode, r2).logits;
      for (std::size_t j = 0; j < x.size(); ++j) differ += std::memcmp(&x[j], &y[j], sizeof(double)) != 0;
    }
  }
  const bool same_file = slurp(work / "repro_a" / "final.rapa") == slurp(work / "repro_a" / "resaved.rapa");
  return {same_metrics && differ == 0 && same_file,
          std::string("metrics.csv ") + (same_metrics ? "byte-identical" : "DIFFERS") + ", " +
              std::to_string(differ) + " logit mismatches after round trip over 100 passes, re-saved checkpoint " +
              (same_file ? "identical" : "DIFFERS")};
}

Outcome fgsm_properties(const Network<float>& net, const DatasetSplit& test, std::uint64_t seed) {
  // Support: every component of the step is -eps', 0 or +eps' before clamping.
  const double eps = 16.0, step = eps / 255.0;
  std::size_t off_support = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    SeededRng rng = SeededRng::derive(seed, {30, i});
    const TensorF img = test.image(i);
    const auto attack = fgsm_perturb(net, img, test.mean, test.labels[i], eps, rng);
    for (std::size_t p = 0; p < img.size(); ++p) {
      const double g = attack.gradient[p];
      const double want = g > 0 ? step : (g < 0 ? -step : 0.0);
      const double raw = static_cast<double>(img[p]) + test.mean[p];
      const double clamped = std::clamp(raw + want, 0.0, 1.0) - raw;
      const double d = static_cast<double>(attack.perturbed[p]) - img[p];
      off_support += std::abs(d - clamped) > 1e-6;
    }
  }
  const std::vector<double> grid{0.0, eps};
  const std::size_t images = std::min<std::size_t>(1000, test.size());
  const auto single = adversarial_curve(net, test, grid, 1, seed, images);
  const auto voted = adversarial_curve(net, test, grid, 5, seed, images);
  const double s = single.points[1].accuracy_pct, v = voted.points[1].accuracy_pct;
  const bool ok = off_support == 0 && single.points[0].accuracy_pct == 100.0 &&
                  voted.points[0].accuracy_pct == 100.0 && v >= s - 2.0;
  return {ok, std::to_string(off_support) + " off-support components over 100 images; eps=0 accuracy " +
                  fixed(single.points[0].accuracy_pct) + "% / " + fixed(voted.points[0].accuracy_pct) +
                  "%; eps=16 accuracy single " + fixed(s) + "% (" + std::to_string(single.correct) + " images), vote(5) " +
                  fixed(v) + "% (" + std::to_string(voted.correct) + " images)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::filesystem::path work = "acceptance_work";
  std::set<int> only;
  std::size_t epochs = 30;
  app.add_option("--work", work, "scratch directory for datasets and runs");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--epochs", epochs, "training epochs for criteria 8-10 (30 by default)");
  CLI11_PARSE(app, argc, argv);
  std::filesystem::create_directories(work);

  int failures = 0;
  auto wanted = [&](int id) { return only.empty() || only.count(id); };
  auto report = [&](int id, const std::string& title, double budget_s, auto&& body) {
    if (!wanted(id)) return;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = secs <= budget_s;
    const bool pass = o.pass && in_budget;
    failures += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << " " << title << ": " << o.detail << " ["
              << fixed(secs, 1) << " s of " << fixed(budget_s, 0) << " s" << (in_budget ? "" : ", OVER BUDGET")
              << "]" << std::endl;
  };

  report(1, "parameter counts", 1, parameter_counts);
  report(2, "identical-kernel equivalence", 10, identical_kernel_equivalence);
  report(3, "gradient suite", 60, gradient_suite);
  report(4, "decomposition identity", 30, decomposition_identity);
  report(5, "Taylor consistency", 10, taylor_consistency);
  report(6, "cost model", 1, cost_model);
  report(7, "partition properties", 30, partition_properties);

  std::string origin;
  std::optional<CifarData> data;
  std::optional<Run> random_max;
  const std::uint64_t seed = 1;
  auto load_data = [&] {
    if (data) return;
    const auto dir = dataset_dir(work, origin);
    CifarData full = load_cifar10(dir);
    data = CifarData{take_subset(full.train, 2000, seed), take_subset(full.test, 2000, seed + 1)};
    std::cout << "  data: " << origin << "; " << data->train.size() << " train, " << data->test.size()
              << " test images" << std::endl;
  };

  std::optional<Run> random_avg;
  report(8, "desk-scale training", 30 * 60, [&]() -> Outcome {
    load_data();
    Run untiled = train_run("untiled/max", *data, SchemeKind::none, PoolKind::max, epochs, seed);
    random_max = train_run("random(16,4,1)/max", *data, SchemeKind::random, PoolKind::max, epochs, seed);
    Run perforated = train_run("perforated(16,4,1)/max", *data, SchemeKind::perforated, PoolKind::max, epochs, seed);
    random_avg = train_run("random(16,4,1)/average", *data, SchemeKind::random, PoolKind::average, epochs, seed);
    const bool a = untiled.train_err < 35.0 && random_max->train_err < 35.0;
    const bool b = random_max->test_err <= untiled.test_err + 8.0;
    const bool c = perforated.test_err > random_max->test_err;
    return {a && b && c,
            "(a) train err untiled " + fixed(untiled.train_err) + "%, random " + fixed(random_max->train_err) +
                "% " + (a ? "ok" : "NOT < 35%") + "; (b) test err random " + fixed(random_max->test_err) +
                "% vs untiled " + fixed(untiled.test_err) + "% " + (b ? "ok" : "NOT within 8 points") +
                "; (c) perforated " + fixed(perforated.test_err) + "% " +
                (c ? "worse than random" : "NOT worse than random") + " (" + std::to_string(epochs) + " epochs)"};
  });

  report(9, "similarity trend", 60, [&]() -> Outcome {
    if (!random_max || !random_avg) return {false, "needs the criterion 8 runs (include 8 in --only)"};
    const double smax = random_max->similarity, savg = random_avg->similarity;
    const bool in_range = savg >= -1 && savg <= 1 && smax >= -1 && smax <= 1;
    return {in_range && savg > smax, "layer-1 S average " + format_real(savg) + ", max " + format_real(smax)};
  });

  report(10, "FGSM properties", 10 * 60, [&]() -> Outcome {
    if (!random_max) return {false, "needs the criterion 8 random-tiled model (include 8 in --only)"};
    return fgsm_properties(*random_max->net, data->test, seed);
  });

  report(11, "reproducibility", 5 * 60, [&] {
    std::string ignored;
    return reproducibility(dataset_dir(work, ignored), work);
  });

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
