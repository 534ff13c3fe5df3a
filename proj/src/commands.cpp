#include "rapa/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "rapa/checkpoint.hpp"
#include "rapa/kernels.hpp"
#include "rapa/theory.hpp"

namespace rapa {

namespace {

std::filesystem::path checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? cfg.out / "final.rapa" : cfg.checkpoint;
}

std::string percent(double v) { return format_real(std::round(v * 100.0) / 100.0); }

bool anneal_boundary(const TrainConfig& t, std::size_t epochs_done) {
  return epochs_done > t.warmup && (epochs_done - t.warmup) % t.anneal_period == 0;
}

}  // namespace

CifarData load_run_data(const RunConfig& cfg) {
  if (cfg.data.empty()) throw Error("command '" + cfg.command + "' needs a dataset (--data DIR)");
  CifarData data = load_cifar10(cfg.data);
  data.train = take_subset(data.train, cfg.subset, cfg.seed);
  data.test = take_subset(data.test, cfg.test_subset, cfg.seed + 1);
  return data;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const CifarData data = load_run_data(cfg);
  Network<float> net(cfg.network, cfg.seed);
  std::filesystem::create_directories(cfg.out);
  std::ofstream metrics(cfg.out / "metrics.csv", std::ios::trunc);
  if (!metrics) throw Error("cannot write " + (cfg.out / "metrics.csv").string());
  metrics << "epoch,lr,train_err_pct,test_err_pct,similarity_layer1\n";
  metrics.flush();

  log << "train " << net.config().summary() << " params=" << count_parameters(net.config())
      << " images=" << data.train.size() << "/" << data.test.size() << '\n';
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.train, epoch);
    const EpochMetrics m = train_epoch(net, data.train, cfg.train, epoch);
    const bool last = epoch + 1 == cfg.train.epochs;
    std::string test_err, similarity;
    if (cfg.eval_each_epoch || last) test_err = format_real(evaluate(net, data.test, 1, cfg.seed));
    if (net.params().conv.front().bank.tiles() >= 2) {
      similarity = format_real(filter_similarity(net.params().conv.front().bank).similarity);
    }
    metrics << epoch + 1 << ',' << format_real(lr) << ',' << format_real(m.train_error_pct) << ','
            << test_err << ',' << similarity << '\n';
    metrics.flush();
    log << "epoch " << epoch + 1 << " lr " << format_real(lr) << " loss " << format_real(m.mean_loss)
        << " train_err " << percent(m.train_error_pct) << "% test_err "
        << (test_err.empty() ? std::string("-") : test_err + "%") << '\n';
    if (anneal_boundary(cfg.train, epoch + 1) && !last) {
      save_checkpoint(cfg.out / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".rapa"), net,
                      cfg.seed, epoch + 1);
    }
  }
  save_checkpoint(cfg.out / "final.rapa", net, cfg.seed, cfg.train.epochs);
  const auto reports = network_similarity(net);
  if (!reports.empty()) write_similarity_csv(cfg.out / "similarity.csv", reports);
  log << "wrote " << (cfg.out / "metrics.csv").string() << " and " << (cfg.out / "final.rapa").string()
      << '\n';
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path(cfg));
  const CifarData data = load_run_data(cfg);
  const double single = evaluate(ckpt.net, data.test, 1, cfg.seed);
  const double voted = evaluate(ckpt.net, data.test, cfg.votes, cfg.seed);
  log << "checkpoint epoch " << ckpt.epoch << ", " << data.test.size() << " test images\n"
      << "single test error: " << format_real(single) << "%\n"
      << "vote(" << cfg.votes << ") test error: " << format_real(voted) << "%\n";
  return 0;
}

int cmd_attack(const RunConfig& cfg, std::ostream& log) {
  const LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path(cfg));
  const CifarData data = load_run_data(cfg);
  const AdversarialCurve curve =
      adversarial_curve(ckpt.net, data.test, cfg.eps_grid, cfg.votes, cfg.seed, cfg.attack_images);
  write_adversarial_csv(cfg.out / "adversarial.csv", curve);
  log << "attacked " << curve.correct << " of " << curve.evaluated
      << " test images (correctly classified), votes=" << cfg.votes << '\n';
  for (const auto& p : curve.points) {
    log << "eps " << format_real(p.eps) << "  snr " << format_real(p.snr_db) << " dB  accuracy "
        << format_real(p.accuracy_pct) << "%\n";
  }
  return 0;
}

int cmd_theory(const RunConfig& cfg, std::ostream& log) {
  const auto rows = theory::run_instances(cfg.theory_instances, cfg.seed, cfg.theory_max_dims,
                                          cfg.theory_max_tiles, cfg.theory_examples);
  theory::write_theory_csv(cfg.out / "theory.csv", rows);
  double max_gap = 0.0, min_r = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    max_gap = std::max(max_gap, r.decomposition.gap);
    min_r = std::min(min_r, r.decomposition.regularizer);
  }
  const auto worked = theory::worked_instance();
  log << rows.size() << " instances: max |lhs - rhs| = " << format_real(max_gap)
      << ", min R = " << format_real(min_r) << '\n'
      << "worked case: R exact = " << format_real(theory::regularizer_exact(worked.model, worked.data))
      << ", R taylor = " << format_real(theory::regularizer_taylor(worked.model, worked.data)) << '\n';
  return 0;
}

int cmd_cost(const RunConfig& cfg, std::ostream& log) {
  const CostReport report = cfg.cost_layers.empty() ? analog_cost_model(cfg.network)
                                                    : analog_cost_model(cfg.cost_layers);
  print_cost_report(log, report);
  return 0;
}

int cmd_reduce(const RunConfig& cfg, std::ostream& log) {
  const LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path(cfg));
  const Network<float> reduced = reduce_network(ckpt.net);
  const auto target = cfg.out / "reduced.rapa";
  save_checkpoint(target, reduced, ckpt.seed, ckpt.epoch);
  log << "wrote " << target.string() << " (" << count_parameters(reduced.config()) << " conv parameters, was "
      << count_parameters(ckpt.net.config()) << ")\n";
  if (!cfg.data.empty()) {
    const CifarData data = load_run_data(cfg);
    log << "single test error: tiled " << format_real(evaluate(ckpt.net, data.test, 1, cfg.seed))
        << "%, reduced " << format_real(evaluate(reduced, data.test, 1, cfg.seed)) << "%\n";
  }
  return 0;
}

int cmd_synth(const RunConfig& cfg, std::ostream& log) {
  write_synthetic_cifar10(cfg.out, cfg.synth_train_per_batch, cfg.synth_test, cfg.seed);
  log << "wrote synthetic dataset to " << cfg.out.string() << " (" << 5 * cfg.synth_train_per_batch
      << " train, " << cfg.synth_test << " test)\n";
  return 0;
}

int run_command(const RunConfig& cfg, std::ostream& log) {
  kernels::set_workers(cfg.workers);
  if (cfg.command == "train") return cmd_train(cfg, log);
  if (cfg.command == "eval") return cmd_eval(cfg, log);
  if (cfg.command == "attack") return cmd_attack(cfg, log);
  if (cfg.command == "theory") return cmd_theory(cfg, log);
  if (cfg.command == "cost") return cmd_cost(cfg, log);
  if (cfg.command == "reduce") return cmd_reduce(cfg, log);
  if (cfg.command == "synth") return cmd_synth(cfg, log);
  throw Error("unknown command '" + cfg.command + "'");
}

}  // namespace rapa
