// ocdc: batch experiment driver for the coherent dot-product chip
// simulator. Every subcommand writes a manifest.json with the resolved
// configuration; rerunning from a manifest reproduces the outputs
// bit-for-bit. Exit codes: 0 success, 2 config error, 3 threshold
// failure under --check.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "ocdc/calibration.hpp"
#include "ocdc/experiments.hpp"
#include "ocdc/io.hpp"
#include "ocdc/lowering.hpp"

namespace {

constexpr double kPi = 3.14159265358979323846;

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  bool has_seed = false;
  std::uint64_t seed = 0;
  std::string backend;
  std::string mode;
  bool check = false;
};

void add_common_flags(CLI::App* cmd, CliOptions& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config or manifest");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "master seed override")
      ->each([&opts](const std::string&) { opts.has_seed = true; });
  cmd->add_option("--backend", opts.backend, "exact or chip")
      ->check(CLI::IsMember({"exact", "chip"}));
  cmd->add_option("--mode", opts.mode, "cbd, cid, ncbd or inon")
      ->check(CLI::IsMember({"cbd", "cid", "ncbd", "inon"}));
  cmd->add_flag("--check", opts.check, "exit 3 if thresholds are missed");
}

ocdc::exp::ExperimentConfig resolve_config(const CliOptions& opts,
                                           const std::string& default_id) {
  ocdc::exp::ExperimentConfig config = opts.config_path.empty()
                                           ? ocdc::exp::toy_defaults()
                                           : ocdc::exp::load_config(opts.config_path);
  if (config.experiment_id == "run") config.experiment_id = default_id;
  if (!opts.out_dir.empty()) config.out_dir = opts.out_dir;
  if (opts.has_seed) config.master_seed = opts.seed;
  if (!opts.backend.empty())
    config.backend = opts.backend == "chip" ? ocdc::net::Backend::ChipSim
                                            : ocdc::net::Backend::Exact;
  if (!opts.mode.empty()) {
    if (opts.mode == "cbd") config.mode = ocdc::net::DomainMode::CBD;
    if (opts.mode == "cid") config.mode = ocdc::net::DomainMode::CID;
    if (opts.mode == "ncbd") config.mode = ocdc::net::DomainMode::NCBD;
    if (opts.mode == "inon") config.mode = ocdc::net::DomainMode::InOn;
  }
  return config;
}

int finish(bool check, bool passed, const std::string& what) {
  if (check && !passed) {
    std::cerr << "check failed: " << what << "\n";
    return 3;
  }
  return 0;
}

int cmd_characterize(const CliOptions& opts) {
  auto config = resolve_config(opts, "characterize");
  auto report = ocdc::exp::run_characterize(config);
  std::cout << "evenness spread " << report.evenness_spread_db
            << " dB, min fit R^2 " << report.min_r_squared
            << ", interference peaks monotone "
            << (report.peaks_monotone ? "yes" : "no") << "\n";
  const bool evenness_ok =
      config.deviations.splitter_unevenness_db == 0.0 ||
      report.evenness_spread_db <=
          config.deviations.splitter_unevenness_db + 1e-9;
  return finish(opts.check,
                report.peaks_monotone && report.min_r_squared >= 0.99 &&
                    evenness_ok,
                "characterization thresholds");
}

int cmd_calibrate(const CliOptions& opts) {
  auto config = resolve_config(opts, "calibrate");
  ocdc::exp::save_manifest(config);
  ocdc::optics::ChipState chip = ocdc::optics::ChipState::with_deviations(
      config.deviations, config.master_seed, config.physical_branches,
      config.active_branches);
  std::vector<std::vector<double>> rows;
  for (int b = 0; b < config.active_branches; ++b) {
    const double slow =
        ocdc::calib::calibrate_bias(chip, b, ocdc::optics::WhichMod::Slow);
    const double fast =
        ocdc::calib::calibrate_bias(chip, b, ocdc::optics::WhichMod::Fast);
    rows.push_back({double(b), slow, fast, 0.0});
  }
  Eigen::VectorXd tails = ocdc::calib::align_phases(chip);
  for (int b = 0; b < config.active_branches; ++b) rows[b][3] = tails[b];
  ocdc::calib::calibrate_weight_mapping(chip, config.master_seed);
  ocdc::io::write_csv(
      (std::filesystem::path(config.out_dir) / "calibration.csv").string(),
      {"branch", "slow_bias_trim", "fast_bias_trim", "tail_phase"}, rows);

  // Post-calibration sanity: residual of random dot products.
  std::mt19937_64 rng(config.master_seed + 7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> residuals;
  double lo = 1e300, hi = -1e300;
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd x(config.active_branches), w(config.active_branches);
    for (int i = 0; i < config.active_branches; ++i) {
      x[i] = u(rng);
      w[i] = u(rng);
    }
    const double got = ocdc::optics::dot_product(x, w, chip);
    const double expect = x.dot(w);
    residuals.push_back(got - expect);
    lo = std::min(lo, expect);
    hi = std::max(hi, expect);
  }
  double mean = 0.0, var = 0.0;
  for (double r : residuals) mean += r;
  mean /= residuals.size();
  for (double r : residuals) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / (residuals.size() - 1));
  const double normalized = sd / std::max(hi - lo, 1e-12);
  std::cout << "post-calibration normalized residual std " << normalized
            << "\n";
  return finish(opts.check, normalized <= 0.02, "calibration residual");
}

int cmd_bpc(const CliOptions& opts) {
  auto config = resolve_config(opts, "bpc");
  if (opts.config_path.empty()) {
    config.coarse_target_std = 0.061;
  }
  auto report = ocdc::exp::run_bpc_demo(config);
  const auto& r = report.uniform;
  // std_history[0] is the pre-update measurement.
  const double after_two =
      r.std_history.size() >= 3 ? r.std_history[2] : r.residual_std_after;
  std::cout << "uniform weights: residual std " << r.residual_std_before
            << " -> " << after_two << " after two iterations\n";
  const bool ok = r.residual_std_before >= 0.05 &&
                  r.residual_std_before <= 0.07 && after_two <= 0.035;
  return finish(opts.check, ok, "BPC convergence");
}

int cmd_lower(const CliOptions& opts, int rows, int cols, int chunk) {
  auto config = resolve_config(opts, "lower");
  ocdc::exp::save_manifest(config);
  std::mt19937_64 rng(config.master_seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd x(rows);
  Eigen::MatrixXd a(rows, cols);
  for (int i = 0; i < rows; ++i) {
    x[i] = u(rng);
    for (int j = 0; j < cols; ++j) a(i, j) = u(rng);
  }
  ocdc::lower::Schedule schedule = ocdc::lower::decompose_mvm(x, a, chunk);
  const std::filesystem::path dir(config.out_dir);
  ocdc::io::write_schedule((dir / "schedule.ocds").string(), schedule);
  ocdc::io::schedule_to_csv((dir / "schedule.csv").string(), schedule);
  const double residual =
      (schedule.replay() - a.transpose() * x).cwiseAbs().maxCoeff();
  std::cout << schedule.steps.size() << " steps, replay residual " << residual
            << "\n";
  return finish(opts.check, residual < 1e-9, "schedule replay residual");
}

int cmd_train(const CliOptions& opts) {
  auto config = resolve_config(opts, "train");
  ocdc::exp::save_manifest(config);
  auto model = ocdc::exp::train_process_model(config, config.mode,
                                              config.master_seed);
  const std::filesystem::path dir(config.out_dir);
  ocdc::io::write_network((dir / "checkpoint.ocdw").string(), model.network);
  std::vector<std::vector<double>> rows;
  for (const auto& ep : model.log.epochs)
    rows.push_back({double(ep.epoch), ep.train_loss, ep.val_loss,
                    ep.learning_rate});
  ocdc::io::write_csv((dir / "training_log.csv").string(),
                      {"epoch", "train_loss", "val_loss", "learning_rate"},
                      rows);
  const double final_loss = model.log.epochs.back().val_loss;
  std::cout << "final validation loss " << final_loss << "\n";
  return finish(opts.check, std::isfinite(final_loss), "training convergence");
}

int cmd_reconstruct(const CliOptions& opts) {
  auto config = resolve_config(opts, "reconstruct");
  auto report = ocdc::exp::run_reconstruction(config);
  std::cout << "exact error std " << report.exact_error_std
            << ", injected error std " << report.injected_error_std
            << ", ratio " << report.ratio << "\n";
  return finish(opts.check, report.ratio <= 2.5, "degradation ratio");
}

int cmd_sweep(const CliOptions& opts) {
  auto config = resolve_config(opts, "sweep");
  auto report = ocdc::exp::run_error_sweep(config);
  std::cout << "linear fit slope " << report.slope << ", R^2 "
            << report.r_squared << "\n";
  return finish(opts.check, report.r_squared >= 0.9 && report.slope > 0.0,
                "error linearity");
}

int cmd_ablate(const CliOptions& opts) {
  auto config = resolve_config(opts, "ablate");
  auto report = ocdc::exp::run_domain_ablation(config);
  const int n = config.ablation_seeds;
  std::cout << "CBD strictly lowest in " << report.cbd_strictly_lowest << "/"
            << n << " seeds, InOn worst in " << report.inon_worst << "/" << n
            << ", InOn > 2x CBD in " << report.inon_over_twice_cbd << "/" << n
            << "\n";
  const int need = n - n / 5; // 4 of 5 at the default seed count
  return finish(opts.check,
                report.cbd_strictly_lowest >= need &&
                    report.inon_worst >= need &&
                    report.inon_over_twice_cbd >= need,
                "ablation ordering");
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"optical coherent dot-product chip experiments"};
  app.require_subcommand(1);

  CliOptions opts;
  int rows = 64, cols = 16, chunk = 3;

  CLI::App* characterize = app.add_subcommand(
      "characterize", "splitter evenness, transmission fits, interference");
  CLI::App* calibrate = app.add_subcommand(
      "calibrate", "bias null, phase alignment and weight mapping");
  CLI::App* bpc =
      app.add_subcommand("bpc", "backpropagation-control demonstration");
  CLI::App* lower =
      app.add_subcommand("lower", "compile an MVM into a chip schedule");
  lower->add_option("--rows", rows, "input dimension");
  lower->add_option("--cols", cols, "output dimension");
  lower->add_option("--chunk", chunk, "chunk width");
  CLI::App* train = app.add_subcommand("train", "train a toy mini-AUTOMAP");
  CLI::App* reconstruct = app.add_subcommand(
      "reconstruct", "validation reconstructions with injected error");
  CLI::App* sweep =
      app.add_subcommand("sweep", "reconstruction error vs injected sigma");
  CLI::App* ablate =
      app.add_subcommand("ablate", "numerical-domain ablation study");
  for (CLI::App* cmd : {characterize, calibrate, bpc, lower, train,
                        reconstruct, sweep, ablate})
    add_common_flags(cmd, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (characterize->parsed()) return cmd_characterize(opts);
    if (calibrate->parsed()) return cmd_calibrate(opts);
    if (bpc->parsed()) return cmd_bpc(opts);
    if (lower->parsed()) return cmd_lower(opts, rows, cols, chunk);
    if (train->parsed()) return cmd_train(opts);
    if (reconstruct->parsed()) return cmd_reconstruct(opts);
    if (sweep->parsed()) return cmd_sweep(opts);
    if (ablate->parsed()) return cmd_ablate(opts);
  } catch (const ocdc::exp::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const ocdc::io::FormatError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
