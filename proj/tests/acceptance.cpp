// End-to-end acceptance gate. Each numbered criterion prints one
// PASS/FAIL line; the exit status is the number of failures.

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ocdc/calibration.hpp"
#include "ocdc/datagen.hpp"
#include "ocdc/experiments.hpp"
#include "ocdc/io.hpp"
#include "ocdc/lowering.hpp"
#include "ocdc/network.hpp"
#include "ocdc/optics.hpp"

namespace fs = std::filesystem;
using namespace ocdc;

namespace {

constexpr double kPi = 3.14159265358979323846;

int g_failures = 0;

void report(int index, const std::string& name, bool passed,
            const std::string& detail) {
  std::printf("criterion %02d %-28s %s (%s)\n", index, name.c_str(),
              passed ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!passed) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / (v.size() - 1));
}

// 1. Cascaded-combiner closed form over 10 ports.
void criterion_combiner() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<optics::Complex> fields(10);
    optics::Complex sum = 0.0;
    for (auto& f : fields) {
      f = optics::Complex(u(rng), u(rng));
      sum += f;
    }
    const optics::Complex got = optics::combine(fields, 10);
    worst = std::max(worst, std::abs(got - sum / std::sqrt(10.0)));
  }
  report(1, "combiner-closed-form", worst < 1e-12, "max dev " + fmt(worst));
}

// 2. Ideal-chip exactness for MVMs and convolutions.
void criterion_exactness() {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> kd(1, 64), nd(1, 8);
  optics::ChipState chip = optics::ChipState::ideal();
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int k = kd(rng), n = nd(rng);
    Eigen::VectorXd x(k);
    Eigen::MatrixXd a(k, n);
    for (int i = 0; i < k; ++i) {
      x[i] = u(rng);
      for (int j = 0; j < n; ++j) a(i, j) = u(rng);
    }
    lower::Schedule s = lower::decompose_mvm(x, a, 3);
    const Eigen::VectorXd got = lower::execute_schedule(s, chip);
    worst = std::max(worst, (got - a.transpose() * x).cwiseAbs().maxCoeff());
  }
  std::uniform_int_distribution<int> cd(1, 2);
  for (int t = 0; t < 20; ++t) {
    const int c_in = cd(rng), c_out = cd(rng), k = t % 2 == 0 ? 3 : 5;
    lower::FeatureMap map(c_in, Eigen::MatrixXd(8, 8));
    for (auto& m : map)
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) m(i, j) = u(rng);
    lower::KernelStack kernels(c_out);
    Eigen::MatrixXd gemm(k * k * c_in, c_out);
    for (int o = 0; o < c_out; ++o) {
      kernels[o].resize(c_in);
      for (int c = 0; c < c_in; ++c) {
        Eigen::MatrixXd kern(k, k);
        for (int r = 0; r < k; ++r)
          for (int q = 0; q < k; ++q) {
            kern(r, q) = u(rng);
            gemm(c * k * k + r * k + q, o) = kern(r, q);
          }
        kernels[o][c] = kern;
      }
    }
    lower::Schedule s = lower::lower_conv(map, kernels, 3);
    const Eigen::VectorXd got = lower::execute_schedule(s, chip);
    lower::PatchMatrix patch = lower::im2col_patch(map, k, 1, k / 2);
    for (int o = 0; o < c_out; ++o) {
      const Eigen::VectorXd expect = patch.data.transpose() * gemm.col(o);
      for (int p = 0; p < expect.size(); ++p)
        worst = std::max(worst, std::abs(got[o * expect.size() + p] - expect[p]));
    }
  }
  report(2, "ideal-chip-exactness", worst < 1e-9, "max dev " + fmt(worst));
}

// 3. BPC reproduction across 50 seeds.
void criterion_bpc() {
  int ok = 0;
  double worst_pre = 0.0, worst_post = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    optics::ChipState chip = optics::ChipState::ideal(9, 3, seed);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(3);
    calib::apply_coarse_weight_errors(chip, ones, 0.061, seed);
    calib::BpcOptions options;
    options.batch_seed = seed * 7919;
    calib::BpcReport r = calib::bpc(chip, ones, options);
    const double pre = r.residual_std_before;
    const double post = r.std_history.size() >= 3 ? r.std_history[2]
                                                  : r.residual_std_after;
    if (pre >= 0.05 && pre <= 0.07 && post <= 0.035) ++ok;
    worst_pre = std::max(worst_pre, std::abs(pre - 0.061));
    worst_post = std::max(worst_post, post);
  }
  report(3, "bpc-reproduction", ok >= 45,
         std::to_string(ok) + "/50 seeds, worst post " + fmt(worst_post));
}

// 8. Bias-null recovery and phase-alignment quality.
void criterion_calibration() {
  std::mt19937_64 rng(88);
  std::uniform_real_distribution<double> off(-0.4, 0.4);
  double worst_bias = 0.0;
  for (int t = 0; t < 5; ++t) {
    optics::ChipState chip = optics::ChipState::ideal();
    const double injected = off(rng);
    chip.branches[t % 3].fast_mod.bias_offset_rad = injected;
    const double trim =
        calib::calibrate_bias(chip, t % 3, optics::WhichMod::Fast);
    worst_bias = std::max(worst_bias, std::abs(trim + injected));
  }
  optics::DeviationProfile profile;
  profile.path_phase_spread_rad = 1.0;
  optics::ChipState chip = optics::ChipState::with_deviations(profile, 5);
  calib::align_phases(chip);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(3);
  const double aligned = optics::dot_product(ones, ones, chip);
  const bool ok = worst_bias <= 0.01 * kPi && aligned >= 0.999 * 3.0;
  report(8, "calibration-correctness", ok,
         "bias dev " + fmt(worst_bias) + ", aligned " + fmt(aligned / 3.0) +
             " of max");
}

// 9. Gradient suites against central finite differences.
void criterion_gradients() {
  double worst = 0.0;
  // BPC gradient on a chip with pure weight offsets (the Eq.-5 form is
  // exact there; gain deviations scale it by the per-branch slope).
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    optics::ChipState chip = optics::ChipState::ideal(9, 3, seed);
    chip.branches[0].weight_offset = 0.04;
    chip.branches[1].weight_offset = -0.03;
    chip.branches[2].weight_offset = 0.05;
    std::mt19937_64 rng(seed * 101);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    Eigen::VectorXd w(3);
    for (int i = 0; i < 3; ++i) w[i] = u(rng);
    calib::BpcBatch batch = calib::BpcBatch::random(250, w, rng);
    const Eigen::VectorXd grad = calib::bpc_gradient(chip, batch, w);
    auto mse = [&](const Eigen::VectorXd& wv) {
      double acc = 0.0;
      for (int i = 0; i < batch.x.rows(); ++i) {
        const double m = optics::dot_product_unchecked(
            batch.x.row(i).transpose(), wv, chip);
        acc += (m - batch.y_hat[i]) * (m - batch.y_hat[i]);
      }
      return acc / batch.x.rows();
    };
    const double h = 1e-5;
    for (int j = 0; j < 3; ++j) {
      Eigen::VectorXd wp = w, wm = w;
      wp[j] += h;
      wm[j] -= h;
      const double fd = (mse(wp) - mse(wm)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(grad[j]), 1e-6});
      worst = std::max(worst, std::abs(fd - grad[j]) / denom);
    }
  }
  // Trainer backprop on a small network, sampled weight entries.
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    net::Network network = net::Network::mini_automap(12, 8, 2, seed);
    std::mt19937_64 rng(seed * 131);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd x(3, 12), y(3, 64);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    for (int i = 0; i < y.size(); ++i) y.data()[i] = g(rng);
    const double lambda = 1e-4;
    net::BackwardResult back = net::backward(network, x, y, lambda);
    const double h = 1e-5;
    for (std::size_t l = 0; l < network.layers.size(); ++l) {
      Eigen::MatrixXd& wm = network.layers[l].weight;
      for (int idx = 0; idx < wm.size(); idx += std::max<int>(1, wm.size() / 7)) {
        const double keep = wm.data()[idx];
        wm.data()[idx] = keep + h;
        net::ForwardResult fp = net::forward(network, x);
        const double lp = net::loss(fp.output, y, fp.h, lambda);
        wm.data()[idx] = keep - h;
        net::ForwardResult fm = net::forward(network, x);
        const double lm = net::loss(fm.output, y, fm.h, lambda);
        wm.data()[idx] = keep;
        const double fd = (lp - lm) / (2 * h);
        const double an = back.grads.weight[l].data()[idx];
        if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        worst = std::max(worst, std::abs(fd - an) / denom);
      }
    }
  }
  report(9, "gradient-suites", worst <= 1e-4, "worst rel err " + fmt(worst));
}

// 10. Modulator nonlinearity: matched P_pi is linear, mismatch is not.
void criterion_nonlinearity() {
  const int n = 201;
  // Max deviation of |field| vs value from the best affine fit.
  auto nonlinearity = [n](const optics::ModulatorState& mod) {
    Eigen::MatrixXd design(n, 2);
    Eigen::VectorXd t(n);
    for (int i = 0; i < n; ++i) {
      const double v = -1.0 + 2.0 * i / (n - 1);
      design(i, 0) = v;
      design(i, 1) = 1.0;
      t[i] = optics::branch_value_transmission(v, mod).real();
    }
    const Eigen::Vector2d coef =
        design.colPivHouseholderQr().solve(t);
    return (t - design * coef).cwiseAbs().maxCoeff();
  };

  optics::ModulatorState matched;
  const double worst_linear = nonlinearity(matched);

  bool distortion_ok = true;
  double prev = 0.0;
  for (int pct = 2; pct <= 10; pct += 2) {
    optics::ModulatorState mismatched;
    mismatched.nominal_p_pi_mw = mismatched.upper.p_pi_mw * (1.0 + pct / 100.0);
    const double d = nonlinearity(mismatched);
    if (d <= prev || d <= 0.0) distortion_ok = false;
    prev = d;
  }

  optics::DeviationProfile profile;
  profile.p_pi_mismatch_frac = 0.10;
  optics::ChipState chip = optics::ChipState::with_deviations(profile, 3);
  calib::BpcOptions options;
  options.max_iters = 20;
  calib::BpcReport r;
  double floor_std = 0.0;
  try {
    r = calib::bpc(chip, Eigen::VectorXd::Ones(3), options);
    floor_std = r.residual_std_after;
  } catch (const calib::Diverged&) {
    floor_std = -1.0;
  }
  const bool ok = worst_linear < 1e-9 && distortion_ok && floor_std > 1e-4;
  report(10, "nonlinearity-property", ok,
         "linear dev " + fmt(worst_linear) + ", floor " + fmt(floor_std));
}

} // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "ocdc_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  criterion_combiner();
  criterion_exactness();
  criterion_bpc();
  criterion_calibration();
  criterion_gradients();
  criterion_nonlinearity();

  // Shared toy-scale checkpoints for the network-level criteria.
  const std::array<datagen::Process, 3> processes = {
      datagen::Process::MF, datagen::Process::VPDS, datagen::Process::Radon};
  const std::array<const char*, 3> process_names = {"mf", "vpds", "radon"};
  std::array<exp::ExperimentConfig, 3> configs;
  for (int p = 0; p < 3; ++p) {
    configs[p] = exp::toy_defaults();
    configs[p].process = processes[p];
    configs[p].out_dir = (root / ("train_" + std::string(process_names[p]))).string();
    exp::TrainedModel model =
        exp::train_process_model(configs[p], net::DomainMode::CBD, 0);
    fs::create_directories(configs[p].out_dir);
    configs[p].checkpoint_path =
        (fs::path(configs[p].out_dir) / "checkpoint.ocdw").string();
    io::write_network(configs[p].checkpoint_path, model.network);
  }

  // 4. Layer accuracy through the calibrated chip simulator.
  exp::LayerAccuracyReport layer_report;
  {
    exp::ExperimentConfig c = configs[0];
    c.out_dir = (root / "layer_accuracy").string();
    layer_report = exp::run_layer_accuracy(c);
    const bool ok = layer_report.fc_normalized_std <= 0.02 &&
                    layer_report.conv_normalized_std <= 0.02;
    report(4, "layer-accuracy", ok,
           "fc " + fmt(layer_report.fc_normalized_std) + ", conv " +
               fmt(layer_report.conv_normalized_std));
  }

  // 5. Reconstruction degradation at the measured layer error stds.
  {
    bool ok = true;
    std::string detail;
    for (int p = 0; p < 3; ++p) {
      exp::ExperimentConfig c = configs[p];
      c.out_dir = (root / ("recon_" + std::string(process_names[p]))).string();
      c.injected_fc_std = layer_report.fc_normalized_std;
      c.injected_conv_std = layer_report.conv_normalized_std;
      exp::ReconstructionReport r = exp::run_reconstruction(c);
      if (r.ratio > 2.5) ok = false;
      detail += std::string(process_names[p]) + " " + fmt(r.ratio) + " ";
    }
    report(5, "reconstruction-degradation", ok, "ratios " + detail);
  }

  // 6. Error grows linearly with the injected sigma.
  {
    bool ok = true;
    std::string detail;
    for (int p = 0; p < 3; ++p) {
      exp::ExperimentConfig c = configs[p];
      c.out_dir = (root / ("sweep_" + std::string(process_names[p]))).string();
      c.trials_per_point = 60;
      exp::ErrorSweepReport r = exp::run_error_sweep(c);
      if (r.r_squared < 0.9 || r.slope <= 0.0) ok = false;
      detail += std::string(process_names[p]) + " R2 " + fmt(r.r_squared) + " ";
    }
    report(6, "error-linearity", ok, detail);
  }

  // 7. Numerical-domain ablation ordering.
  {
    bool ok = true;
    std::string detail;
    for (int p = 0; p < 3; ++p) {
      exp::ExperimentConfig c = configs[p];
      c.checkpoint_path.clear();
      c.out_dir = (root / ("ablate_" + std::string(process_names[p]))).string();
      exp::AblationReport r = exp::run_domain_ablation(c);
      const bool this_ok = r.cbd_strictly_lowest >= 4 && r.inon_worst >= 4 &&
                           r.inon_over_twice_cbd >= 4;
      if (!this_ok) ok = false;
      detail += std::string(process_names[p]) + " " +
                std::to_string(r.cbd_strictly_lowest) + "/" +
                std::to_string(r.inon_worst) + "/" +
                std::to_string(r.inon_over_twice_cbd) + " ";
    }
    report(7, "domain-ablation", ok, "cbd/inon/2x counts " + detail);
  }

  // 11. Bit-identical reruns from the saved manifest.
  {
    exp::ExperimentConfig c = exp::toy_defaults();
    c.experiment_id = "determinism";
    c.deviations.path_phase_spread_rad = 0.5;
    c.deviations.bias_offset_std_rad = 0.1;
    c.out_dir = (root / "det_a").string();
    exp::run_bpc_demo(c);
    exp::run_characterize(c);
    exp::ExperimentConfig c2 =
        exp::load_config((fs::path(c.out_dir) / "manifest.json").string());
    c2.out_dir = (root / "det_b").string();
    exp::run_bpc_demo(c2);
    exp::run_characterize(c2);
    const std::uint64_t ha = exp::hash_csv_outputs(c.out_dir);
    const std::uint64_t hb = exp::hash_csv_outputs(c2.out_dir);
    report(11, "manifest-determinism", ha == hb,
           ha == hb ? "hashes equal" : "hash mismatch");
  }

  std::printf("%s: %d of 11 criteria failed\n",
              g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
              g_failures);
  return g_failures;
}
