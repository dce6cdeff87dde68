#include "ocdc/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ocdc::calib {

using optics::ChipState;
using optics::WhichMod;

namespace {

constexpr double kPi = 3.14159265358979323846;

double sample_std(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / (v.size() - 1));
}

double dynamic_range(const Eigen::VectorXd& v) {
  return v.maxCoeff() - v.minCoeff();
}

optics::ModulatorState& addressed_mod(ChipState& chip, int branch_index,
                                      WhichMod which) {
  if (branch_index < 0 ||
      branch_index >= static_cast<int>(chip.branches.size())) {
    throw optics::IndexOutOfRange("calibration: bad branch index");
  }
  auto& br = chip.branches[branch_index];
  return which == WhichMod::Slow ? br.slow_mod : br.fast_mod;
}

Eigen::VectorXd measure_sweep(ChipState& chip, int branch_index,
                              WhichMod which,
                              const Eigen::VectorXd& drive_rad) {
  Eigen::VectorXd y(drive_rad.size());
  for (int i = 0; i < drive_rad.size(); ++i) {
    const double slow = which == WhichMod::Slow ? drive_rad[i] : kPi / 2.0;
    const double fast = which == WhichMod::Fast ? drive_rad[i] : kPi / 2.0;
    y[i] = optics::measure_branch_response(chip, branch_index, slow, fast);
  }
  return y;
}

// Symmetric triangle wave over one period, values in [-1, 1].
double triangle(double phase01) {
  const double p = phase01 - std::floor(phase01);
  return p < 0.5 ? 4.0 * p - 1.0 : 3.0 - 4.0 * p;
}

double harmonic_magnitude(const Eigen::VectorXd& y, int harmonic) {
  std::complex<double> acc(0.0, 0.0);
  const int n = static_cast<int>(y.size());
  for (int t = 0; t < n; ++t) {
    acc += y[t] * std::polar(1.0, -2.0 * kPi * harmonic * t / n);
  }
  return std::abs(acc) / n;
}

struct SinFitResult {
  double a, b, c, d;
  double sse;
};

// Linear solve for (alpha, beta, d) in alpha*sin(bu) + beta*cos(bu) + d
// at fixed frequency b (variable projection).
SinFitResult fit_at_frequency(const Eigen::VectorXd& u,
                              const Eigen::VectorXd& y, double b) {
  const int n = static_cast<int>(u.size());
  Eigen::MatrixXd design(n, 3);
  for (int i = 0; i < n; ++i) {
    design(i, 0) = std::sin(b * u[i]);
    design(i, 1) = std::cos(b * u[i]);
    design(i, 2) = 1.0;
  }
  Eigen::Vector3d coef =
      design.colPivHouseholderQr().solve(y).eval();
  const double sse = (design * coef - y).squaredNorm();
  SinFitResult r;
  r.a = std::hypot(coef[0], coef[1]);
  r.c = std::atan2(coef[1], coef[0]);
  r.b = b;
  r.d = coef[2];
  r.sse = sse;
  return r;
}

} // namespace

BpcBatch BpcBatch::random(int step_count, const Eigen::VectorXd& w_target,
                          std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  BpcBatch batch;
  batch.x.resize(step_count, w_target.size());
  for (int i = 0; i < step_count; ++i) {
    for (int j = 0; j < w_target.size(); ++j) batch.x(i, j) = uni(rng);
  }
  batch.w_target = w_target;
  batch.y_hat = batch.x * w_target;
  return batch;
}

optics::TransmissionCurveFit fit_transmission_curve(
    ChipState& chip, int branch_index, WhichMod which,
    const Eigen::VectorXd& drive_sweep_rad) {
  const Eigen::VectorXd y = measure_sweep(chip, branch_index, which,
                                          drive_sweep_rad);
  const double sst = (y.array() - y.mean()).square().sum();
  if (sst < 1e-18) throw FitDiverged("transmission sweep is flat");

  SinFitResult best{0, 0, 0, 0, std::numeric_limits<double>::infinity()};
  for (int k = 0; k <= 100; ++k) {
    const double b = 0.5 + k * 0.01;
    SinFitResult r = fit_at_frequency(drive_sweep_rad, y, b);
    if (r.sse < best.sse) best = r;
  }
  // golden-section refinement of the frequency
  double lo = std::max(0.5, best.b - 0.01), hi = std::min(1.5, best.b + 0.01);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
  double f1 = fit_at_frequency(drive_sweep_rad, y, x1).sse;
  double f2 = fit_at_frequency(drive_sweep_rad, y, x2).sse;
  while (hi - lo > 1e-10) {
    if (f1 < f2) {
      hi = x2; x2 = x1; f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = fit_at_frequency(drive_sweep_rad, y, x1).sse;
    } else {
      lo = x1; x1 = x2; f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = fit_at_frequency(drive_sweep_rad, y, x2).sse;
    }
  }
  best = fit_at_frequency(drive_sweep_rad, y, 0.5 * (lo + hi));

  optics::TransmissionCurveFit fit;
  fit.a = best.a;
  fit.b = best.b;
  fit.c = best.c;
  fit.d = best.d;
  fit.r_squared = 1.0 - best.sse / sst;
  if (fit.a < 1e-9 || fit.r_squared < 0.5) {
    throw FitDiverged("sinusoidal fit did not converge");
  }
  addressed_mod(chip, branch_index, which).transmission_fit = fit;
  return fit;
}

double calibrate_bias(ChipState& chip, int branch_index, WhichMod which) {
  auto& mod = addressed_mod(chip, branch_index, which);
  const double saved_trim = mod.bias_trim_rad;
  constexpr int kSamples = 128;
  constexpr double kAmplitude = kPi / 2.0;

  auto second_harmonic = [&](double trim) {
    mod.bias_trim_rad = trim;
    Eigen::VectorXd drive(kSamples);
    for (int t = 0; t < kSamples; ++t) {
      drive[t] = kAmplitude * triangle(double(t) / kSamples);
    }
    const Eigen::VectorXd y = measure_sweep(chip, branch_index, which, drive);
    return harmonic_magnitude(y, 2);
  };

  // 64-point grid bracket, then golden-section inside it.
  constexpr int kGrid = 64;
  double best_trim = 0.0, best_val = std::numeric_limits<double>::infinity();
  double worst_val = 0.0;
  for (int k = 0; k < kGrid; ++k) {
    const double trim = -kPi / 2.0 + kPi * (k + 0.5) / kGrid;
    const double val = second_harmonic(trim);
    worst_val = std::max(worst_val, val);
    if (val < best_val) {
      best_val = val;
      best_trim = trim;
    }
  }
  if (worst_val < 1e-9 || (worst_val - best_val) / worst_val < 1e-6) {
    mod.bias_trim_rad = saved_trim;
    throw NoMinimumFound("second-harmonic response is flat");
  }

  double lo = best_trim - kPi / kGrid, hi = best_trim + kPi / kGrid;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
  double f1 = second_harmonic(x1), f2 = second_harmonic(x2);
  while (hi - lo > 1e-7) {
    if (f1 < f2) {
      hi = x2; x2 = x1; f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = second_harmonic(x1);
    } else {
      lo = x1; x1 = x2; f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = second_harmonic(x2);
    }
  }
  const double trim = 0.5 * (lo + hi);
  mod.bias_trim_rad = trim;
  return trim;
}

Eigen::VectorXd align_phases(ChipState& chip) {
  const int active = chip.active_branches;
  constexpr int kSweep = 128;
  Eigen::VectorXd open = Eigen::VectorXd::Zero(active);

  for (int k = 0; k < active; ++k) {
    open[k] = 1.0;
    Eigen::VectorXd intensity(kSweep);
    for (int s = 0; s < kSweep; ++s) {
      chip.branches[k].tail_phase_rad = 2.0 * kPi * s / kSweep;
      intensity[s] = optics::output_intensity(chip, open, open);
    }
    int m = 0;
    intensity.maxCoeff(&m);
    // parabolic refinement on the periodic grid
    const double im = intensity[(m + kSweep - 1) % kSweep];
    const double i0 = intensity[m];
    const double ip = intensity[(m + 1) % kSweep];
    const double denom = im - 2.0 * i0 + ip;
    double offset = 0.0;
    if (std::abs(denom) > 1e-30) offset = 0.5 * (im - ip) / denom;
    chip.branches[k].tail_phase_rad =
        2.0 * kPi * (m + offset) / kSweep;
  }
  Eigen::VectorXd tails(active);
  for (int k = 0; k < active; ++k) tails[k] = chip.branches[k].tail_phase_rad;
  return tails;
}

Eigen::VectorXd bpc_gradient(ChipState& chip, const BpcBatch& batch,
                             const Eigen::VectorXd& current_w) {
  const int n = static_cast<int>(batch.x.rows());
  if (n == 0) throw std::invalid_argument("bpc_gradient: empty batch");
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = optics::dot_product_unchecked(batch.x.row(i).transpose(),
                                         current_w, chip);
  }
  return (2.0 / n) * batch.x.transpose() * (y - batch.y_hat);
}

BpcReport bpc(ChipState& chip, const Eigen::VectorXd& w_target,
              const BpcOptions& options) {
  std::mt19937_64 rng(options.batch_seed);
  BpcReport report;
  Eigen::VectorXd w = w_target;
  double prev_std = std::numeric_limits<double>::infinity();
  int grow_streak = 0;

  for (int iter = 0;; ++iter) {
    BpcBatch batch = BpcBatch::random(options.step_count, w_target, rng);
    const int n = static_cast<int>(batch.x.rows());
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = optics::dot_product_unchecked(batch.x.row(i).transpose(), w,
                                           chip);
    }
    const Eigen::VectorXd resid = y - batch.y_hat;
    const double std_now = sample_std(resid);
    const double range = std::max(dynamic_range(batch.y_hat), 1e-300);

    if (iter == 0) {
      report.residual_std_before = std_now;
      report.normalized_std_before = std_now / range;
    }
    report.std_history.push_back(std_now);

    // sampling wobble between fresh batches must not count as growth
    bool converged = std_now < options.improvement_tolerance;
    if (iter > 0 && !converged) {
      const double improvement = prev_std - std_now;
      if (std_now > 1.05 * prev_std) {
        if (++grow_streak >= 3) throw Diverged("residual std grew 3 times");
      } else {
        grow_streak = 0;
        converged =
            improvement >= 0.0 && improvement < options.improvement_tolerance;
      }
    }
    if (converged || iter == options.max_iters) {
      report.residual_std_after = std_now;
      report.normalized_std_after = std_now / range;
      report.iterations = iter;
      report.adjusted_weights = w;
      return report;
    }

    const Eigen::VectorXd grad = (2.0 / n) * batch.x.transpose() * resid;
    report.gradient_history.push_back(grad);
    // per-weight curvature of the quadratic MSE
    const Eigen::VectorXd curvature =
        (2.0 / n) *
        batch.x.array().square().matrix().colwise().sum().transpose();
    w -= options.learning_rate *
         (grad.array() / curvature.array().max(1e-12)).matrix();
    prev_std = std_now;
  }
}

void calibrate_weight_mapping(ChipState& chip, std::uint64_t batch_seed) {
  const int active = chip.active_branches;
  for (int j = 0; j < active; ++j) {
    chip.branches[j].predistort_gain = 1.0;
    chip.branches[j].predistort_offset = 0.0;
  }
  const double level_a = 0.7;
  const double level_b = -0.3;
  BpcOptions opts;
  opts.max_iters = 20;
  opts.improvement_tolerance = 1e-6;
  opts.batch_seed = batch_seed;
  BpcReport rep_a =
      bpc(chip, Eigen::VectorXd::Constant(active, level_a), opts);
  opts.batch_seed = batch_seed ^ 0xabcdef12345ULL;
  BpcReport rep_b =
      bpc(chip, Eigen::VectorXd::Constant(active, level_b), opts);

  for (int j = 0; j < active; ++j) {
    const double delta =
        rep_a.adjusted_weights[j] - rep_b.adjusted_weights[j];
    if (std::abs(delta) < 1e-9) continue;
    const double slope = (level_a - level_b) / delta;
    const double intercept = level_a - slope * rep_a.adjusted_weights[j];
    chip.branches[j].predistort_gain = 1.0 / slope;
    chip.branches[j].predistort_offset = -intercept / slope;
  }
}

void apply_coarse_weight_errors(ChipState& chip,
                                const Eigen::VectorXd& w_target,
                                double target_std, std::uint64_t seed) {
  const int active = chip.active_branches;
  std::mt19937_64 rng(seed ^ 0xc0a15e1f2b3c4d5eULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd gain_err(active), offset(active);
  double predicted_sq = 0.0;
  while (predicted_sq < 1e-12) {
    for (int j = 0; j < active; ++j) {
      gain_err[j] = 0.05 * gauss(rng);
      offset[j] = 0.035 * gauss(rng);
    }
    predicted_sq = 0.0;
    for (int j = 0; j < active; ++j) {
      const double dev = gain_err[j] * w_target[j] + offset[j];
      predicted_sq += dev * dev / 3.0; // Var(x) = 1/3 for uniform inputs
    }
  }
  const double scale = target_std / std::sqrt(predicted_sq);
  for (int j = 0; j < active; ++j) {
    chip.branches[j].weight_gain = 1.0 + scale * gain_err[j];
    chip.branches[j].weight_offset = scale * offset[j];
  }
}

} // namespace ocdc::calib
