#include "ocdc/optics.hpp"

#include <algorithm>
#include <cmath>

namespace ocdc::optics {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMonitorFloorDb = -120.0;

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

std::mt19937_64 sampling_stream(std::uint64_t seed) {
  // Distinct from the per-shot noise stream of the chip.
  return std::mt19937_64(seed ^ 0xd1b54a32d192ed03ULL);
}

} // namespace

DriveVoltages voltages_for_phase(double delta_phi_rad,
                                 const PhaseShifterParams& params) {
  const double shift_mw = delta_phi_rad / (2.0 * kPi) * params.p_pi_mw;
  const double p_upper_mw = params.p0_bias_mw + shift_mw;
  const double p_lower_mw = params.p0_bias_mw - shift_mw;
  if (p_upper_mw < 0.0 || p_lower_mw < 0.0) {
    throw PhaseOutOfRange("commanded phase exceeds the push-pull bias range");
  }
  return DriveVoltages{std::sqrt(p_upper_mw * 1e-3 * params.r_ohm),
                       std::sqrt(p_lower_mw * 1e-3 * params.r_ohm)};
}

double phase_for_voltages(const DriveVoltages& v,
                          const PhaseShifterParams& params) {
  const double p_upper_mw = v.v_upper * v.v_upper / params.r_ohm * 1e3;
  return (p_upper_mw - params.p0_bias_mw) / params.p_pi_mw * 2.0 * kPi;
}

Complex modulator_field(Complex input, double drive_phase_rad,
                        const ModulatorState& mod) {
  // Per-arm realized phase per commanded phase; unity when the arm's
  // true P_pi equals the nominal value used by the electronics.
  const double r_upper = mod.nominal_p_pi_mw / mod.upper.p_pi_mw;
  const double r_lower = mod.nominal_p_pi_mw / mod.lower.p_pi_mw;
  const double bias = mod.bias_offset_rad + mod.bias_trim_rad;
  // Commanded half-differential measured from the null point. With
  // matched arms the amplitude transmission is sin(drive + bias).
  const double theta = kPi / 2.0 - (drive_phase_rad + bias);
  const double amplitude = std::cos(0.5 * (r_upper + r_lower) * theta);
  const double rotation = 0.5 * (r_upper - r_lower) * theta;
  return input * amplitude * std::polar(1.0, rotation);
}

Complex branch_value_transmission(double value, const ModulatorState& mod) {
  return modulator_field(Complex(1.0, 0.0), std::asin(clamp_unit(value)), mod);
}

SplitFields split(Complex input, const ChipState& chip) {
  const auto& sp = chip.splitter;
  const int m = static_cast<int>(chip.branches.size());
  SplitFields out;
  out.reference = input * std::sqrt(sp.reference_fraction);
  const double branch_fraction = (1.0 - sp.reference_fraction) *
                                 (1.0 - sp.residual_monitor_fraction) / m;
  out.branches.resize(m);
  for (int i = 0; i < m; ++i) {
    double dev_db = sp.branch_deviation_db.size() > i
                        ? sp.branch_deviation_db[i]
                        : 0.0;
    out.branches[i] =
        input * std::sqrt(branch_fraction * std::pow(10.0, dev_db / 10.0));
  }
  return out;
}

Complex combine(const std::vector<Complex>& fields, int n_ports) {
  if (fields.empty()) throw EmptyInput("combine: no input fields");
  if (static_cast<int>(fields.size()) != n_ports) {
    throw EmptyInput("combine: field count does not match port count");
  }
  Complex acc = fields[0];
  for (int n = 1; n < n_ports; ++n) {
    acc = std::sqrt(double(n) / (n + 1)) * acc +
          std::sqrt(1.0 / (n + 1)) * fields[n];
  }
  return acc;
}

double photodetect(Complex combined, const DetectionModel& detection,
                   std::mt19937_64& rng) {
  double current = 0.0;
  if (detection.mode == DetectionMode::SingleEnded) {
    const Complex total = Complex(detection.reference_amplitude, 0.0) + combined;
    current = detection.gain * std::norm(total);
  } else {
    current = detection.gain * detection.reference_amplitude * combined.real();
  }
  if (detection.additive_noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, detection.additive_noise_std);
    current += noise(rng);
  }
  return current;
}

double decode(double photocurrent, const DetectionModel& detection) {
  if (detection.mode == DetectionMode::SingleEnded) {
    if (photocurrent < -detection.negative_clamp_tolerance) {
      throw NegativeIntensity("single-ended photocurrent below zero");
    }
    const double current = std::max(photocurrent, 0.0);
    return std::sqrt(current / detection.gain) - detection.reference_amplitude;
  }
  return photocurrent / (detection.gain * detection.reference_amplitude);
}

ChipState ChipState::ideal(int physical, int active, std::uint64_t seed) {
  ChipState chip;
  chip.branches.resize(physical);
  chip.active_branches = active;
  chip.splitter.branch_deviation_db = Eigen::VectorXd::Zero(physical);
  chip.rng_seed = seed;
  chip.rng.seed(seed);
  return chip;
}

ChipState ChipState::with_deviations(const DeviationProfile& profile,
                                     std::uint64_t seed, int physical,
                                     int active) {
  ChipState chip = ideal(physical, active, seed);
  std::mt19937_64 draw = sampling_stream(seed);
  std::uniform_real_distribution<double> uni(-0.5, 0.5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < physical; ++i) {
    chip.splitter.branch_deviation_db[i] =
        profile.splitter_unevenness_db * uni(draw);
    auto& br = chip.branches[i];
    for (ModulatorState* mod : {&br.slow_mod, &br.fast_mod}) {
      mod->upper.p_pi_mw *= 1.0 + profile.p_pi_mismatch_frac * gauss(draw);
      mod->lower.p_pi_mw *= 1.0 + profile.p_pi_mismatch_frac * gauss(draw);
      mod->bias_offset_rad = profile.bias_offset_std_rad * gauss(draw);
    }
    br.insertion_loss_db =
        profile.insertion_loss_spread_db * (uni(draw) + 0.5);
    br.path_phase_rad = profile.path_phase_spread_rad * uni(draw);
    br.weight_gain = 1.0 + profile.weight_gain_std * gauss(draw);
    br.weight_offset = profile.weight_offset_std * gauss(draw);
  }
  return chip;
}

double ChipState::calibration_scale() const {
  const int m = static_cast<int>(branches.size());
  const double a_ideal =
      std::sqrt((1.0 - splitter.reference_fraction) *
                (1.0 - splitter.residual_monitor_fraction) / m);
  const double tap = branches.empty() ? 0.0 : branches[0].monitor_tap_fraction;
  return std::sqrt(double(port_count())) /
         (a_ideal * (1.0 - tap) * encoding_headroom * encoding_headroom);
}

double ChipState::reference_level() const {
  return std::sqrt(splitter.reference_fraction) /
         std::sqrt(double(port_count()));
}

namespace {

// Field of one modulating branch for the given drive phases, up to and
// including the stage selected by `stage` (0 = after slow modulator,
// 1 = after fast modulator, 2 = full branch with tail phase).
Complex branch_field(const ChipState& chip, const SplitFields& fields, int i,
                     double slow_drive, double fast_drive, int stage,
                     double jitter = 0.0) {
  const auto& br = chip.branches[i];
  Complex f = modulator_field(fields.branches[i], slow_drive, br.slow_mod);
  f *= std::sqrt(1.0 - br.monitor_tap_fraction);
  if (stage < 1) return f;
  f = modulator_field(f, fast_drive, br.fast_mod);
  f *= std::sqrt(1.0 - br.monitor_tap_fraction);
  if (stage < 2) return f;
  f *= std::pow(10.0, -br.insertion_loss_db / 20.0);
  f *= std::polar(1.0, br.tail_phase_rad + br.path_phase_rad + jitter);
  return f;
}

} // namespace

double output_intensity(ChipState& chip, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& w) {
  const int active = chip.active_branches;
  if (x.size() != active || w.size() != active) {
    throw EncodingOutOfRange("drive vector length != active branch count");
  }
  const SplitFields fields = split(Complex(1.0, 0.0), chip);
  const int ports = chip.port_count();
  std::vector<Complex> inputs(ports, Complex(0.0, 0.0));
  const bool single_ended =
      chip.detection.mode == DetectionMode::SingleEnded;
  if (single_ended) inputs[0] = fields.reference;
  std::normal_distribution<double> jitter_dist(0.0, chip.phase_drift_std_rad);
  for (int i = 0; i < active; ++i) {
    const auto& br = chip.branches[i];
    const double jitter =
        chip.phase_drift_std_rad > 0.0 ? jitter_dist(chip.rng) : 0.0;
    const double cmd = br.predistort_gain * w[i] + br.predistort_offset;
    const double realized = clamp_unit(
        chip.encoding_headroom * (br.weight_gain * cmd + br.weight_offset));
    const double x_drive =
        std::asin(clamp_unit(chip.encoding_headroom * x[i]));
    inputs[1 + i] =
        branch_field(chip, fields, i, x_drive, std::asin(realized), 2, jitter);
  }
  const Complex combined = combine(inputs, ports);
  double current = 0.0;
  if (single_ended) {
    current = chip.detection.gain * std::norm(combined);
  } else {
    current = chip.detection.gain * chip.reference_level() * combined.real();
  }
  if (chip.detection.additive_noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0,
                                           chip.detection.additive_noise_std);
    current += noise(chip.rng);
  }
  return current;
}

namespace {

double decode_shot(const ChipState& chip, double current) {
  if (chip.detection.mode == DetectionMode::SingleEnded) {
    if (current < -chip.detection.negative_clamp_tolerance) {
      throw NegativeIntensity("noise drove the photocurrent below zero");
    }
    return std::sqrt(std::max(current, 0.0) / chip.detection.gain) -
           chip.reference_level();
  }
  return current / (chip.detection.gain * chip.reference_level());
}

} // namespace

double dot_product_unchecked(const Eigen::VectorXd& x,
                             const Eigen::VectorXd& w, ChipState& chip) {
  const double current = output_intensity(chip, x, w);
  return decode_shot(chip, current) * chip.calibration_scale();
}

double dot_product(const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                   ChipState& chip) {
  for (int i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) > 1.0 + 1e-12 || std::abs(w[i]) > 1.0 + 1e-12) {
      throw EncodingOutOfRange("encoded values must lie in [-1, 1]");
    }
  }
  return dot_product_unchecked(x, w, chip);
}

double measure_branch_response(ChipState& chip, int branch_index,
                               double slow_drive_phase,
                               double fast_drive_phase) {
  if (branch_index < 0 ||
      branch_index >= static_cast<int>(chip.branches.size())) {
    throw IndexOutOfRange("measure_branch_response: bad branch index");
  }
  const SplitFields fields = split(Complex(1.0, 0.0), chip);
  const int ports = chip.port_count();
  std::vector<Complex> inputs(ports, Complex(0.0, 0.0));
  const bool single_ended =
      chip.detection.mode == DetectionMode::SingleEnded;
  if (single_ended) inputs[0] = fields.reference;
  inputs[1 + branch_index] = branch_field(chip, fields, branch_index,
                                          slow_drive_phase, fast_drive_phase,
                                          2);
  const Complex combined = combine(inputs, ports);
  double current = single_ended
                       ? chip.detection.gain * std::norm(combined)
                       : chip.detection.gain * chip.reference_level() *
                             combined.real();
  if (chip.detection.additive_noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0,
                                           chip.detection.additive_noise_std);
    current += noise(chip.rng);
  }
  return decode_shot(chip, current) * chip.calibration_scale();
}

double monitor_power(const ChipState& chip, int branch_index, WhichMod which,
                     double slow_drive_phase, double fast_drive_phase) {
  if (branch_index < 0 ||
      branch_index >= static_cast<int>(chip.branches.size())) {
    throw IndexOutOfRange("monitor_power: bad branch index");
  }
  const SplitFields fields = split(Complex(1.0, 0.0), chip);
  const int stage = which == WhichMod::Slow ? 0 : 1;
  // branch_field already includes the through factor of the tap at the
  // addressed stage; undo it and take the tapped fraction instead.
  Complex f = branch_field(chip, fields, branch_index, slow_drive_phase,
                           fast_drive_phase, stage);
  const double tap = chip.branches[branch_index].monitor_tap_fraction;
  const double through = 1.0 - tap;
  const double power = std::norm(f) / through * tap;
  if (power <= std::pow(10.0, kMonitorFloorDb / 10.0)) return kMonitorFloorDb;
  return 10.0 * std::log10(power);
}

} // namespace ocdc::optics
