#pragma once

// Physics model of the optical coherent dot-product chip (OCDC):
// field splitting, push-pull amplitude modulation, cascaded
// directional-coupler combining, reference-biased photodetection and
// the end-to-end analog dot product.

#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace ocdc::optics {

using Complex = std::complex<double>;

struct PhaseOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EncodingOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NegativeIntensity : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thermal phase shifter constants of one modulator arm.
struct PhaseShifterParams {
  double p_pi_mw = 1.81;    // power for a 180 deg phase shift
  double r_ohm = 1600.0;    // heater resistance
  double p0_bias_mw = 2.28; // common bias power on both arms
};

/// Coefficients of a*sin(b*x + c) + d fitted to a measured
/// transmission sweep, with the fit quality alongside.
struct TransmissionCurveFit {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
  double r_squared = 0.0;
};

struct ModulatorState {
  PhaseShifterParams upper;
  PhaseShifterParams lower;
  // Nominal P_pi assumed by the drive electronics; the per-arm values
  // above may deviate from it, which is the source of nonlinearity.
  double nominal_p_pi_mw = 1.81;
  double bias_offset_rad = 0.0; // residual bias error in the transmission argument
  double bias_trim_rad = 0.0;   // correction applied by calibration
  std::optional<TransmissionCurveFit> transmission_fit;
};

struct BranchState {
  ModulatorState fast_mod; // carries the weight w_i
  ModulatorState slow_mod; // carries the input x_i
  double tail_phase_rad = 0.0;
  double path_phase_rad = 0.0; // static unknown phase, target of alignment
  double insertion_loss_db = 0.0;
  double monitor_tap_fraction = 0.1; // 1:9 monitor MMI after each modulator
  // Residual affine error of the coarse weight-drive calibration:
  // realized value = weight_gain * commanded + weight_offset.
  double weight_gain = 1.0;
  double weight_offset = 0.0;
  // Digital pre-distortion installed by BPC-based calibration.
  double predistort_gain = 1.0;
  double predistort_offset = 0.0;
};

struct SplitterModel {
  double reference_fraction = 0.5;
  double residual_monitor_fraction = 0.30;
  // Per-branch power deviation in dB, 0 = ideal even split.
  Eigen::VectorXd branch_deviation_db;
};

enum class DetectionMode { SingleEnded, Homodyne };

struct DetectionModel {
  DetectionMode mode = DetectionMode::SingleEnded;
  double reference_amplitude = 1.5;
  double additive_noise_std = 0.0;
  double gain = 1.0;
  double negative_clamp_tolerance = 1e-9;
};

/// Seeded fabrication/calibration imperfections applied to an ideal chip.
/// A zero profile reproduces the ideal chip exactly.
struct DeviationProfile {
  double splitter_unevenness_db = 0.0; // uniform within +-u/2 per branch
  double p_pi_mismatch_frac = 0.0;     // relative std of per-arm P_pi
  double bias_offset_std_rad = 0.0;
  double insertion_loss_spread_db = 0.0;
  double path_phase_spread_rad = 0.0;  // static branch phase offsets
  double weight_gain_std = 0.0;        // coarse weight-mapping errors
  double weight_offset_std = 0.0;
};

struct ChipState {
  std::vector<BranchState> branches; // physical branches (default 9)
  int active_branches = 3;
  SplitterModel splitter;
  DetectionModel detection;
  double phase_drift_std_rad = 0.0;
  // Encoded value 1.0 maps to this fraction of the full transmission
  // scale, leaving drive headroom for calibration corrections.
  double encoding_headroom = 0.8;
  std::uint64_t rng_seed = 0;
  std::mt19937_64 rng{0};

  /// Ideal chip with `physical` branches, `active` of them used.
  static ChipState ideal(int physical = 9, int active = 3,
                         std::uint64_t seed = 0);

  /// Ideal chip with seeded deviations applied on top.
  static ChipState with_deviations(const DeviationProfile& profile,
                                   std::uint64_t seed, int physical = 9,
                                   int active = 3);

  int port_count() const { return static_cast<int>(branches.size()) + 1; }

  /// Scale making the ideal chip's decoded output the exact digital
  /// dot product; derived from the nominal (deviation-free) path gains.
  double calibration_scale() const;

  /// Reference-field amplitude at the detector (combiner output).
  double reference_level() const;
};

// Eq.-2 style electrical drive mapping: push-pull arm voltages for a
// commanded differential phase. Throws PhaseOutOfRange when a radicand
// would go negative.
struct DriveVoltages {
  double v_upper;
  double v_lower;
};
DriveVoltages voltages_for_phase(double delta_phi_rad,
                                 const PhaseShifterParams& params);
double phase_for_voltages(const DriveVoltages& v,
                          const PhaseShifterParams& params);

/// Push-pull modulator field transfer. With matched arms and zero bias
/// error the amplitude transmission is sin(drive_phase) and the output
/// is purely real.
Complex modulator_field(Complex input, double drive_phase_rad,
                        const ModulatorState& mod);

/// Amplitude transmission for a commanded encoding value in [-1, 1]
/// (drive phase asin(value)), including the branch's affine
/// weight-mapping error when `apply_weight_error` is set.
Complex branch_value_transmission(double value, const ModulatorState& mod);

/// Split a unit of input field into (reference, branch fields).
struct SplitFields {
  Complex reference;
  std::vector<Complex> branches;
};
SplitFields split(Complex input, const ChipState& chip);

/// Cascaded directional-coupler combiner; equals (1/sqrt(n)) * sum for
/// ideal in-phase couplers.
Complex combine(const std::vector<Complex>& fields, int n_ports);

/// Photocurrent of the detection stage. SingleEnded squares the total
/// field (reference plus signal); Homodyne is linear in Re(signal).
double photodetect(Complex combined, const DetectionModel& detection,
                   std::mt19937_64& rng);

/// Inverse of photodetect up to the calibrated gain.
double decode(double photocurrent, const DetectionModel& detection);

/// One analog shot: raw photocurrent for the given drive values.
/// Mutates the chip RNG (noise, phase jitter).
double output_intensity(ChipState& chip, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& w);

/// End-to-end analog dot product over the active branches. The ideal
/// chip returns the exact digital dot product.
double dot_product(const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                   ChipState& chip);

/// Same as dot_product without the [-1, 1] domain check; calibration
/// routines drive slightly outside the user encoding range.
double dot_product_unchecked(const Eigen::VectorXd& x,
                             const Eigen::VectorXd& w, ChipState& chip);

/// Decoded response with a single branch open and raw drive phases on
/// its two modulators; every other branch is dark.
double measure_branch_response(ChipState& chip, int branch_index,
                               double slow_drive_phase,
                               double fast_drive_phase);

enum class WhichMod { Slow, Fast };

/// Tapped monitor power (dB) after the addressed modulator, floor
/// clamped at -120 dB.
double monitor_power(const ChipState& chip, int branch_index, WhichMod which,
                     double slow_drive_phase, double fast_drive_phase);

} // namespace ocdc::optics
