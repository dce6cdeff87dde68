#pragma once

// Recovers accurate computation from a deviated chip: transmission
// curve fitting, bias-null search by harmonic analysis, sequential
// tail-phase alignment, and in-situ backpropagation control (BPC) of
// hardware-represented weights.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ocdc/optics.hpp"

namespace ocdc::calib {

struct FitDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoMinimumFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct Diverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One BPC batch: random inputs, the desired weights and the exact
/// digital dot products they imply.
struct BpcBatch {
  Eigen::MatrixXd x;        // N x M input samples
  Eigen::VectorXd w_target; // desired weights
  Eigen::VectorXd y_hat;    // exact dot products, x * w_target

  static BpcBatch random(int step_count, const Eigen::VectorXd& w_target,
                         std::mt19937_64& rng);
};

struct BpcReport {
  double residual_std_before = 0.0;
  double residual_std_after = 0.0;
  double normalized_std_before = 0.0;
  double normalized_std_after = 0.0;
  int iterations = 0;
  Eigen::VectorXd adjusted_weights;
  std::vector<Eigen::VectorXd> gradient_history;
  std::vector<double> std_history; // residual std after each iteration
};

struct BpcOptions {
  int max_iters = 10;
  double learning_rate = 0.5;
  int step_count = 250;
  std::uint64_t batch_seed = 0;
  double improvement_tolerance = 1e-4;
};

/// Least-squares fit of a*sin(b*u + c) + d to the decoded response of
/// one modulator swept over the drive phases in `drive_sweep_rad`.
optics::TransmissionCurveFit fit_transmission_curve(
    optics::ChipState& chip, int branch_index, optics::WhichMod which,
    const Eigen::VectorXd& drive_sweep_rad);

/// Finds the bias trim minimizing the 2nd-harmonic magnitude of the
/// response to a symmetric triangle drive, installs it on the
/// addressed modulator and returns it.
double calibrate_bias(optics::ChipState& chip, int branch_index,
                      optics::WhichMod which);

/// Sequential tail-phase alignment against the reference; installs and
/// returns the per-branch settings.
Eigen::VectorXd align_phases(optics::ChipState& chip);

/// Eq.-5 style gradient of the measured MSE with respect to the
/// hardware-represented weights.
Eigen::VectorXd bpc_gradient(optics::ChipState& chip, const BpcBatch& batch,
                             const Eigen::VectorXd& current_w);

/// Iterative per-weight gradient descent on the hardware weights.
BpcReport bpc(optics::ChipState& chip, const Eigen::VectorXd& w_target,
              const BpcOptions& options = {});

/// Two-point BPC; recovers the per-branch affine weight error and
/// installs the inverse as digital pre-distortion.
void calibrate_weight_mapping(optics::ChipState& chip,
                              std::uint64_t batch_seed = 0x5ca1ab1e);

/// Installs seeded coarse-calibration weight errors scaled so that the
/// predicted pre-BPC residual std at `w_target` equals `target_std`.
void apply_coarse_weight_errors(optics::ChipState& chip,
                                const Eigen::VectorXd& w_target,
                                double target_std, std::uint64_t seed);

} // namespace ocdc::calib
