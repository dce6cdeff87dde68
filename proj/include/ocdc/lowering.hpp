#pragma once

// Compiles MVMs, convolutions and transposed convolutions of arbitrary
// size into schedules of width-M dot products with digital partial-sum
// accumulation, and executes schedules against a chip.

#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ocdc/optics.hpp"

namespace ocdc::lower {

struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ChunkWidthExceedsChip : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One H x W matrix per channel.
using FeatureMap = std::vector<Eigen::MatrixXd>;
/// kernels[c_out][c_in] is a k x k matrix.
using KernelStack = std::vector<std::vector<Eigen::MatrixXd>>;

/// One width-M dot product. Values are pre-scaled into [-1, 1]; the
/// measured product is multiplied by `scale` before accumulation.
struct ScheduleStep {
  Eigen::VectorXd slow_values; // input chunk, fixed across a slab
  Eigen::VectorXd fast_values; // matrix-row chunk, varies per step
  int accumulator_index = 0;
  double scale = 1.0;
};

struct Schedule {
  int chunk_width = 0;
  std::vector<ScheduleStep> steps;
  int accumulator_count = 0;
  double scale = 1.0; // global post-scaling of every accumulator

  /// Perfect digital replay; equals the dense result to 1e-12.
  Eigen::VectorXd replay() const;
};

struct PatchGeometry {
  int height = 0;
  int width = 0;
  int channels = 1;
  int kernel = 0;
  int stride = 1;
  int padding = 0;

  int out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};

/// Column p holds the flattened k*k*C_in receptive field of output
/// position p (row-major over output positions; flatten order is
/// channel, then kernel row, then kernel column).
struct PatchMatrix {
  Eigen::MatrixXd data;
  PatchGeometry geometry;
};

/// Steps needed to lower a K x N MVM at chunk width M, without
/// building the schedule.
std::size_t mvm_step_count(std::size_t k_rows, std::size_t n_cols,
                           std::size_t chunk_width);

/// Lowers y = A^T x (A is K x N, outputs indexed by column). The input
/// is split into ceil(K/M) zero-padded chunks; each chunk and each
/// matrix-row chunk are scaled by their max-absolute value.
Schedule decompose_mvm(const Eigen::VectorXd& x, const Eigen::MatrixXd& a,
                       int chunk_width);

PatchMatrix im2col_patch(const FeatureMap& map, int kernel_size, int stride,
                         int padding);

/// Stride-1 convolution lowered through im2col + decompose_mvm.
/// padding < 0 selects "same" zero padding (odd kernels). Accumulator
/// c_out * positions + p holds output channel c_out at position p.
Schedule lower_conv(const FeatureMap& map, const KernelStack& kernels,
                    int chunk_width, int stride = 1, int padding = -1);

/// Stride-1 transposed convolution under the same-size convention:
/// a same-padding convolution with the spatially flipped kernel, the
/// exact adjoint of the forward same-padding convolution.
Schedule lower_deconv(const FeatureMap& map, const Eigen::MatrixXd& kernel,
                      int chunk_width);

/// Runs every step through the chip's analog dot product and
/// accumulates digitally.
Eigen::VectorXd execute_schedule(const Schedule& schedule,
                                 optics::ChipState& chip);

} // namespace ocdc::lower
