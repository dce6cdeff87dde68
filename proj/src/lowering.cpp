#include "ocdc/lowering.hpp"

#include <cmath>

namespace ocdc::lower {

namespace {

double max_abs_or_one(const Eigen::VectorXd& v) {
  const double m = v.cwiseAbs().maxCoeff();
  return m > 0.0 ? m : 1.0;
}

// Appends the lowering of y = A^T x, mapping A's column n to
// accumulator base + n * accumulator_stride.
void append_mvm(Schedule& schedule, const Eigen::VectorXd& x,
                const Eigen::MatrixXd& a, int base, int accumulator_stride) {
  const int m = schedule.chunk_width;
  const int k = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());
  const int chunks = (k + m - 1) / m;
  for (int c = 0; c < chunks; ++c) {
    const int lo = c * m;
    const int len = std::min(m, k - lo);
    Eigen::VectorXd xc = Eigen::VectorXd::Zero(m);
    xc.head(len) = x.segment(lo, len);
    const double sx = max_abs_or_one(xc);
    for (int col = 0; col < n; ++col) {
      ScheduleStep step;
      Eigen::VectorXd wc = Eigen::VectorXd::Zero(m);
      wc.head(len) = a.col(col).segment(lo, len);
      const double sw = max_abs_or_one(wc);
      step.slow_values = xc / sx;
      step.fast_values = wc / sw;
      step.scale = sx * sw;
      step.accumulator_index = base + col * accumulator_stride;
      schedule.steps.push_back(std::move(step));
    }
  }
}

void check_kernels(const KernelStack& kernels, int channels) {
  if (kernels.empty()) throw InvalidGeometry("no output kernels");
  const int k = static_cast<int>(kernels.front().front().rows());
  for (const auto& per_out : kernels) {
    if (static_cast<int>(per_out.size()) != channels) {
      throw DimensionMismatch("kernel input channels do not match the map");
    }
    for (const auto& kk : per_out) {
      if (kk.rows() != k || kk.cols() != k) {
        throw InvalidGeometry("kernels must be square and equally sized");
      }
    }
  }
}

} // namespace

Eigen::VectorXd Schedule::replay() const {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(accumulator_count);
  for (const auto& step : steps) {
    acc[step.accumulator_index] +=
        step.scale * step.slow_values.dot(step.fast_values);
  }
  return scale * acc;
}

std::size_t mvm_step_count(std::size_t k_rows, std::size_t n_cols,
                           std::size_t chunk_width) {
  return ((k_rows + chunk_width - 1) / chunk_width) * n_cols;
}

Schedule decompose_mvm(const Eigen::VectorXd& x, const Eigen::MatrixXd& a,
                       int chunk_width) {
  if (chunk_width < 1 || x.size() < 1 || a.cols() < 1) {
    throw DimensionMismatch("decompose_mvm: empty operands");
  }
  if (x.size() != a.rows()) {
    throw DimensionMismatch("decompose_mvm: x length does not match rows");
  }
  Schedule schedule;
  schedule.chunk_width = chunk_width;
  schedule.accumulator_count = static_cast<int>(a.cols());
  append_mvm(schedule, x, a, 0, 1);
  return schedule;
}

PatchMatrix im2col_patch(const FeatureMap& map, int kernel_size, int stride,
                         int padding) {
  if (map.empty()) throw InvalidGeometry("empty feature map");
  PatchGeometry geo;
  geo.height = static_cast<int>(map.front().rows());
  geo.width = static_cast<int>(map.front().cols());
  geo.channels = static_cast<int>(map.size());
  geo.kernel = kernel_size;
  geo.stride = stride;
  geo.padding = padding;
  for (const auto& ch : map) {
    if (ch.rows() != geo.height || ch.cols() != geo.width) {
      throw InvalidGeometry("channels differ in size");
    }
  }
  if (kernel_size < 1 || stride < 1 || padding < 0 ||
      geo.out_height() < 1 || geo.out_width() < 1) {
    throw InvalidGeometry("im2col geometry yields no output positions");
  }

  const int out_h = geo.out_height(), out_w = geo.out_width();
  PatchMatrix patch;
  patch.geometry = geo;
  patch.data.resize(kernel_size * kernel_size * geo.channels, out_h * out_w);
  for (int oi = 0; oi < out_h; ++oi) {
    for (int oj = 0; oj < out_w; ++oj) {
      const int col = oi * out_w + oj;
      int row = 0;
      for (int c = 0; c < geo.channels; ++c) {
        for (int di = 0; di < kernel_size; ++di) {
          for (int dj = 0; dj < kernel_size; ++dj, ++row) {
            const int i = oi * stride + di - padding;
            const int j = oj * stride + dj - padding;
            const bool inside =
                i >= 0 && i < geo.height && j >= 0 && j < geo.width;
            patch.data(row, col) = inside ? map[c](i, j) : 0.0;
          }
        }
      }
    }
  }
  return patch;
}

Schedule lower_conv(const FeatureMap& map, const KernelStack& kernels,
                    int chunk_width, int stride, int padding) {
  if (map.empty()) throw InvalidGeometry("empty feature map");
  check_kernels(kernels, static_cast<int>(map.size()));
  const int k = static_cast<int>(kernels.front().front().rows());
  if (padding < 0) {
    if (k % 2 == 0) throw InvalidGeometry("same padding needs an odd kernel");
    padding = (k - 1) / 2;
  }
  PatchMatrix patch = im2col_patch(map, k, stride, padding);

  const int c_out = static_cast<int>(kernels.size());
  const int rows = static_cast<int>(patch.data.rows());
  Eigen::MatrixXd weights(rows, c_out);
  for (int o = 0; o < c_out; ++o) {
    int row = 0;
    for (const auto& kk : kernels[o]) {
      for (int di = 0; di < k; ++di) {
        for (int dj = 0; dj < k; ++dj, ++row) weights(row, o) = kk(di, dj);
      }
    }
  }

  const int positions = static_cast<int>(patch.data.cols());
  Schedule schedule;
  schedule.chunk_width = chunk_width;
  schedule.accumulator_count = c_out * positions;
  for (int p = 0; p < positions; ++p) {
    append_mvm(schedule, patch.data.col(p), weights, p, positions);
  }
  return schedule;
}

Schedule lower_deconv(const FeatureMap& map, const Eigen::MatrixXd& kernel,
                      int chunk_width) {
  if (kernel.rows() != kernel.cols() || kernel.rows() % 2 == 0) {
    throw InvalidGeometry("transposed convolution needs an odd square kernel");
  }
  KernelStack flipped(1, std::vector<Eigen::MatrixXd>(
                             1, kernel.reverse().eval()));
  return lower_conv(map, flipped, chunk_width);
}

Eigen::VectorXd execute_schedule(const Schedule& schedule,
                                 optics::ChipState& chip) {
  if (schedule.chunk_width > chip.active_branches) {
    throw ChunkWidthExceedsChip("schedule is wider than the chip");
  }
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(schedule.accumulator_count);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(chip.active_branches);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(chip.active_branches);
  for (const auto& step : schedule.steps) {
    x.head(schedule.chunk_width) = step.slow_values;
    w.head(schedule.chunk_width) = step.fast_values;
    acc[step.accumulator_index] += step.scale * optics::dot_product(x, w, chip);
  }
  return schedule.scale * acc;
}

} // namespace ocdc::lower
