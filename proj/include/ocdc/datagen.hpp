#pragma once

// Synthetic phantoms and the three MRI-style encoding processes that
// produce network inputs: misaligned Fourier (MF), variable-Poisson-
// disk-sampled Fourier (vPDS) and Radon projection.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace ocdc::datagen {

struct SparsityUnreachable : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Max value normalized to 1, then the mean subtracted.
struct Phantom {
  Eigen::MatrixXd pixels;
  std::uint64_t seed = 0;
};

enum class Process { MF, VPDS, Radon };

/// 2-channel (re, im) Fourier data for MF/vPDS; single-channel
/// sinogram for Radon.
struct EncodedExample {
  std::vector<Eigen::MatrixXd> input;
  Phantom truth;
  Process process = Process::MF;
};

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Deterministic composite of 5 to 12 random ellipses, normalized.
Phantom phantom(std::uint64_t seed, int size);

/// Centered unitary 2-D DFT (DC at the array center, 1/N scaling both
/// ways) and its inverse.
Eigen::MatrixXcd dft2(const Eigen::MatrixXd& image);
Eigen::MatrixXcd idft2(const Eigen::MatrixXcd& freq);

/// DFT with e^{j*theta} applied to even-indexed rows of k-space.
EncodedExample mf_encode(const Eigen::MatrixXd& image,
                         double even_row_phase);

/// Variable-radius Poisson-disk k-space mask: exclusion radius grows
/// linearly with distance from the DC center, the DC-centered 4x4
/// block is always retained, and a global radius multiplier is
/// bisected until the zeroed fraction is within +-0.03 of the target.
/// `sparsity_is_zeroed_fraction` flips the sparsity reading.
Mask vpds_mask(int size, double target_sparsity, std::uint64_t seed,
               bool sparsity_is_zeroed_fraction = true);

/// One dart-throwing pass at a fixed radius multiplier (the primitive
/// vpds_mask bisects over); exposed for exclusion-radius checks.
Mask vpds_mask_at_scale(int size, double radius_multiplier,
                        std::uint64_t seed);

/// Exclusion radius enforced at distance d from the k-space center.
double vpds_radius(double d, double d_max, double radius_multiplier);

EncodedExample vpds_encode(const Eigen::MatrixXd& image, const Mask& mask);

/// Pixel-driven discrete Radon transform with linear splatting;
/// returns an n_angles x n_rays sinogram.
Eigen::MatrixXd radon(const Eigen::MatrixXd& image, int n_angles,
                      int n_rays);

struct Dataset {
  std::vector<EncodedExample> examples;
  std::vector<int> train_indices;
  std::vector<int> val_indices;
};

/// Deterministic dataset with a 27:4 train/validation split.
Dataset build_dataset(Process process, int count, int size,
                      std::uint64_t seed);

} // namespace ocdc::datagen
