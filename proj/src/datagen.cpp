#include "ocdc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>

namespace ocdc::datagen {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t example_seed(std::uint64_t base, int index) {
  // splitmix64 step keeps per-example streams uncorrelated
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Eigen::MatrixXcd dft_matrix(int n, double sign) {
  const double c = n / 2.0;
  Eigen::MatrixXcd w(n, n);
  for (int k = 0; k < n; ++k) {
    for (int m = 0; m < n; ++m) {
      w(k, m) = std::polar(1.0 / std::sqrt(double(n)),
                           sign * 2.0 * kPi * (k - c) * (m - c) / n);
    }
  }
  return w;
}

double radius_at(double d, double d_max, double scale) {
  const double r_min = 0.5, r_max = 4.0;
  return scale * (r_min + (r_max - r_min) * d / d_max);
}

// Dart throwing at a fixed radius multiplier; deterministic in seed.
Mask throw_darts(int size, double scale, std::uint64_t seed) {
  const double c = size / 2.0 - 0.5;
  const double d_max = std::hypot(c, c);
  Mask mask = Mask::Constant(size, size, false);
  const int dc_lo = size / 2 - 2, dc_hi = size / 2 + 1;
  for (int i = dc_lo; i <= dc_hi; ++i)
    for (int j = dc_lo; j <= dc_hi; ++j) mask(i, j) = true;

  std::vector<int> order(size * size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  for (int idx : order) {
    const int i = idx / size, j = idx % size;
    if (mask(i, j)) continue;
    const double r = radius_at(std::hypot(i - c, j - c), d_max, scale);
    const int reach = static_cast<int>(std::ceil(r));
    bool blocked = false;
    for (int di = -reach; di <= reach && !blocked; ++di) {
      for (int dj = -reach; dj <= reach && !blocked; ++dj) {
        const int ni = i + di, nj = j + dj;
        if (ni < 0 || ni >= size || nj < 0 || nj >= size) continue;
        if (mask(ni, nj) && std::hypot(double(di), double(dj)) < r) {
          blocked = true;
        }
      }
    }
    if (!blocked) mask(i, j) = true;
  }
  return mask;
}

} // namespace

Phantom phantom(std::uint64_t seed, int size) {
  if (size < 8) throw InvalidGeometry("phantom size below 8");
  std::mt19937_64 rng(example_seed(seed, 0));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int count = 5 + static_cast<int>(uni(rng) * 8.0);

  Eigen::MatrixXd img = Eigen::MatrixXd::Zero(size, size);
  for (int e = 0; e < count; ++e) {
    const double ci = size * (0.15 + 0.7 * uni(rng));
    const double cj = size * (0.15 + 0.7 * uni(rng));
    const double ra = size * (0.05 + 0.25 * uni(rng));
    const double rb = size * (0.05 + 0.25 * uni(rng));
    const double ang = 2.0 * kPi * uni(rng);
    const double amp = 0.2 + 0.8 * uni(rng);
    const double ca = std::cos(ang), sa = std::sin(ang);
    for (int i = 0; i < size; ++i) {
      for (int j = 0; j < size; ++j) {
        const double di = i - ci, dj = j - cj;
        const double u = (ca * di + sa * dj) / ra;
        const double v = (-sa * di + ca * dj) / rb;
        if (u * u + v * v <= 1.0) img(i, j) += amp;
      }
    }
  }
  double peak = img.maxCoeff();
  if (peak < 1e-12) {
    // degenerate draw: fall back to one central disk
    const double c = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j)
        if (std::hypot(i - c, j - c) <= size / 3.0) img(i, j) = 1.0;
    peak = 1.0;
  }
  img /= peak;
  img.array() -= img.mean();
  return Phantom{std::move(img), seed};
}

Eigen::MatrixXcd dft2(const Eigen::MatrixXd& image) {
  const int n = static_cast<int>(image.rows());
  const Eigen::MatrixXcd w = dft_matrix(n, -1.0);
  return w * image.cast<std::complex<double>>() * w.transpose();
}

Eigen::MatrixXcd idft2(const Eigen::MatrixXcd& freq) {
  const int n = static_cast<int>(freq.rows());
  const Eigen::MatrixXcd w = dft_matrix(n, 1.0);
  return w * freq * w.transpose();
}

EncodedExample mf_encode(const Eigen::MatrixXd& image,
                         double even_row_phase) {
  if (image.rows() != image.cols()) throw ShapeMismatch("image not square");
  Eigen::MatrixXcd freq = dft2(image);
  const std::complex<double> twist = std::polar(1.0, even_row_phase);
  for (int r = 0; r < freq.rows(); r += 2) freq.row(r) *= twist;
  EncodedExample ex;
  ex.process = Process::MF;
  ex.input = {freq.real(), freq.imag()};
  ex.truth.pixels = image;
  return ex;
}

Mask vpds_mask(int size, double target_sparsity, std::uint64_t seed,
               bool sparsity_is_zeroed_fraction) {
  if (size < 8) throw InvalidGeometry("mask size below 8");
  const double target_zeroed =
      sparsity_is_zeroed_fraction ? target_sparsity : 1.0 - target_sparsity;
  const double tol = 0.03;

  auto zeroed_fraction = [&](const Mask& m) {
    return 1.0 - double(m.count()) / (size * size);
  };

  double lo = 0.0, hi = 24.0;
  Mask best = throw_darts(size, hi, seed);
  if (zeroed_fraction(best) + tol < target_zeroed) {
    throw SparsityUnreachable("radius bounds cannot reach the target");
  }
  for (int iter = 0; iter < 40; ++iter) {
    const double mid = 0.5 * (lo + hi);
    Mask m = throw_darts(size, mid, seed);
    const double z = zeroed_fraction(m);
    if (std::abs(z - target_zeroed) <= tol) return m;
    if (z < target_zeroed) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw SparsityUnreachable("bisection did not land in the tolerance band");
}

Mask vpds_mask_at_scale(int size, double radius_multiplier,
                        std::uint64_t seed) {
  if (size < 8) throw InvalidGeometry("mask size below 8");
  return throw_darts(size, radius_multiplier, seed);
}

double vpds_radius(double d, double d_max, double radius_multiplier) {
  return radius_at(d, d_max, radius_multiplier);
}

EncodedExample vpds_encode(const Eigen::MatrixXd& image, const Mask& mask) {
  if (image.rows() != image.cols()) throw ShapeMismatch("image not square");
  if (mask.rows() != image.rows() || mask.cols() != image.cols()) {
    throw ShapeMismatch("mask does not match the image");
  }
  Eigen::MatrixXcd freq = dft2(image);
  for (int i = 0; i < freq.rows(); ++i)
    for (int j = 0; j < freq.cols(); ++j)
      if (!mask(i, j)) freq(i, j) = 0.0;
  EncodedExample ex;
  ex.process = Process::VPDS;
  ex.input = {freq.real(), freq.imag()};
  ex.truth.pixels = image;
  return ex;
}

Eigen::MatrixXd radon(const Eigen::MatrixXd& image, int n_angles,
                      int n_rays) {
  const int n = static_cast<int>(image.rows());
  if (image.cols() != n) throw InvalidGeometry("radon: image not square");
  if (n_angles < 1 || n_rays < std::ceil(n * std::sqrt(2.0))) {
    throw InvalidGeometry("radon: too few angles or rays");
  }
  const double c = (n - 1) / 2.0;
  const double ray_center = (n_rays - 1) / 2.0;
  Eigen::MatrixXd sino = Eigen::MatrixXd::Zero(n_angles, n_rays);
  for (int a = 0; a < n_angles; ++a) {
    const double theta = kPi * a / n_angles;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double v = image(i, j);
        if (v == 0.0) continue;
        const double x = j - c, y = c - i;
        const double u = x * ct + y * st + ray_center;
        const int b0 = static_cast<int>(std::floor(u));
        const double frac = u - b0;
        sino(a, b0) += v * (1.0 - frac);
        sino(a, b0 + 1) += v * frac;
      }
    }
  }
  return sino;
}

Dataset build_dataset(Process process, int count, int size,
                      std::uint64_t seed) {
  if (count < 10) throw InvalidGeometry("dataset needs at least 10 examples");
  Dataset ds;
  ds.examples.reserve(count);
  for (int idx = 0; idx < count; ++idx) {
    const std::uint64_t es = example_seed(seed, idx + 1);
    Phantom truth = phantom(es, size);
    EncodedExample ex;
    switch (process) {
      case Process::MF: {
        std::mt19937_64 rng(es ^ 0x6d69736d61746368ULL);
        std::uniform_real_distribution<double> theta(kPi / 4, 3 * kPi / 4);
        ex = mf_encode(truth.pixels, theta(rng));
        break;
      }
      case Process::VPDS:
        ex = vpds_encode(truth.pixels, vpds_mask(size, 0.6, es));
        break;
      case Process::Radon: {
        int rays = static_cast<int>(std::ceil(size * std::sqrt(2.0)));
        if (rays % 2 == 0) ++rays;
        ex.input = {radon(truth.pixels, 60, rays)};
        ex.process = Process::Radon;
        break;
      }
    }
    ex.truth = std::move(truth);
    ds.examples.push_back(std::move(ex));
  }

  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x73706c6974ULL);
  std::shuffle(order.begin(), order.end(), rng);
  const int train_count = static_cast<int>(std::int64_t(count) * 27 / 31);
  ds.train_indices.assign(order.begin(), order.begin() + train_count);
  ds.val_indices.assign(order.begin() + train_count, order.end());
  return ds;
}

} // namespace ocdc::datagen
