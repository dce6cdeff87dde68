#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ocdc/datagen.hpp"

using namespace ocdc::datagen;

namespace {
constexpr double kPi = 3.14159265358979323846;

Eigen::MatrixXd random_image(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = u(rng);
  return m;
}

Eigen::MatrixXd circshift_rows(const Eigen::MatrixXd& m, int by) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i) {
    out((i + by) % m.rows(), Eigen::all) = m(i, Eigen::all);
  }
  return out;
}
} // namespace

TEST_CASE("phantoms are deterministic in the seed") {
  Phantom a = phantom(123, 32);
  Phantom b = phantom(123, 32);
  CHECK((a.pixels - b.pixels).cwiseAbs().maxCoeff() == 0.0);
  Phantom c = phantom(124, 32);
  CHECK((a.pixels - c.pixels).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("phantom normalization contract") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Phantom p = phantom(seed, 32);
    CHECK(std::abs(p.pixels.mean()) < 1e-12);
    // background pixels sat at 0 before normalization, so the spread
    // of the normalized image is exactly the pre-subtraction max of 1
    CHECK(p.pixels.maxCoeff() - p.pixels.minCoeff() ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("phantom values span both signs across many draws") {
  bool any_pos = false, any_neg = false;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Phantom p = phantom(seed, 16);
    any_pos = any_pos || p.pixels.maxCoeff() > 0.0;
    any_neg = any_neg || p.pixels.minCoeff() < 0.0;
  }
  CHECK(any_pos);
  CHECK(any_neg);
}

TEST_CASE("centered DFT is unitary") {
  Eigen::MatrixXd img = random_image(32, 1);
  Eigen::MatrixXcd freq = dft2(img);
  CHECK((idft2(freq).real() - img).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(idft2(freq).imag().cwiseAbs().maxCoeff() < 1e-10);
  CHECK(freq.cwiseAbs2().sum() ==
        doctest::Approx(img.squaredNorm()).epsilon(1e-10));
}

TEST_CASE("zero-phase MF encoding inverts to the image") {
  Eigen::MatrixXd img = phantom(7, 32).pixels;
  EncodedExample ex = mf_encode(img, 0.0);
  REQUIRE(ex.input.size() == 2);
  Eigen::MatrixXcd freq =
      ex.input[0].cast<std::complex<double>>() +
      std::complex<double>(0, 1) * ex.input[1].cast<std::complex<double>>();
  CHECK((idft2(freq).real() - img).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("pi phase on even rows ghosts the image by half the height") {
  const int n = 32;
  Eigen::MatrixXd img = phantom(9, n).pixels;
  EncodedExample ex = mf_encode(img, kPi);
  Eigen::MatrixXcd freq =
      ex.input[0].cast<std::complex<double>>() +
      std::complex<double>(0, 1) * ex.input[1].cast<std::complex<double>>();
  Eigen::MatrixXd naive = idft2(freq).real();
  // even/odd k-row decomposition: e^{j*pi} kills the even comb, so the
  // two half-amplitude copies (img +- shift)/2 recombine into -shift
  Eigen::MatrixXd shifted = circshift_rows(img, n / 2);
  CHECK((naive + shifted).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("quarter-turn phase splits into the even/odd copies exactly") {
  const int n = 32;
  Eigen::MatrixXd img = phantom(11, n).pixels;
  const double theta = kPi / 2;
  EncodedExample ex = mf_encode(img, theta);
  Eigen::MatrixXcd freq =
      ex.input[0].cast<std::complex<double>>() +
      std::complex<double>(0, 1) * ex.input[1].cast<std::complex<double>>();
  Eigen::MatrixXcd naive = idft2(freq);
  Eigen::MatrixXd shifted = circshift_rows(img, n / 2);
  Eigen::MatrixXcd expect =
      std::polar(1.0, theta) * (img + shifted).cast<std::complex<double>>() /
          2.0 +
      (img - shifted).cast<std::complex<double>>() / 2.0;
  CHECK((naive - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("MF energy is preserved") {
  Eigen::MatrixXd img = random_image(32, 3);
  EncodedExample ex = mf_encode(img, 1.1);
  double energy = ex.input[0].squaredNorm() + ex.input[1].squaredNorm();
  CHECK(energy == doctest::Approx(img.squaredNorm()).epsilon(1e-10));
}

TEST_CASE("vPDS mask hits the sparsity band and keeps DC") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    Mask m = vpds_mask(32, 0.6, seed);
    double zeroed = 1.0 - double(m.count()) / (32.0 * 32.0);
    CHECK(zeroed >= 0.57);
    CHECK(zeroed <= 0.63);
    for (int i = 14; i <= 17; ++i)
      for (int j = 14; j <= 17; ++j) CHECK(m(i, j));
  }
}

TEST_CASE("vPDS masks are deterministic") {
  Mask a = vpds_mask(32, 0.6, 9);
  Mask b = vpds_mask(32, 0.6, 9);
  CHECK((a == b).all());
}

TEST_CASE("retained samples respect the local exclusion radius") {
  const int n = 24;
  const double scale = 1.5;
  Mask m = vpds_mask_at_scale(n, scale, 13);
  const double c = n / 2.0 - 0.5;
  const double d_max = std::hypot(c, c);
  auto in_dc = [&](int i, int j) {
    return i >= n / 2 - 2 && i <= n / 2 + 1 && j >= n / 2 - 2 &&
           j <= n / 2 + 1;
  };
  std::vector<std::pair<int, int>> pts;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (m(i, j)) pts.push_back({i, j});
  int checked = 0;
  for (std::size_t a = 0; a < pts.size(); ++a) {
    for (std::size_t b = a + 1; b < pts.size(); ++b) {
      if (in_dc(pts[a].first, pts[a].second) &&
          in_dc(pts[b].first, pts[b].second)) {
        continue; // forced block, spacing not enforced inside it
      }
      const double dist = std::hypot(double(pts[a].first - pts[b].first),
                                     double(pts[a].second - pts[b].second));
      const double da = std::hypot(pts[a].first - c, pts[a].second - c);
      const double db = std::hypot(pts[b].first - c, pts[b].second - c);
      // the later-accepted point's radius is at least the bound at the
      // more central of the two (the profile grows with distance)
      CHECK(dist >= vpds_radius(std::min(da, db), d_max, scale) - 1e-9);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("unreachable sparsity throws") {
  CHECK_THROWS_AS(vpds_mask(8, 0.99, 1), SparsityUnreachable);
}

TEST_CASE("all-true mask reproduces zero-phase MF encoding") {
  Eigen::MatrixXd img = phantom(17, 16).pixels;
  Mask all = Mask::Constant(16, 16, true);
  EncodedExample a = vpds_encode(img, all);
  EncodedExample b = mf_encode(img, 0.0);
  CHECK((a.input[0] - b.input[0]).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.input[1] - b.input[1]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("masked encoding zeroes exactly the masked-out bins") {
  Eigen::MatrixXd img = random_image(16, 19);
  std::mt19937_64 rng(20);
  Mask mask = Mask::Constant(16, 16, false);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) mask(i, j) = (rng() & 1) != 0;
  EncodedExample ex = vpds_encode(img, mask);
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) {
      if (!mask(i, j)) {
        CHECK(ex.input[0](i, j) == 0.0);
        CHECK(ex.input[1](i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("mismatched mask shape throws") {
  CHECK_THROWS_AS(vpds_encode(random_image(16, 1), Mask::Constant(8, 8, true)),
                  ShapeMismatch);
}

TEST_CASE("a central unit pixel projects to the central ray") {
  const int n = 33; // odd: pixel grid has an exact center
  Eigen::MatrixXd img = Eigen::MatrixXd::Zero(n, n);
  img(16, 16) = 1.0;
  Eigen::MatrixXd sino = radon(img, 60, 47);
  for (int a = 0; a < 60; ++a) {
    CHECK(sino(a, 23) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sino.row(a).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("linear splatting conserves mass at every angle") {
  Eigen::MatrixXd img = phantom(23, 32).pixels;
  Eigen::MatrixXd sino = radon(img, 60, 47);
  for (int a = 0; a < 60; ++a) {
    CHECK(sino.row(a).sum() == doctest::Approx(img.sum()).epsilon(1e-10));
  }
}

TEST_CASE("two point sources trace the analytic sinusoids") {
  const int n = 32;
  Eigen::MatrixXd img = Eigen::MatrixXd::Zero(n, n);
  img(5, 9) = 1.0;
  img(25, 20) = 1.0;
  const int rays = 47;
  Eigen::MatrixXd sino = radon(img, 60, rays);
  const double c = (n - 1) / 2.0;
  for (int a = 0; a < 60; ++a) {
    const double theta = kPi * a / 60;
    // centroid of each splat pair sits exactly at x cos + y sin
    double u1 = (9 - c) * std::cos(theta) + (c - 5) * std::sin(theta);
    double u2 = (20 - c) * std::cos(theta) + (c - 25) * std::sin(theta);
    double moment = 0.0;
    for (int rbin = 0; rbin < rays; ++rbin) {
      moment += sino(a, rbin) * (rbin - (rays - 1) / 2.0);
    }
    CHECK(moment == doctest::Approx(u1 + u2).epsilon(1e-9));
  }
}

TEST_CASE("radon is linear") {
  Eigen::MatrixXd x = random_image(16, 31);
  Eigen::MatrixXd y = random_image(16, 32);
  Eigen::MatrixXd lhs = radon((2.0 * x - 3.0 * y).eval(), 20, 25);
  Eigen::MatrixXd rhs = 2.0 * radon(x, 20, 25) - 3.0 * radon(y, 20, 25);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("radon geometry preconditions") {
  CHECK_THROWS_AS(radon(random_image(32, 1), 60, 40), InvalidGeometry);
  CHECK_THROWS_AS(radon(random_image(32, 1), 0, 47), InvalidGeometry);
}

TEST_CASE("dataset split matches the 27 to 4 ratio") {
  Dataset ds = build_dataset(Process::MF, 690, 16, 5);
  CHECK(ds.train_indices.size() == 600);
  CHECK(ds.val_indices.size() == 90);
}

TEST_CASE("train and validation sets are disjoint and deterministic") {
  Dataset a = build_dataset(Process::Radon, 31, 16, 7);
  Dataset b = build_dataset(Process::Radon, 31, 16, 7);
  CHECK(a.train_indices == b.train_indices);
  CHECK(a.val_indices == b.val_indices);
  std::vector<bool> seen(31, false);
  for (int i : a.train_indices) seen[i] = true;
  for (int i : a.val_indices) {
    CHECK(!seen[i]);
    seen[i] = true;
  }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("dataset examples carry the right channel layout") {
  Dataset mf = build_dataset(Process::MF, 10, 16, 1);
  CHECK(mf.examples[0].input.size() == 2);
  Dataset vp = build_dataset(Process::VPDS, 10, 16, 2);
  CHECK(vp.examples[0].input.size() == 2);
  Dataset rd = build_dataset(Process::Radon, 10, 16, 3);
  CHECK(rd.examples[0].input.size() == 1);
  CHECK(rd.examples[0].input[0].rows() == 60);
}
