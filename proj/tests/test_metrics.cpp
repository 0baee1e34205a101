#include "ldf/metrics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace ldf;
using namespace ldf::testing;

namespace {

std::vector<double> random_image(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("identical images") {
  std::mt19937_64 rng(1);
  const auto a = random_image(20 * 16 * 3, rng);
  const ImageMetrics m = compare_images(a, a, 20, 16);
  CHECK(m.l1 == 0.0);
  CHECK(m.psnr == 99.0);
  CHECK(m.ssim == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("PSNR of a known MSE") {
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0).epsilon(1e-15));
  CHECK(psnr_from_mse(1e-12) == 99.0);
  std::vector<double> a(300, 0.5), b(300, 0.6);
  CHECK(mse(a, b) == doctest::Approx(0.01).epsilon(1e-13));
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(l1_error(a, b) == doctest::Approx(0.1).epsilon(1e-13));
}

TEST_CASE("SSIM matches the windowed-statistics oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 6; ++trial) {
    const int w = 14 + trial * 3, h = 12 + trial * 2;
    const auto a = random_image(w * h * 3, rng);
    auto b = a;
    std::normal_distribution<double> noise(0.0, 0.05 + 0.05 * trial);
    for (double& v : b) v = std::clamp(v + noise(rng), 0.0, 1.0);
    const double s = ssim({&a, w, h, 3}, {&b, w, h, 3});
    CHECK(std::abs(s - ssim_oracle(a, b, w, h, 3)) < 1e-6);
    CHECK(s < 1.0);
  }
}

TEST_CASE("metric errors") {
  std::vector<double> a(30, 0.0), b(27, 0.0);
  CHECK_THROWS_AS(mse(a, b), std::invalid_argument);
  std::vector<double> small(5 * 5 * 3, 0.0);
  const ImageView v{&small, 5, 5, 3};
  CHECK_THROWS_AS(ssim(v, v), std::invalid_argument);
}
