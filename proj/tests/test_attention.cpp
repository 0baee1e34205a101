#include "ldf/attention.hpp"

#include "support.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace ldf;
using namespace ldf::testing;

namespace {

Eigen::MatrixXd as_matrix(const AttentionMask& m) {
  Eigen::MatrixXd d(m.num_landmarks, m.num_expressions);
  for (int l = 0; l < m.num_landmarks; ++l)
    for (int k = 0; k < m.num_expressions; ++k) d(l, k) = m.at(l, k);
  return d;
}

}  // namespace

TEST_CASE("displacement matrix matches per-basis deformation") {
  const auto rig = ldf::testing::small_rig();
  const Eigen::MatrixXd d = displacement_matrix(*rig);
  REQUIRE(d.rows() == rig->num_landmarks());
  REQUIRE(d.cols() == rig->num_expressions);
  const auto rest = rig->canonical_landmarks();
  for (int k = 0; k < rig->num_expressions; ++k) {
    std::vector<double> e(rig->num_expressions, 0.0);
    e[k] = 1.0;
    const auto moved = mesh_landmarks(*rig, deform_mesh(*rig, e));
    for (int l = 0; l < rig->num_landmarks(); ++l) {
      CHECK(d(l, k) >= 0.0);
      CHECK(d(l, k) == doctest::Approx((moved[l] - rest[l]).norm()).epsilon(1e-12));
      CHECK((d(l, k) == 0.0) == (moved[l] == rest[l]));
    }
  }
}

TEST_CASE("one-sided bases leave the other side's landmarks at zero") {
  const auto rig = ldf::testing::small_rig();
  const Eigen::MatrixXd d = displacement_matrix(*rig);
  const auto lm = rig->canonical_landmarks();
  int checked = 0;
  for (int k = 0; k < rig->num_expressions; ++k) {
    if (rig->expression_sides[k] == 0) continue;
    for (int l = 0; l < rig->num_landmarks(); ++l)
      if (lm[l].x() * rig->expression_sides[k] < 0.0) {
        CHECK(d(l, k) == 0.0);
        ++checked;
      }
  }
  CHECK(checked > 0);
}

TEST_CASE("scaling a basis scales its column") {
  BlendshapeRig rig = *ldf::testing::small_rig();
  const Eigen::MatrixXd before = displacement_matrix(rig);
  for (int v = 0; v < rig.num_vertices(); ++v)
    for (int a = 0; a < 3; ++a) rig.expr_bases[(static_cast<std::size_t>(v) * 3 + a) * rig.num_expressions + 4] *= 2.0;
  const Eigen::MatrixXd after = displacement_matrix(rig);
  for (int l = 0; l < rig.num_landmarks(); ++l)
    for (int k = 0; k < rig.num_expressions; ++k) CHECK(after(l, k) == (k == 4 ? 2.0 : 1.0) * before(l, k));
}

TEST_CASE("binarize: tie handling") {
  SUBCASE("constant column keeps every entry") {
    Eigen::MatrixXd d = Eigen::MatrixXd::Constant(34, 2, 0.3);
    d.col(1).setZero();
    const AttentionMask m = binarize(d);
    CHECK(std::all_of(m.bits.begin(), m.bits.end(), [](auto b) { return b == 1; }));
  }
  SUBCASE("more than a quarter zeros are masked, ones kept") {
    Eigen::MatrixXd d = Eigen::MatrixXd::Ones(8, 1);
    d(0, 0) = d(1, 0) = d(2, 0) = 0.0;
    const AttentionMask m = binarize(d);
    for (int l = 0; l < 8; ++l) CHECK(m.at(l, 0) == (l >= 3));
  }
  SUBCASE("ties at the top survive") {
    Eigen::MatrixXd d(8, 1);
    d << 0.1, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
    // Only one value lies below 0.5, fewer than ⌈0.25·8⌉ = 2.
    const AttentionMask m = binarize(d);
    for (int l = 0; l < 8; ++l) CHECK(m.at(l, 0));
  }
  SUBCASE("distinct values zero exactly the lowest quarter") {
    Eigen::MatrixXd d(8, 1);
    d << 0.7, 0.2, 0.9, 0.1, 0.4, 0.3, 0.8, 0.6;
    const AttentionMask m = binarize(d);
    for (int l = 0; l < 8; ++l) CHECK(m.at(l, 0) == (d(l, 0) >= 0.3));
  }
}

TEST_CASE("binarize matches a counting oracle on random matrices with ties") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> level(0, 6);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 5 + trial % 30;
    Eigen::MatrixXd d(n, 7);
    for (int i = 0; i < d.size(); ++i) d.data()[i] = 0.1 * level(rng);
    CHECK(binarize(d) == counting_oracle(d, 0.25));
  }
}

TEST_CASE("rig mask invariants") {
  const auto rig = ldf::testing::small_rig();
  const Eigen::MatrixXd d = displacement_matrix(*rig);
  const AttentionMask m = binarize(d);
  CHECK(m.num_landmarks == rig->num_landmarks());
  const int need = static_cast<int>(std::ceil(0.25 * m.num_landmarks));
  for (int k = 0; k < m.num_expressions; ++k) {
    if (d.col(k).maxCoeff() == d.col(k).minCoeff()) continue;
    int zeros = 0;
    double kept_min = 1e300;
    for (int l = 0; l < m.num_landmarks; ++l) {
      zeros += !m.at(l, k);
      if (m.at(l, k)) kept_min = std::min(kept_min, d(l, k));
    }
    CHECK(zeros >= need);
    // Brute force: every masked entry displaces less than every kept one.
    for (int l = 0; l < m.num_landmarks; ++l)
      if (!m.at(l, k)) CHECK(d(l, k) < kept_min);
  }
  for (int l = 0; l < m.num_landmarks; ++l) {
    bool any = false;
    for (int k = 0; k < m.num_expressions; ++k) any = any || m.at(l, k);
    if (!any) CHECK(d.row(l).maxCoeff() == 0.0);
  }
  CHECK(binarize(as_matrix(m)) == m);
  CHECK(binarize(d * 3.7) == m);
  CHECK(binarize(d * 1e-3) == m);
}

TEST_CASE("binarize rejects bad input") {
  CHECK_THROWS_AS(binarize(-Eigen::MatrixXd::Ones(3, 2)), std::invalid_argument);
  CHECK_THROWS_AS(binarize(Eigen::MatrixXd::Ones(3, 2), 1.0), std::invalid_argument);
}

TEST_CASE("apply_mask") {
  const std::vector<double> e = {0.5, -1.0, 2.0, 0.25};
  const std::vector<std::uint8_t> ones(4, 1), zeros(4, 0);
  CHECK(apply_mask(e, ones) == e);
  CHECK(apply_mask(e, zeros) == std::vector<double>(4, 0.0));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2, 2);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(16);
    std::vector<std::uint8_t> row(16);
    for (int k = 0; k < 16; ++k) {
      x[k] = u(rng);
      row[k] = coin(rng);
    }
    const auto out = apply_mask(x, row);
    for (int k = 0; k < 16; ++k) CHECK(out[k] == x[k] * row[k]);
  }
  CHECK_THROWS_AS(apply_mask(e, std::vector<std::uint8_t>(3, 1)), std::invalid_argument);
}

TEST_CASE("mask text dump") {
  AttentionMask m = AttentionMask::all_ones(2, 3);
  m.bits[1] = 0;
  CHECK(to_text(m) == "1 0 1\n1 1 1\n");
}
