#include "ldf/rig.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

using namespace ldf;

namespace {

std::vector<double> unit_expression(int E, int k) {
  std::vector<double> e(E, 0.0);
  e[k] = 1.0;
  return e;
}

}  // namespace

TEST_CASE("rig has the requested sizes and valid indices") {
  const BlendshapeRig rig = generate_rig(1, 642, 16, 34);
  CHECK(rig.num_vertices() == 642);
  CHECK(rig.num_expressions == 16);
  CHECK(rig.num_landmarks() == 34);
  CHECK(rig.landmark_tags.size() == 34);
  CHECK(rig.expr_bases.size() == 642u * 3 * 16);
  for (const Face& f : rig.faces)
    for (int v : f) CHECK(v < rig.num_vertices());
  for (int id : rig.landmark_vertex_ids) CHECK(id < rig.num_vertices());
  for (const Vec3& p : rig.vertices_mean) CHECK(p.cwiseAbs().maxCoeff() <= 0.5);
  for (const Vec3& c : rig.vertex_colors) CHECK((c.minCoeff() >= 0.0 && c.maxCoeff() <= 1.0));
}

TEST_CASE("each edge is shared by at most two faces") {
  const BlendshapeRig rig = generate_rig(1, 642, 16, 34);
  std::map<std::pair<int, int>, int> uses;
  for (const Face& f : rig.faces)
    for (int i = 0; i < 3; ++i) {
      const int a = f[i], b = f[(i + 1) % 3];
      ++uses[{std::min(a, b), std::max(a, b)}];
    }
  for (const auto& [edge, n] : uses) CHECK(n <= 2);
}

TEST_CASE("at least a third of the bases are one-sided and never cross the midline") {
  const BlendshapeRig rig = generate_rig(1, 642, 16, 34);
  int one_sided = 0;
  for (int k = 0; k < rig.num_expressions; ++k) {
    bool pos = false, neg = false;
    for (int v = 0; v < rig.num_vertices(); ++v) {
      if (rig.basis_vector(v, k).norm() == 0.0) continue;
      (rig.vertices_mean[v].x() > 0.0 ? pos : neg) = true;
    }
    if (pos != neg) ++one_sided;
    if (rig.expression_sides[k] != 0) {
      CHECK(pos != neg);
      CHECK((rig.expression_sides[k] > 0) == pos);
    }
  }
  CHECK(one_sided >= 6);
  CHECK(one_sided >= (rig.num_expressions + 2) / 3);
}

TEST_CASE("rig generation is deterministic and the landmark count only changes landmarks") {
  const BlendshapeRig a = generate_rig(1, 642, 16, 34);
  const BlendshapeRig b = generate_rig(1, 642, 16, 34);
  const BlendshapeRig c = generate_rig(1, 642, 16, 5);
  CHECK(a.vertices_mean == b.vertices_mean);
  CHECK(a.expr_bases == b.expr_bases);
  CHECK(a.vertex_colors == b.vertex_colors);
  CHECK(a.landmark_vertex_ids == b.landmark_vertex_ids);
  CHECK(a.vertices_mean == c.vertices_mean);
  CHECK(a.expr_bases == c.expr_bases);
  CHECK(a.faces == c.faces);
  CHECK(c.num_landmarks() == 5);
  CHECK(a.landmark_vertex_ids != c.landmark_vertex_ids);
  const BlendshapeRig d = generate_rig(2, 642, 16, 34);
  CHECK(a.expr_bases != d.expr_bases);
}

TEST_CASE("landmarks cover both sides and the facial regions") {
  const BlendshapeRig rig = generate_rig(1, 642, 16, 34);
  std::set<std::string> tags(rig.landmark_tags.begin(), rig.landmark_tags.end());
  for (const char* t : {"eye_l", "eye_r", "brow_l", "brow_r", "mouth", "jaw"}) CHECK(tags.count(t) == 1);
  int left = 0, right = 0;
  for (const Vec3& p : rig.canonical_landmarks()) {
    if (p.x() > 1e-9) ++left;
    if (p.x() < -1e-9) ++right;
  }
  CHECK(left >= 10);
  CHECK(right >= 10);
}

TEST_CASE("bad rig arguments are rejected") {
  CHECK_THROWS_AS(generate_rig(1, 100, 16, 34), std::invalid_argument);
  CHECK_THROWS_AS(generate_rig(1, 642, 8, 34), std::invalid_argument);
  CHECK_THROWS_AS(generate_rig(1, 642, 16, 12), std::invalid_argument);
  CHECK_THROWS_AS(generate_rig(1, 700, 16, 34), std::invalid_argument);
}

TEST_CASE("deform_mesh: identity, unit basis read-back and linearity") {
  const auto rig = ldf::testing::small_rig();
  const int E = rig->num_expressions;
  const MeshState zero = deform_mesh(*rig, std::vector<double>(E, 0.0));
  CHECK(zero.vertices == rig->vertices_mean);
  for (int k = 0; k < E; ++k) {
    const MeshState m = deform_mesh(*rig, unit_expression(E, k));
    for (int v = 0; v < rig->num_vertices(); ++v) {
      const Vec3 d = m.vertices[v] - rig->vertices_mean[v];
      // vertices_mean + 1·basis is exact up to one rounding of the sum.
      CHECK((d - rig->basis_vector(v, k)).norm() <= 1e-15);
    }
  }
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> e1(E), e2(E), e12(E);
    for (int k = 0; k < E; ++k) {
      e1[k] = u(rng);
      e2[k] = u(rng);
      e12[k] = e1[k] + e2[k];
    }
    const Vec3 jaw(0.1 * u(rng), 0.0, 0.0);
    const MeshState a = deform_mesh(*rig, e1), b = deform_mesh(*rig, e2), ab = deform_mesh(*rig, e12);
    for (int v = 0; v < rig->num_vertices(); ++v) {
      const Vec3 lhs = ab.vertices[v] - rig->vertices_mean[v];
      const Vec3 rhs = (a.vertices[v] - rig->vertices_mean[v]) + (b.vertices[v] - rig->vertices_mean[v]);
      CHECK((lhs - rhs).norm() <= 1e-12);
    }
    // Collinearity at a fixed non-zero jaw: midpoint of e1, e2 maps to the midpoint.
    std::vector<double> mid(E);
    for (int k = 0; k < E; ++k) mid[k] = 0.5 * (e1[k] + e2[k]);
    const MeshState ja = deform_mesh(*rig, e1, jaw), jb = deform_mesh(*rig, e2, jaw), jm = deform_mesh(*rig, mid, jaw);
    for (int v = 0; v < rig->num_vertices(); ++v)
      CHECK((jm.vertices[v] - 0.5 * (ja.vertices[v] + jb.vertices[v])).norm() <= 1e-12);
  }
  CHECK_THROWS_AS(deform_mesh(*rig, std::vector<double>(E - 1, 0.0)), std::invalid_argument);
}

TEST_CASE("jaw rotation only moves jaw-weighted vertices") {
  const auto rig = ldf::testing::small_rig();
  const MeshState m = deform_mesh(*rig, std::vector<double>(rig->num_expressions, 0.0), Vec3(0.2, 0, 0));
  int moved = 0;
  for (int v = 0; v < rig->num_vertices(); ++v) {
    const bool zero_weight = rig->jaw_region_weights[v] == 0.0;
    if (zero_weight) CHECK(m.vertices[v] == rig->vertices_mean[v]);
    if (m.vertices[v] != rig->vertices_mean[v]) ++moved;
  }
  CHECK(moved > 0);
}

TEST_CASE("closest point on a triangle") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  SUBCASE("vertex") {
    const SurfacePoint s = closest_point_on_triangle(b, a, b, c);
    CHECK((s.position - b).norm() == 0.0);
    CHECK(s.barycentric == Vec3(0, 1, 0));
  }
  SUBCASE("centroid offset along the normal") {
    const Vec3 g = (a + b + c) / 3.0;
    const SurfacePoint s = closest_point_on_triangle(g + Vec3(0, 0, 0.7), a, b, c);
    CHECK((s.position - g).norm() < 1e-15);
    CHECK(s.barycentric.x() == doctest::Approx(1.0 / 3));
    CHECK(s.barycentric.y() == doctest::Approx(1.0 / 3));
    CHECK(s.barycentric.z() == doctest::Approx(1.0 / 3));
    CHECK(s.distance == doctest::Approx(0.7));
  }
  SUBCASE("outside an edge") {
    const SurfacePoint s = closest_point_on_triangle(Vec3(0.5, -1, 0), a, b, c);
    CHECK((s.position - Vec3(0.5, 0, 0)).norm() < 1e-15);
    CHECK(s.barycentric.sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("mesh proximity agrees with brute force and bounds random surface samples") {
  const auto rig = ldf::testing::small_rig();
  std::vector<double> e(rig->num_expressions, 0.0);
  e[1] = 0.8;
  e[6] = -0.5;
  const MeshState mesh = deform_mesh(*rig, e, Vec3(0.1, 0, 0));
  const MeshProximity prox(*rig, mesh);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.5, 0.5), u01(0.0, 1.0);
  std::uniform_int_distribution<int> face(0, rig->num_faces() - 1);
  // Random surface samples for the Monte-Carlo lower bound.
  std::vector<Vec3> surface;
  for (int i = 0; i < 10000; ++i) {
    const Face& f = rig->faces[face(rng)];
    double r1 = u01(rng), r2 = u01(rng);
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    surface.push_back(mesh.vertices[f[0]] + r1 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]) +
                      r2 * (mesh.vertices[f[2]] - mesh.vertices[f[0]]));
  }
  std::vector<Vec3> xs;
  std::vector<double> ds;
  for (int q = 0; q < 40; ++q) {
    const Vec3 x(u(rng), u(rng), u(rng));
    const SurfacePoint brute = closest_surface_point(*rig, mesh, x);
    const SurfacePoint fast = prox.closest(x);
    CHECK(fast.distance == doctest::Approx(brute.distance).epsilon(1e-12));
    CHECK(brute.barycentric.minCoeff() >= 0.0);
    CHECK(brute.barycentric.sum() == doctest::Approx(1.0));
    const Face& f = rig->faces[brute.face_id];
    const Vec3 recon = brute.barycentric[0] * mesh.vertices[f[0]] + brute.barycentric[1] * mesh.vertices[f[1]] +
                       brute.barycentric[2] * mesh.vertices[f[2]];
    CHECK((recon - brute.position).norm() < 1e-12);
    double mc = 1e9;
    for (const Vec3& s : surface) mc = std::min(mc, (x - s).norm());
    CHECK(brute.distance <= mc + 1e-12);
    xs.push_back(x);
    ds.push_back(brute.distance);
  }
  // 1-Lipschitz.
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j)
      CHECK(std::abs(ds[i] - ds[j]) <= (xs[i] - xs[j]).norm() + 1e-12);
}

TEST_CASE("pseudo ground-truth deformation") {
  const auto rig = ldf::testing::small_rig();
  const int E = rig->num_expressions;
  const MeshState rest = deform_mesh(*rig, std::vector<double>(E, 0.0));
  CHECK(pseudo_gt_deformation(*rig, rest, 7, Vec3(0.2, 0.3, 0.5)).norm() == 0.0);

  std::vector<double> e(E, 0.0);
  e[2] = 1.0;
  e[9] = 0.7;
  const MeshState mesh = deform_mesh(*rig, e, Vec3(0.05, 0, 0));
  for (int f = 0; f < rig->num_faces(); f += 37) {
    const Face& tri = rig->faces[f];
    for (int i = 0; i < 3; ++i) {
      Vec3 b = Vec3::Zero();
      b[i] = 1.0;
      const Vec3 t = pseudo_gt_deformation(*rig, mesh, f, b);
      CHECK(t == rig->vertices_mean[tri[i]] - mesh.vertices[tri[i]]);
      // Deformed vertex plus t lands on the canonical vertex.
      CHECK((mesh.vertices[tri[i]] + t - rig->vertices_mean[tri[i]]).norm() <= 1e-12);
    }
    const Vec3 mid = pseudo_gt_deformation(*rig, mesh, f, Vec3(0.5, 0.5, 0.0));
    const Vec3 expect = 0.5 * ((rig->vertices_mean[tri[0]] - mesh.vertices[tri[0]]) +
                               (rig->vertices_mean[tri[1]] - mesh.vertices[tri[1]]));
    CHECK((mid - expect).norm() < 1e-15);
  }
  CHECK_THROWS_AS(pseudo_gt_deformation(*rig, mesh, -1, Vec3(1, 0, 0)), std::out_of_range);
}
