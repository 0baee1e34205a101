#include "ldf/rig.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace ldf {

namespace {

const Vec3 kHeadRadii{0.27, 0.34, 0.30};

struct Icosphere {
  std::vector<Vec3> dirs;
  std::vector<Face> faces;
};

Icosphere make_icosphere(int levels) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  Icosphere s;
  s.dirs = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
            {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (Vec3& d : s.dirs) d.normalize();
  s.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int level = 0; level < levels; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
      s.dirs.push_back((s.dirs[a] + s.dirs[b]).normalized());
      const int id = static_cast<int>(s.dirs.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(s.faces.size() * 4);
    for (const Face& f : s.faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    s.faces = std::move(next);
  }
  return s;
}

Vec3 dir(double x, double y, double z) { return Vec3(x, y, z).normalized(); }
Vec3 mirror(const Vec3& d) { return {-d.x(), d.y(), d.z()}; }

/// Mean head surface point for a unit direction: an ellipsoid with a nose.
Vec3 head_surface(const Vec3& d) {
  Vec3 p = d.cwiseProduct(kHeadRadii);
  const Vec3 nose = dir(0.0, -0.05, 1.0);
  const double nd = (d - nose).squaredNorm();
  p.z() += 0.07 * std::exp(-nd / (2.0 * 0.09 * 0.09));
  return p;
}

Vec3 ellipsoid_normal(const Vec3& p) {
  return Vec3(p.x() / (kHeadRadii.x() * kHeadRadii.x()), p.y() / (kHeadRadii.y() * kHeadRadii.y()),
              p.z() / (kHeadRadii.z() * kHeadRadii.z()))
      .normalized();
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

enum class Motion { Fixed, Outward, Lateral, Inward };

struct BasisSpec {
  std::string name;
  Vec3 center;  // unit direction
  double radius;
  Motion motion;
  Vec3 direction;  // for Fixed; scaled by magnitude
  double magnitude;
  int side;
};

std::vector<BasisSpec> base_expressions() {
  std::vector<BasisSpec> out;
  auto pair = [&](const std::string& name, Vec3 c, double r, Motion m, Vec3 d, double mag) {
    out.push_back({name + "_l", c, r, m, d, mag, +1});
    Vec3 dm = d;
    dm.x() = -dm.x();
    out.push_back({name + "_r", mirror(c), r, m, dm, mag, -1});
  };
  pair("brow_raise", dir(0.34, 0.42, 0.84), 0.22, Motion::Fixed, {0.0, 1.0, 0.1}, 0.045);
  pair("eye_close", dir(0.34, 0.24, 0.91), 0.15, Motion::Fixed, {0.0, -1.0, 0.15}, 0.04);
  pair("smile", dir(0.25, -0.43, 0.87), 0.2, Motion::Fixed, {0.5, 0.8, 0.0}, 0.05);
  pair("cheek_puff", dir(0.52, -0.15, 0.84), 0.24, Motion::Outward, Vec3::Zero(), 0.04);
  out.push_back({"lip_pucker", dir(0.0, -0.45, 0.89), 0.2, Motion::Fixed, {0, 0, 1}, 0.05, 0});
  out.push_back({"upper_lip_raise", dir(0.0, -0.36, 0.93), 0.13, Motion::Fixed, {0, 1, 0}, 0.03, 0});
  out.push_back({"lower_lip_drop", dir(0.0, -0.54, 0.84), 0.13, Motion::Fixed, {0, -1, 0}, 0.035, 0});
  out.push_back({"mouth_stretch", dir(0.0, -0.45, 0.89), 0.32, Motion::Lateral, Vec3::Zero(), 0.04, 0});
  out.push_back({"nose_wrinkle", dir(0.0, 0.05, 1.0), 0.15, Motion::Fixed, {0, 1, 0}, 0.025, 0});
  out.push_back({"brow_furrow", dir(0.0, 0.38, 0.92), 0.22, Motion::Inward, Vec3::Zero(), 0.03, 0});
  out.push_back({"chin_raise", dir(0.0, -0.72, 0.69), 0.2, Motion::Fixed, {0, 1, 0.3}, 0.03, 0});
  out.push_back({"jaw_slide", dir(0.0, -0.62, 0.78), 0.35, Motion::Fixed, {1, 0, 0}, 0.03, 0});
  return out;
}

struct LandmarkSpec {
  Vec3 target;
  std::string tag;
};

std::vector<LandmarkSpec> landmark_specs(int count) {
  std::vector<LandmarkSpec> out;
  auto both = [&](Vec3 d, const std::string& tag) {
    out.push_back({d, tag + "_l"});
    out.push_back({mirror(d), tag + "_r"});
  };
  if (count == 5) {
    both(dir(0.34, 0.18, 0.92), "eye");
    out.push_back({dir(0.0, -0.05, 1.0), "nose"});
    both(dir(0.25, -0.45, 0.86), "mouth");
    return out;
  }
  both(dir(0.2, 0.40, 0.89), "brow");
  both(dir(0.34, 0.42, 0.84), "brow");
  both(dir(0.48, 0.37, 0.80), "brow");
  both(dir(0.22, 0.18, 0.96), "eye");
  both(dir(0.46, 0.17, 0.87), "eye");
  both(dir(0.34, 0.25, 0.91), "eye");
  both(dir(0.34, 0.11, 0.93), "eye");
  out.push_back({dir(0.0, 0.2, 0.98), "nose"});
  out.push_back({dir(0.0, -0.05, 1.0), "nose"});
  both(dir(0.1, -0.12, 0.99), "nose");
  both(dir(0.25, -0.45, 0.86), "mouth");
  out.push_back({dir(0.0, -0.38, 0.92), "mouth"});
  both(dir(0.12, -0.39, 0.91), "mouth");
  out.push_back({dir(0.0, -0.53, 0.85), "mouth"});
  both(dir(0.12, -0.52, 0.85), "mouth");
  out.push_back({dir(0.0, -0.78, 0.62), "jaw"});
  both(dir(0.45, -0.62, 0.64), "jaw");
  both(dir(0.7, -0.35, 0.62), "jaw");
  both(dir(0.55, -0.1, 0.83), "cheek");
  out.push_back({dir(0.0, 0.55, 0.83), "forehead"});
  return out;
}

Vec3 vertex_color(const Vec3& d, const Vec3& skin) {
  const Vec3 hair(0.22, 0.14, 0.09);
  if (d.y() > 0.6 || d.z() < -0.25) return hair;
  for (int s : {1, -1}) {
    const Vec3 brow = dir(0.34 * s, 0.42, 0.84);
    if ((d - brow).norm() < 0.11 && std::abs(d.y() - brow.y()) < 0.05) return {0.28, 0.18, 0.11};
    const double de = (d - dir(0.34 * s, 0.18, 0.92)).norm();
    if (de < 0.06) return {0.12, 0.10, 0.10};
    if (de < 0.11) return {0.95, 0.95, 0.93};
  }
  const double mouth_y = dir(0.0, -0.45, 0.89).y();
  if (std::abs(d.x()) < 0.24 && d.z() > 0.0) {
    const double dy = std::abs(d.y() - mouth_y);
    if (dy < 0.015) return {0.40, 0.10, 0.12};
    if (dy < 0.07) return {0.72, 0.28, 0.30};
  }
  if ((d - dir(0.0, -0.05, 1.0)).norm() < 0.08) return {skin.x() * 0.97 + 0.03, skin.y() * 0.9, skin.z() * 0.9};
  return skin;
}

}  // namespace

Eigen::Matrix3d axis_angle(const Vec3& v) {
  const double angle = v.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, v / angle).toRotationMatrix();
}

std::vector<Vec3> BlendshapeRig::canonical_landmarks() const {
  std::vector<Vec3> out;
  out.reserve(landmark_vertex_ids.size());
  for (int id : landmark_vertex_ids) out.push_back(vertices_mean[id]);
  return out;
}

Eigen::AlignedBox3d BlendshapeRig::bounding_box() const {
  Eigen::AlignedBox3d box;
  for (const Vec3& v : vertices_mean) box.extend(v);
  return box;
}

double BlendshapeRig::mean_edge_length() const {
  double total = 0.0;
  for (const Face& f : faces)
    for (int i = 0; i < 3; ++i) total += (vertices_mean[f[i]] - vertices_mean[f[(i + 1) % 3]]).norm();
  return faces.empty() ? 0.0 : total / (3.0 * static_cast<double>(faces.size()));
}

BlendshapeRig generate_rig(std::uint64_t seed, int num_vertices, int num_expressions, int num_landmarks) {
  if (num_vertices < 200) throw std::invalid_argument("generate_rig: need at least 200 vertices");
  if (num_expressions < 10) throw std::invalid_argument("generate_rig: need at least 10 expressions");
  if (num_landmarks != 5 && num_landmarks != 34)
    throw std::invalid_argument("generate_rig: landmark count must be 5 or 34");
  int levels = -1;
  for (int l = 0; l < 8; ++l)
    if (10 * (1 << (2 * l)) + 2 == num_vertices) levels = l;
  if (levels < 0)
    throw std::invalid_argument("generate_rig: vertex count must be an icosphere size (642, 2562, 10242, ...)");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  const Icosphere sphere = make_icosphere(levels);
  BlendshapeRig rig;
  rig.seed = seed;
  rig.faces = sphere.faces;
  rig.num_expressions = num_expressions;
  const int V = static_cast<int>(sphere.dirs.size());
  rig.vertices_mean.reserve(V);
  for (const Vec3& d : sphere.dirs) rig.vertices_mean.push_back(head_surface(d));

  const Vec3 skin = Vec3(0.86, 0.66, 0.55) + 0.03 * Vec3(unit(rng), unit(rng), unit(rng));
  rig.vertex_colors.reserve(V);
  for (const Vec3& d : sphere.dirs) {
    Vec3 c = vertex_color(d, skin) + 0.01 * Vec3(unit(rng), unit(rng), unit(rng));
    rig.vertex_colors.push_back(c.cwiseMax(0.0).cwiseMin(1.0));
  }

  // Expression bases: the fixed facial set first, then seeded extras that
  // alternate sides so at least a third stay one-sided for any E.
  std::vector<BasisSpec> specs = base_expressions();
  for (std::size_t i = 0; i + 1 < specs.size(); ++i) {
    if (specs[i].side == 1 && specs[i + 1].side == -1) {
      const double jitter = 1.0 + 0.1 * unit(rng);
      specs[i].magnitude *= jitter;
      specs[i + 1].magnitude *= jitter;
      ++i;
    } else {
      specs[i].magnitude *= 1.0 + 0.1 * unit(rng);
    }
  }
  for (int k = static_cast<int>(specs.size()); k < num_expressions; ++k) {
    const int side = (k % 2 == 0) ? 1 : -1;
    const Vec3 c = dir(side * (0.15 + 0.35 * std::abs(unit(rng))), 0.5 * unit(rng), 0.8);
    const Vec3 d = Vec3(unit(rng), unit(rng), unit(rng)).normalized();
    specs.push_back({"extra_" + std::to_string(k), c, 0.15 + 0.05 * std::abs(unit(rng)), Motion::Fixed, d,
                     0.03, side});
  }
  specs.resize(static_cast<std::size_t>(num_expressions));

  rig.expr_bases.assign(static_cast<std::size_t>(V) * 3 * num_expressions, 0.0);
  for (int k = 0; k < num_expressions; ++k) {
    const BasisSpec& b = specs[k];
    rig.expression_names.push_back(b.name);
    rig.expression_sides.push_back(b.side);
    for (int v = 0; v < V; ++v) {
      const Vec3& p = rig.vertices_mean[v];
      if (b.side > 0 && !(p.x() > 0.0)) continue;
      if (b.side < 0 && !(p.x() < 0.0)) continue;
      const double dist = (sphere.dirs[v] - b.center).norm();
      if (dist >= b.radius) continue;
      const double q = 1.0 - (dist / b.radius) * (dist / b.radius);
      const double falloff = q * q;
      Vec3 motion;
      switch (b.motion) {
        case Motion::Fixed: motion = b.direction.normalized(); break;
        case Motion::Outward: motion = ellipsoid_normal(p); break;
        case Motion::Lateral: motion = Vec3(p.x() > 0 ? 1.0 : (p.x() < 0 ? -1.0 : 0.0), 0, 0); break;
        case Motion::Inward: motion = Vec3(p.x() > 0 ? -1.0 : (p.x() < 0 ? 1.0 : 0.0), -0.3, 0); break;
      }
      const Vec3 delta = b.magnitude * falloff * motion;
      for (int a = 0; a < 3; ++a)
        rig.expr_bases[(static_cast<std::size_t>(v) * 3 + a) * num_expressions + k] = delta[a];
    }
  }

  rig.jaw_pivot = Vec3(0.0, -0.03, -0.06);
  rig.jaw_region_weights.reserve(V);
  for (const Vec3& p : rig.vertices_mean)
    rig.jaw_region_weights.push_back(smoothstep(-0.15, -0.25, p.y()) * smoothstep(-0.05, 0.12, p.z()));

  // Landmarks: nearest unused vertex to each semantic target direction.
  std::vector<bool> used(static_cast<std::size_t>(V), false);
  for (const LandmarkSpec& spec : landmark_specs(num_landmarks)) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int v = 0; v < V; ++v) {
      if (used[v]) continue;
      const double d = (sphere.dirs[v] - spec.target).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = v;
      }
    }
    used[best] = true;
    rig.landmark_vertex_ids.push_back(best);
    rig.landmark_tags.push_back(spec.tag);
  }
  return rig;
}

MeshState deform_mesh(const BlendshapeRig& rig, std::span<const double> expression, const Vec3& jaw) {
  const int E = rig.num_expressions;
  if (static_cast<int>(expression.size()) != E)
    throw std::invalid_argument("deform_mesh: expected " + std::to_string(E) + " coefficients, got " +
                                std::to_string(expression.size()));
  MeshState out;
  out.source_expression.assign(expression.begin(), expression.end());
  out.source_jaw = jaw;
  out.vertices = rig.vertices_mean;
  for (int v = 0; v < rig.num_vertices(); ++v) {
    Vec3& p = out.vertices[v];
    for (int a = 0; a < 3; ++a) {
      const double* row = rig.expr_bases.data() + (static_cast<std::size_t>(v) * 3 + a) * E;
      double s = 0.0;
      for (int k = 0; k < E; ++k) s += expression[k] * row[k];
      p[a] += s;
    }
  }
  if (jaw.squaredNorm() > 0.0) {
    for (int v = 0; v < rig.num_vertices(); ++v) {
      const double w = rig.jaw_region_weights[v];
      if (w == 0.0) continue;
      out.vertices[v] = rig.jaw_pivot + axis_angle(w * jaw) * (out.vertices[v] - rig.jaw_pivot);
    }
  }
  return out;
}

std::vector<Vec3> mesh_landmarks(const BlendshapeRig& rig, const MeshState& mesh) {
  std::vector<Vec3> out;
  out.reserve(rig.landmark_vertex_ids.size());
  for (int id : rig.landmark_vertex_ids) out.push_back(mesh.vertices[id]);
  return out;
}

SurfacePoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  SurfacePoint r;
  auto done = [&](double u, double v, double w) {
    r.barycentric = Vec3(u, v, w);
    r.position = u * a + v * b + w * c;
    r.distance = (p - r.position).norm();
    return r;
  };
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return done(1, 0, 0);
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return done(0, 1, 0);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return done(1 - v, v, 0);
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return done(0, 0, 1);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return done(1 - w, 0, w);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return done(0, 1 - w, w);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return done(1.0 - v - w, v, w);
}

SurfacePoint closest_surface_point(const BlendshapeRig& rig, const MeshState& mesh, const Vec3& x) {
  SurfacePoint best;
  best.distance = std::numeric_limits<double>::infinity();
  for (int f = 0; f < rig.num_faces(); ++f) {
    const Face& tri = rig.faces[f];
    SurfacePoint s =
        closest_point_on_triangle(x, mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]);
    if (s.distance < best.distance) {
      best = s;
      best.face_id = f;
    }
  }
  return best;
}

MeshProximity::MeshProximity(const BlendshapeRig& rig, const MeshState& mesh) : rig_(&rig), mesh_(&mesh) {
  centers_.reserve(rig.faces.size());
  radii_.reserve(rig.faces.size());
  for (const Face& f : rig.faces) {
    const Vec3 c = (mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0;
    double r = 0.0;
    for (int i = 0; i < 3; ++i) r = std::max(r, (mesh.vertices[f[i]] - c).norm());
    centers_.push_back(c);
    radii_.push_back(r);
  }
}

SurfacePoint MeshProximity::closest(const Vec3& x) const {
  SurfacePoint best;
  best.distance = std::numeric_limits<double>::infinity();
  for (int f = 0; f < static_cast<int>(centers_.size()); ++f) {
    // Skip faces whose bounding sphere lies beyond the current best.
    const double reach = best.distance + radii_[f];
    if ((x - centers_[f]).squaredNorm() >= reach * reach) continue;
    const Face& tri = rig_->faces[f];
    SurfacePoint s = closest_point_on_triangle(x, mesh_->vertices[tri[0]], mesh_->vertices[tri[1]],
                                               mesh_->vertices[tri[2]]);
    if (s.distance < best.distance) {
      best = s;
      best.face_id = f;
    }
  }
  return best;
}

Vec3 pseudo_gt_deformation(const BlendshapeRig& rig, const MeshState& mesh, int face_id,
                           const Vec3& barycentric) {
  if (face_id < 0 || face_id >= rig.num_faces())
    throw std::out_of_range("pseudo_gt_deformation: bad face id");
  const Face& f = rig.faces[face_id];
  Vec3 t = Vec3::Zero();
  for (int i = 0; i < 3; ++i) t += barycentric[i] * (rig.vertices_mean[f[i]] - mesh.vertices[f[i]]);
  return t;
}

}  // namespace ldf
