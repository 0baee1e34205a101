#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ldf {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

/// Synthetic linear blendshape head. Canonical space is the rig's own frame:
/// +x toward the subject's left, +y up, +z out of the face.
struct BlendshapeRig {
  std::uint64_t seed = 0;
  std::vector<Vec3> vertices_mean;
  std::vector<Face> faces;
  int num_expressions = 0;
  /// Displacement of vertex v along `axis` per unit of coefficient k, stored
  /// at ((v * 3) + axis) * num_expressions + k.
  std::vector<double> expr_bases;
  Vec3 jaw_pivot = Vec3::Zero();
  std::vector<double> jaw_region_weights;
  std::vector<int> landmark_vertex_ids;
  /// Facial region of each landmark ("eye_l", "brow_r", "mouth", ...).
  std::vector<std::string> landmark_tags;
  std::vector<Vec3> vertex_colors;
  std::vector<std::string> expression_names;
  /// +1: support only on x > 0, -1: only on x < 0, 0: either side.
  std::vector<int> expression_sides;

  int num_vertices() const { return static_cast<int>(vertices_mean.size()); }
  int num_faces() const { return static_cast<int>(faces.size()); }
  int num_landmarks() const { return static_cast<int>(landmark_vertex_ids.size()); }

  double basis(int v, int axis, int k) const {
    return expr_bases[(static_cast<std::size_t>(v) * 3 + axis) * num_expressions + k];
  }
  Vec3 basis_vector(int v, int k) const { return {basis(v, 0, k), basis(v, 1, k), basis(v, 2, k)}; }

  /// Landmark positions on the mean shape (zero expression, zero jaw).
  std::vector<Vec3> canonical_landmarks() const;
  Eigen::AlignedBox3d bounding_box() const;
  double mean_edge_length() const;
};

/// Deformed mesh for one (expression, jaw) state.
struct MeshState {
  std::vector<Vec3> vertices;
  std::vector<double> source_expression;
  Vec3 source_jaw = Vec3::Zero();
};

struct SurfacePoint {
  Vec3 position = Vec3::Zero();
  int face_id = -1;
  Vec3 barycentric = Vec3::Zero();
  double distance = 0.0;
};

/// Builds the synthetic head. `num_vertices` must be an icosphere vertex count
/// (10·4^k + 2, at least 642); `num_landmarks` is 5 or 34. Deterministic in
/// `seed`; the landmark count only changes the landmark set.
BlendshapeRig generate_rig(std::uint64_t seed, int num_vertices = 642, int num_expressions = 16,
                           int num_landmarks = 34);

/// Linear blend of the expression bases followed by the weighted jaw rotation
/// (axis-angle `jaw`) about jaw_pivot.
MeshState deform_mesh(const BlendshapeRig& rig, std::span<const double> expression,
                      const Vec3& jaw = Vec3::Zero());

/// Landmark positions of a deformed mesh.
std::vector<Vec3> mesh_landmarks(const BlendshapeRig& rig, const MeshState& mesh);

/// Closest point on one triangle with its barycentric coordinates.
SurfacePoint closest_point_on_triangle(const Vec3& x, const Vec3& a, const Vec3& b, const Vec3& c);

/// Brute-force closest point over every face of the deformed mesh.
SurfacePoint closest_surface_point(const BlendshapeRig& rig, const MeshState& mesh, const Vec3& x);

/// Same query with per-face bounding spheres to skip far triangles. Results
/// are identical to closest_surface_point up to ties.
class MeshProximity {
 public:
  MeshProximity(const BlendshapeRig& rig, const MeshState& mesh);
  SurfacePoint closest(const Vec3& x) const;

 private:
  const BlendshapeRig* rig_;
  const MeshState* mesh_;
  std::vector<Vec3> centers_;
  std::vector<double> radii_;
};

/// Barycentric blend of (canonical − deformed) vertex deltas on `face_id`:
/// the observed→canonical translation implied by the tracked mesh.
Vec3 pseudo_gt_deformation(const BlendshapeRig& rig, const MeshState& mesh, int face_id,
                           const Vec3& barycentric);

/// Rotation matrix of an axis-angle vector.
Eigen::Matrix3d axis_angle(const Vec3& v);

}  // namespace ldf
