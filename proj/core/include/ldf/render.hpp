#pragma once

#include "ldf/autodiff.hpp"
#include "ldf/rig.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace ldf {

/// Pinhole camera, OpenCV convention (x right, y down, z forward). Pixel
/// (u, v) covers [u, u+1) × [v, v+1); its centre is (u + 0.5, v + 0.5).
struct Camera {
  int width = 0;
  int height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  /// World → camera.
  Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();

  Vec3 center() const;
  /// Unit ray direction (world) through continuous pixel coordinates.
  Vec3 direction(double px, double py) const;
  /// Continuous pixel coordinates of a world point, empty if behind the camera.
  std::optional<Eigen::Vector2d> project(const Vec3& world) const;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double near = 0.0;
  double far = 0.0;
  /// False when the ray misses the render bounds; such rays show background.
  bool hit = false;
};

/// Clips [near, far] to the slab intersection with `box` (near ≥ 0).
bool clip_to_box(Ray& ray, const Eigen::AlignedBox3d& box);

/// Rays through pixel centres, clipped to `bounds`.
std::vector<Ray> generate_rays(const Camera& camera, std::span<const Eigen::Vector2i> pixels,
                               const Eigen::AlignedBox3d& bounds);

struct RaySample {
  std::vector<double> depths;
  std::vector<double> deltas;
  std::vector<Vec3> positions;
};

/// S depths in [near, far]: bin midpoints, or one uniform draw per bin when
/// `stratified`. deltas are successive differences, the last one far − last depth.
RaySample sample_points(const Ray& ray, int samples, bool stratified, std::mt19937_64* rng = nullptr);

struct CompositeResult {
  Vec3 rgb = Vec3::Zero();
  double alpha = 0.0;
  double depth = 0.0;
  double transmittance = 1.0;
  std::vector<double> weights;
};

/// Scalar reference compositor for one ray.
CompositeResult composite(std::span<const double> sigmas, std::span<const Vec3> rgbs,
                          std::span<const double> deltas, std::span<const double> depths,
                          const Vec3& background);

constexpr double kDepthAlphaFloor = 1e-8;

struct CompositeBatch {
  ad::Var rgb;    // R×3
  ad::Var alpha;  // R×1
  ad::Var depth;  // R×1, alpha-normalised
  /// Rendering weights (R×S) and final transmittance (R×1), values only.
  ad::Matrix weights;
  ad::Matrix transmittance;
};

/// Differentiable compositing of R rays with S samples each. `sigma` is
/// (R·S)×1 and `rgb` (R·S)×3, ray-major; `deltas` and `depths` are R×S.
CompositeBatch composite(ad::Var sigma, ad::Var rgb, const ad::Matrix& deltas, const ad::Matrix& depths,
                         const Vec3& background);

/// 1 where weight > threshold.
std::vector<std::uint8_t> surface_mask(std::span<const double> weights, double threshold = 1e-4);

/// Observed-space sample points handed to a radiance field.
struct SampleBatch {
  ad::Var positions;       // N×3
  ad::Matrix directions;   // N×3, unit
};

struct FieldOutput {
  ad::Var sigma;  // N×1
  ad::Var rgb;    // N×3
  /// Deformation t and warped points when the field warps; otherwise invalid.
  ad::Var t;
  ad::Var x_can;
};

/// Anything that yields density and colour at observed-space points.
/// evaluate() must be safe to call concurrently on distinct inference tapes.
class RadianceField {
 public:
  virtual ~RadianceField() = default;
  virtual FieldOutput evaluate(ad::Tape& tape, const SampleBatch& batch) const = 0;
  virtual Vec3 background() const = 0;
};

struct RenderOptions {
  int samples = 128;
  bool stratified = false;
  std::uint64_t seed = 0;
  int chunk_rays = 2048;
  int threads = 1;
};

struct RenderedImage {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;    // H·W·3, row-major
  std::vector<double> alpha;  // H·W
  std::vector<double> depth;  // H·W
};

/// Renders every pixel; rays are processed in chunks on inference tapes.
RenderedImage render_image(const RadianceField& field, const Camera& camera, const Eigen::AlignedBox3d& bounds,
                           const RenderOptions& options = {});

/// Renders the given pixels only (same layout as RenderedImage but 1×N).
RenderedImage render_pixels(const RadianceField& field, const Camera& camera, const Eigen::AlignedBox3d& bounds,
                            std::span<const Eigen::Vector2i> pixels, const RenderOptions& options = {});

/// SplitMix64-style combination of two seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Render bounds: `box` scaled about its centre by 1 + `inflate`.
Eigen::AlignedBox3d inflate_box(const Eigen::AlignedBox3d& box, double inflate = 0.2);

}  // namespace ldf
