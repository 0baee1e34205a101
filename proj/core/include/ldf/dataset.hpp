#pragma once

#include "ldf/image.hpp"
#include "ldf/render.hpp"
#include "ldf/rig.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ldf {

enum class Split { Train, TestIn, TestAsym };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct TrackedFrame {
  int frame_id = 0;
  Split split = Split::Train;
  std::vector<double> expression;
  /// Head rotation (axis-angle) then jaw (axis-angle), radians.
  std::array<double, 6> pose{};
  /// Intrinsics and size come from the dataset; extrinsics already include
  /// the head rotation, so the head is rendered in its own frame.
  Camera camera;
  std::vector<Vec3> landmarks;
  Image8 image;
  /// 1 where ground-truth alpha > 0.5.
  std::vector<std::uint8_t> fg_mask;

  Vec3 head_rotation() const { return {pose[0], pose[1], pose[2]}; }
  Vec3 jaw() const { return {pose[3], pose[4], pose[5]}; }
};

/// Sum of isotropic Gaussian density blobs on the vertices of a deformed
/// mesh, coloured by blob-weighted vertex colour.
class BlobField final : public RadianceField {
 public:
  BlobField(const BlendshapeRig& rig, const MeshState& mesh, Vec3 background = Vec3::Ones());

  FieldOutput evaluate(ad::Tape& tape, const SampleBatch& batch) const override;
  Vec3 background() const override { return background_; }

  double density(const Vec3& x) const;
  double radius() const { return radius_; }
  double gain() const { return gain_; }

 private:
  void accumulate(const Vec3& x, double& sigma, Vec3& color) const;

  const BlendshapeRig* rig_;
  std::vector<Vec3> centers_;
  Vec3 background_;
  double radius_;
  double gain_;
  double cutoff_;
  // Uniform hash grid with cell size = cutoff.
  Vec3 origin_;
  int dims_[3] = {1, 1, 1};
  std::vector<int> cell_start_;
  std::vector<int> cell_items_;
};

/// Base camera at distance `distance` on +z looking at the origin.
Camera default_camera(int width, int height, double distance = 2.0);

/// Base extrinsics composed with a head rotation.
Camera posed_camera(const Camera& base, const Vec3& head_rotation);

struct CameraScript {
  Camera base;
  std::vector<Vec3> head_rotations;
};

struct ExpressionScript {
  std::vector<std::vector<double>> expressions;
  std::vector<Vec3> jaws;
};

/// Smooth head motion: yaw/pitch/roll sinusoids.
CameraScript make_camera_script(const Camera& base, int frames, std::uint64_t seed);

/// Training and in-distribution scripts tie each left/right basis pair to a
/// common value. The asymmetric script activates one one-sided basis at a time.
ExpressionScript make_expression_script(const BlendshapeRig& rig, Split split, int frames, std::uint64_t seed);

struct SynthesisOptions {
  int gt_samples = 128;
  int threads = 1;
  Vec3 background = Vec3::Ones();
  Split split = Split::Train;
  int first_frame_id = 0;
};

/// Largest per-frame change allowed in a script.
constexpr double kMaxExpressionStep = 0.35;
constexpr double kMaxRotationStep = 0.15;

/// Renders ground truth for every script frame. Rejects mismatched or jumpy
/// scripts and camera paths that never see the head.
std::vector<TrackedFrame> synthesize_sequence(const BlendshapeRig& rig, const CameraScript& cameras,
                                              const ExpressionScript& expressions,
                                              const SynthesisOptions& options = {});

struct DatasetInfo {
  std::uint64_t rig_seed = 1;
  int num_vertices = 2562;
  int num_expressions = 16;
  int num_landmarks = 34;
  int width = 128;
  int height = 128;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int gt_samples = 128;
  Vec3 background = Vec3::Ones();
};

struct Dataset {
  DatasetInfo info;
  std::vector<TrackedFrame> frames;

  std::vector<const TrackedFrame*> split(Split s) const;
  Eigen::AlignedBox3d bounds(const BlendshapeRig& rig) const;
};

/// Population standard deviation of each expression coefficient.
std::vector<double> expression_std(const std::vector<const TrackedFrame*>& frames);

struct SynthConfig {
  DatasetInfo info;
  int train_frames = 300;
  int test_in_frames = 30;
  int test_asym_frames = 30;
  std::uint64_t seed = 7;
  int threads = 1;
};

/// Full synthetic dataset (train + both test splits) for one rig.
Dataset synthesize_dataset(const BlendshapeRig& rig, const SynthConfig& config);

/// Writes `manifest` plus frames/NNNNNN{.png,_mask.png,.txt}.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Shortest round-trip decimal text for a double.
std::string format_double(double v);
double parse_double(const std::string& text);

}  // namespace ldf
