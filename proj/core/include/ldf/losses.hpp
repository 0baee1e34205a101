#pragma once

#include "ldf/autodiff.hpp"
#include "ldf/render.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace ldf {

struct LossWeights {
  double local = 0.01;
  double mesh = 0.01;
  double def = 0.5;
  double code = 0.01;
  double vol = 2e-4;
  /// λ_vol once the grid has been upsampled.
  double vol_after_upsample = 6e-4;
};

/// Mean over pixels of the per-pixel ℓ2 norm of the RGB residual.
ad::Var rgb_loss(ad::Var rendered, const ad::Matrix& measured);

/// Mean over mask-active rows of ‖t − target‖₂; 0 when no row is active.
ad::Var mesh_prior_loss(ad::Var t, const ad::Matrix& targets, std::span<const std::uint8_t> active);

constexpr double kForegroundWeight = 1.0;
constexpr double kBackgroundWeight = 100.0;

/// Mean over all rows of lut(fg)·‖t‖₂ with lut = {1 foreground, 100 background}.
ad::Var deformation_reg(ad::Var t, std::span<const std::uint8_t> foreground);

/// Mean activated density.
ad::Var volume_sparsity(ad::Var sigma);

/// ‖(ω^p, ω^a)‖₂.
ad::Var code_reg(ad::Var pose_code, ad::Var app_code);

/// One frame as seen by the local control loss.
struct FrameProbe {
  Vec3 camera_center = Vec3::Zero();
  /// Deformed landmark positions (observed space).
  std::vector<Vec3> landmarks;
  /// Observed samples → density, colour.
  std::function<FieldOutput(ad::Tape&, const SampleBatch&)> evaluate;
  /// Observed points (N×3) → canonical points.
  std::function<ad::Var(ad::Tape&, ad::Var)> warp;
  Vec3 background = Vec3::Ones();
};

struct LocalControlOptions {
  int samples = 64;
  Eigen::AlignedBox3d bounds;
};

/// Expected-depth intersections of camera→landmark rays (one row per
/// landmark id), warped to canonical space. `valid[i]` is 0 when the ray
/// misses the bounds; those rows are zero.
ad::Var landmark_intersections(ad::Tape& tape, const FrameProbe& frame, std::span<const int> landmark_ids,
                               const LocalControlOptions& options, std::vector<std::uint8_t>* valid = nullptr);

/// Σ over landmarks of ‖x̂_a − x̂_b‖₁ between canonical intersections.
ad::Var local_control_loss(ad::Tape& tape, const FrameProbe& a, const FrameProbe& b,
                           std::span<const int> landmark_ids, const LocalControlOptions& options);

/// Loss terms of one iteration; unset terms count as zero.
struct LossParts {
  ad::Var rgb, local, mesh, def, vol, code;
};

ad::Var total_loss(ad::Tape& tape, const LossParts& parts, const LossWeights& weights, bool upsampled);

}  // namespace ldf
