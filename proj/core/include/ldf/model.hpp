#pragma once

#include "ldf/attention.hpp"
#include "ldf/autodiff.hpp"
#include "ldf/encoding.hpp"
#include "ldf/fields.hpp"
#include "ldf/render.hpp"
#include "ldf/rig.hpp"
#include "ldf/volume.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace ldf {

enum class Variant { Full, NoMask, NoLocalLoss, GlobalField, K5 };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct ModelConfig {
  int n_freqs = 10;
  int pose_code_dim = 32;
  int app_code_dim = 16;
  int hidden = 40;
  WeightLaw law;
  double mask_quantile = 0.25;
  VolumeConfig volume;
};

/// Everything needed to evaluate the avatar for one frame, independent of
/// any tape.
struct FrameCondition {
  std::vector<double> expression;
  std::array<double, 6> pose{};
  ad::Matrix pose_code;  // 1×pose_code_dim
  ad::Matrix app_code;   // 1×app_code_dim
  /// Per-field expression overrides (see FrameContext::field_expressions).
  std::vector<std::vector<double>> field_expressions;
};

/// Deformation model + canonical volume + per-training-frame latent codes.
class AvatarModel {
 public:
  AvatarModel(std::shared_ptr<const BlendshapeRig> rig, Variant variant, ModelConfig config, int num_train_frames,
              std::uint64_t seed);

  /// Deformed landmark positions used to centre the fields for (e, pose).
  std::vector<Vec3> field_landmarks(std::span<const double> expression, const std::array<double, 6>& pose) const;

  FrameContext context(const std::vector<double>& expression, const std::array<double, 6>& pose,
                       std::vector<Vec3> landmarks, ad::Var pose_code,
                       std::vector<std::vector<double>> field_expressions = {}) const;

  /// Rows of the learnable per-frame code tables.
  ad::Var pose_code(ad::Tape& tape, int train_index) const;
  ad::Var app_code(ad::Tape& tape, int train_index) const;

  /// Warp (unless `identity_warp`) then query the canonical volume.
  FieldOutput evaluate(ad::Tape& tape, const SampleBatch& batch, const FrameContext& ctx, ad::Var app_code,
                       bool identity_warp = false, const QueryOptions& options = {}) const;

  /// x_can for observed points.
  ad::Var warp(ad::Tape& tape, ad::Var x_obs, const FrameContext& ctx) const;

  EncodingConfig encoding() const { return {config_.n_freqs, encoding_alpha_}; }
  void set_encoding_alpha(double alpha) { encoding_alpha_ = alpha; }
  double encoding_alpha() const { return encoding_alpha_; }

  std::vector<ad::Parameter*> parameters();
  std::vector<ad::Parameter*> deformation_parameters() { return deformation_->parameters(); }
  std::vector<ad::Parameter*> volume_parameters() { return volume_.parameters(); }
  std::vector<ad::Parameter*> code_parameters() { return {&pose_codes_, &app_codes_}; }

  const BlendshapeRig& rig() const { return *rig_; }
  const BlendshapeRig& field_rig() const { return *field_rig_; }
  std::shared_ptr<const BlendshapeRig> rig_ptr() const { return rig_; }
  Variant variant() const { return variant_; }
  const ModelConfig& config() const { return config_; }
  const AttentionMask& mask() const { return mask_; }
  const DeformationModel& deformation() const { return *deformation_; }
  DeformationModel& deformation() { return *deformation_; }
  /// Non-null for every variant except GlobalField.
  const FieldEnsemble* ensemble() const { return dynamic_cast<const FieldEnsemble*>(deformation_.get()); }
  FieldEnsemble* ensemble() { return dynamic_cast<FieldEnsemble*>(deformation_.get()); }
  CanonicalVolume& volume() { return volume_; }
  const CanonicalVolume& volume() const { return volume_; }
  const Eigen::AlignedBox3d& bounds() const { return bounds_; }
  int num_train_frames() const { return pose_codes_.value.rows; }
  ad::Parameter& pose_codes() { return pose_codes_; }
  ad::Parameter& app_codes() { return app_codes_; }
  const ad::Parameter& pose_codes() const { return pose_codes_; }
  const ad::Parameter& app_codes() const { return app_codes_; }

 private:
  std::shared_ptr<const BlendshapeRig> rig_;
  std::shared_ptr<const BlendshapeRig> field_rig_;
  Variant variant_;
  ModelConfig config_;
  Eigen::AlignedBox3d bounds_;
  AttentionMask mask_;
  std::unique_ptr<DeformationModel> deformation_;
  CanonicalVolume volume_;
  ad::Parameter pose_codes_;
  ad::Parameter app_codes_;
  double encoding_alpha_ = 0.0;
};

/// The avatar frozen to one frame condition, as a renderable field.
class AvatarView final : public RadianceField {
 public:
  AvatarView(const AvatarModel& model, FrameCondition condition, bool prune = true);

  FieldOutput evaluate(ad::Tape& tape, const SampleBatch& batch) const override;
  Vec3 background() const override { return model_->volume().config().background; }

 private:
  const AvatarModel* model_;
  FrameCondition condition_;
  std::vector<Vec3> landmarks_;
  std::vector<std::uint8_t> pruned_;
  bool prune_;
};

}  // namespace ldf
