#pragma once

#include "ldf/attention.hpp"
#include "ldf/autodiff.hpp"
#include "ldf/encoding.hpp"
#include "ldf/mlp.hpp"
#include "ldf/rig.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

namespace ldf {

/// Thresholded Gaussian spatial weight W(x) = max(exp(−‖x‖²/2R²) − τ, 0)·s.
struct WeightLaw {
  double radius = 0.03;     // R
  double threshold = 1e-4;  // τ
  double scale = 0.02;      // s

  double operator()(const Vec3& offset) const;
  /// ‖x‖ beyond which W is exactly zero: R·√(2 ln(1/τ)).
  double cutoff_radius() const;
};

double local_weight(const Vec3& offset, const WeightLaw& law);
/// N×3 offsets → N×1 weights, differentiable w.r.t. the offsets.
ad::Var local_weight(ad::Var offsets, const WeightLaw& law);

/// Per-frame conditioning shared by every field.
struct FrameContext {
  std::vector<double> expression;
  /// Head rotation (axis-angle) then jaw (axis-angle).
  std::array<double, 6> pose{};
  /// 1×32 deformation code on the current tape.
  ad::Var pose_code;
  /// Deformed landmark positions c_l for this frame.
  std::vector<Vec3> landmarks;
  /// Optional per-field expression replacing `expression` for that field;
  /// empty, or one (possibly empty) vector per field.
  std::vector<std::vector<double>> field_expressions;
};

/// 3-layer MLP: [γ(x) | condition] → hidden → hidden → 3, LeakyReLU after
/// the first two layers. The first layer is stored split by input block so
/// a per-frame condition row is multiplied once, not once per point.
class LocalField {
 public:
  LocalField() = default;
  LocalField(const std::string& prefix, int encoded_size, int condition_size, int hidden,
             std::mt19937_64& rng);

  /// `encoded` is n×encoded_size, `condition` 1×condition_size; returns n×3.
  ad::Var forward(ad::Tape& tape, ad::Var encoded, ad::Var condition) const;

  std::vector<ad::Parameter*> parameters();
  std::size_t parameter_count() const;
  int hidden() const { return hidden_; }

 private:
  int hidden_ = 0;
  ad::Parameter w1_pos_;
  ad::Parameter w1_cond_;
  ad::Parameter b1_;
  Linear layer2_;
  Linear layer3_;
};

/// Maps observed points to observed→canonical translations.
class DeformationModel {
 public:
  virtual ~DeformationModel() = default;
  /// t for each row of the N×3 observed positions.
  virtual ad::Var deform(ad::Tape& tape, ad::Var x_obs, const FrameContext& ctx,
                         const EncodingConfig& enc) const = 0;
  virtual std::vector<ad::Parameter*> parameters() = 0;
  virtual std::size_t parameter_count() const = 0;
};

struct WarpResult {
  ad::Var t;
  ad::Var x_can;
};

/// x_can = t(x_obs) + x_obs.
WarpResult warp(const DeformationModel& model, ad::Tape& tape, ad::Var x_obs, const FrameContext& ctx,
                const EncodingConfig& enc);

/// One field per landmark, blended by the weight law. Points outside a
/// field's cutoff ball never reach its MLP.
class FieldEnsemble final : public DeformationModel {
 public:
  FieldEnsemble(std::vector<Vec3> canonical_landmarks, AttentionMask mask, WeightLaw law, int n_freqs,
                int pose_code_dim, int hidden, std::uint64_t seed);

  ad::Var deform(ad::Tape& tape, ad::Var x_obs, const FrameContext& ctx,
                 const EncodingConfig& enc) const override;

  /// t_l = MLP_l(γ(x − c_l), e∘A_l, pose, ω^p) + (canonical c_l − deformed c_l)
  /// for every row of `x_obs` (no cutoff applied).
  ad::Var local_deform(ad::Tape& tape, int l, ad::Var x_obs, const FrameContext& ctx,
                       const EncodingConfig& enc) const;

  /// [e∘A_l, pose, ω^p] as a 1×(E+6+code) row.
  ad::Var condition(ad::Tape& tape, int l, const FrameContext& ctx) const;

  std::vector<ad::Parameter*> parameters() override;
  std::size_t parameter_count() const override;

  int size() const { return static_cast<int>(fields_.size()); }
  const WeightLaw& law() const { return law_; }
  const AttentionMask& mask() const { return mask_; }
  const std::vector<Vec3>& canonical_landmarks() const { return canonical_; }
  LocalField& field(int l) { return fields_[l]; }
  const LocalField& field(int l) const { return fields_[l]; }
  int n_freqs() const { return n_freqs_; }

 private:
  std::vector<Vec3> canonical_;
  AttentionMask mask_;
  WeightLaw law_;
  int n_freqs_;
  std::vector<LocalField> fields_;
};

/// Single unmasked field on γ(x_obs); the ablation baseline.
class GlobalField final : public DeformationModel {
 public:
  GlobalField(int num_expressions, int n_freqs, int pose_code_dim, int hidden, std::uint64_t seed);

  /// Hidden width whose parameter count best matches `target`.
  static int matched_hidden(std::size_t target, int encoded_size, int condition_size);

  ad::Var deform(ad::Tape& tape, ad::Var x_obs, const FrameContext& ctx,
                 const EncodingConfig& enc) const override;
  std::vector<ad::Parameter*> parameters() override;
  std::size_t parameter_count() const override;

 private:
  int n_freqs_;
  LocalField mlp_;
};

}  // namespace ldf
