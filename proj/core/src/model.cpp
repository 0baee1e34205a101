#include "ldf/model.hpp"

#include <stdexcept>

namespace ldf {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoMask: return "no_mask";
    case Variant::NoLocalLoss: return "no_local_loss";
    case Variant::GlobalField: return "global_field";
    case Variant::K5: return "k5";
  }
  return "full";
}

Variant parse_variant(const std::string& text) {
  for (Variant v : {Variant::Full, Variant::NoMask, Variant::NoLocalLoss, Variant::GlobalField, Variant::K5})
    if (to_string(v) == text) return v;
  throw std::invalid_argument("unknown variant '" + text + "'");
}

namespace {

std::shared_ptr<const BlendshapeRig> make_field_rig(const std::shared_ptr<const BlendshapeRig>& rig,
                                                    Variant variant) {
  if (variant != Variant::K5 || rig->num_landmarks() == 5) return rig;
  return std::make_shared<const BlendshapeRig>(
      generate_rig(rig->seed, rig->num_vertices(), rig->num_expressions, 5));
}

AttentionMask make_mask(const BlendshapeRig& field_rig, Variant variant, double quantile) {
  if (variant == Variant::NoMask) return AttentionMask::all_ones(field_rig.num_landmarks(), field_rig.num_expressions);
  return binarize(displacement_matrix(field_rig), quantile);
}

}  // namespace

AvatarModel::AvatarModel(std::shared_ptr<const BlendshapeRig> rig, Variant variant, ModelConfig config,
                         int num_train_frames, std::uint64_t seed)
    : rig_(std::move(rig)),
      field_rig_(make_field_rig(rig_, variant)),
      variant_(variant),
      config_(config),
      bounds_(inflate_box(rig_->bounding_box())),
      mask_(make_mask(*field_rig_, variant, config.mask_quantile)),
      volume_(bounds_, config.volume, seed * 2654435761ull + 17) {
  if (num_train_frames < 1) throw std::invalid_argument("AvatarModel: need at least one training frame");
  const int E = rig_->num_expressions;
  if (variant == Variant::GlobalField) {
    const int enc = EncodingConfig{config.n_freqs, 0.0}.output_size();
    const int cond = E + 6 + config.pose_code_dim;
    // Match the full 34-field ensemble, whatever rig the dataset carries.
    std::mt19937_64 probe_rng(0);
    const std::size_t per_field = LocalField("probe", enc, cond, config.hidden, probe_rng).parameter_count();
    const int hidden = GlobalField::matched_hidden(34 * per_field, enc, cond);
    deformation_ = std::make_unique<GlobalField>(E, config.n_freqs, config.pose_code_dim, hidden, seed);
  } else {
    deformation_ = std::make_unique<FieldEnsemble>(field_rig_->canonical_landmarks(), mask_, config.law,
                                                   config.n_freqs, config.pose_code_dim, config.hidden, seed);
  }
  pose_codes_ = ad::Parameter("codes.pose", ad::Matrix(num_train_frames, config.pose_code_dim));
  app_codes_ = ad::Parameter("codes.app", ad::Matrix(num_train_frames, config.app_code_dim));
}

std::vector<Vec3> AvatarModel::field_landmarks(std::span<const double> expression,
                                               const std::array<double, 6>& pose) const {
  const MeshState mesh = deform_mesh(*field_rig_, expression, Vec3(pose[3], pose[4], pose[5]));
  return mesh_landmarks(*field_rig_, mesh);
}

FrameContext AvatarModel::context(const std::vector<double>& expression,
                                  const std::array<double, 6>& pose, std::vector<Vec3> landmarks,
                                  ad::Var pose_code, std::vector<std::vector<double>> field_expressions) const {
  FrameContext ctx;
  ctx.expression = expression;
  ctx.pose = pose;
  ctx.pose_code = pose_code;
  ctx.landmarks = std::move(landmarks);
  ctx.field_expressions = std::move(field_expressions);
  return ctx;
}

ad::Var AvatarModel::pose_code(ad::Tape& tape, int train_index) const {
  const int row[] = {train_index};
  return ad::gather_rows(tape.param(pose_codes_), row);
}

ad::Var AvatarModel::app_code(ad::Tape& tape, int train_index) const {
  const int row[] = {train_index};
  return ad::gather_rows(tape.param(app_codes_), row);
}

ad::Var AvatarModel::warp(ad::Tape& tape, ad::Var x_obs, const FrameContext& ctx) const {
  return ldf::warp(*deformation_, tape, x_obs, ctx, encoding()).x_can;
}

FieldOutput AvatarModel::evaluate(ad::Tape& tape, const SampleBatch& batch, const FrameContext& ctx,
                                  ad::Var app_code, bool identity_warp, const QueryOptions& options) const {
  FieldOutput out;
  if (identity_warp) {
    out.x_can = batch.positions;
  } else {
    const WarpResult w = ldf::warp(*deformation_, tape, batch.positions, ctx, encoding());
    out.t = w.t;
    out.x_can = w.x_can;
  }
  const VolumeQuery q = volume_.query(tape, out.x_can, batch.directions, app_code, options);
  out.sigma = q.sigma;
  out.rgb = q.rgb;
  return out;
}

std::vector<ad::Parameter*> AvatarModel::parameters() {
  std::vector<ad::Parameter*> out = deformation_->parameters();
  for (ad::Parameter* p : volume_.parameters()) out.push_back(p);
  out.push_back(&pose_codes_);
  out.push_back(&app_codes_);
  return out;
}

// ---------------------------------------------------------------------------

AvatarView::AvatarView(const AvatarModel& model, FrameCondition condition, bool prune)
    : model_(&model), condition_(std::move(condition)), prune_(prune) {
  const ModelConfig& cfg = model.config();
  if (static_cast<int>(condition_.expression.size()) != model.rig().num_expressions)
    throw std::invalid_argument("AvatarView: expression has wrong length");
  if (condition_.pose_code.size() == 0) condition_.pose_code = ad::Matrix(1, cfg.pose_code_dim);
  if (condition_.app_code.size() == 0) condition_.app_code = ad::Matrix(1, cfg.app_code_dim);
  if (condition_.pose_code.cols != cfg.pose_code_dim || condition_.app_code.cols != cfg.app_code_dim)
    throw std::invalid_argument("AvatarView: latent code size");
  landmarks_ = model.field_landmarks(condition_.expression, condition_.pose);
  if (prune_) pruned_ = model.volume().prune_mask();
}

FieldOutput AvatarView::evaluate(ad::Tape& tape, const SampleBatch& batch) const {
  const FrameContext ctx = model_->context(condition_.expression, condition_.pose, landmarks_,
                                           tape.constant(condition_.pose_code), condition_.field_expressions);
  QueryOptions options;
  options.skip_empty = true;
  options.pruned = prune_ ? &pruned_ : nullptr;
  return model_->evaluate(tape, batch, ctx, tape.constant(condition_.app_code), false, options);
}

}  // namespace ldf
