#include "ldf/fields.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ldf {

double WeightLaw::operator()(const Vec3& offset) const {
  const double cut = cutoff_radius();
  if (offset.squaredNorm() >= cut * cut) return 0.0;
  const double g = std::exp(-offset.squaredNorm() / (2.0 * radius * radius));
  return std::max(g - threshold, 0.0) * scale;
}

double WeightLaw::cutoff_radius() const { return radius * std::sqrt(2.0 * std::log(1.0 / threshold)); }

double local_weight(const Vec3& offset, const WeightLaw& law) { return law(offset); }

ad::Var local_weight(ad::Var offsets, const WeightLaw& law) {
  const ad::Matrix& x = offsets.value();
  if (x.cols != 3) throw std::invalid_argument("local_weight: offsets must be N×3");
  ad::Matrix out(x.rows, 1);
  for (int i = 0; i < x.rows; ++i) out.data[i] = law(Vec3(x(i, 0), x(i, 1), x(i, 2)));
  const int io = offsets.id();
  return offsets.tape()->record(std::move(out), {offsets}, [io, law](ad::Tape& t, const ad::Matrix& g) {
    const ad::Matrix& x = t.value(io);
    ad::Matrix& gx = t.grad_buffer(io);
    const double inv_r2 = 1.0 / (law.radius * law.radius);
    const double cut2 = law.cutoff_radius() * law.cutoff_radius();
    for (int i = 0; i < x.rows; ++i) {
      const double r2 = x(i, 0) * x(i, 0) + x(i, 1) * x(i, 1) + x(i, 2) * x(i, 2);
      const double e = std::exp(-0.5 * r2 * inv_r2);
      if (r2 >= cut2 || !(e - law.threshold > 0.0)) continue;
      const double k = -g.data[i] * law.scale * e * inv_r2;
      for (int a = 0; a < 3; ++a) gx(i, a) += k * x(i, a);
    }
  });
}

// ---------------------------------------------------------------------------

LocalField::LocalField(const std::string& prefix, int encoded_size, int condition_size, int hidden,
                       std::mt19937_64& rng)
    : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(encoded_size + condition_size));
  w1_pos_ = ad::Parameter(prefix + ".w1_pos", uniform_matrix(encoded_size, hidden, bound, rng));
  w1_cond_ = ad::Parameter(prefix + ".w1_cond", uniform_matrix(condition_size, hidden, bound, rng));
  b1_ = ad::Parameter(prefix + ".b1", uniform_matrix(1, hidden, bound, rng));
  layer2_ = Linear(prefix + ".l2", hidden, hidden, rng);
  layer3_ = Linear(prefix + ".l3", hidden, 3, rng, /*zero=*/true);
}

ad::Var LocalField::forward(ad::Tape& tape, ad::Var encoded, ad::Var condition) const {
  ad::Var cond_row = ad::add(ad::matmul(condition, tape.param(w1_cond_)), tape.param(b1_));
  ad::Var h = ad::leaky_relu(ad::add_row(ad::matmul(encoded, tape.param(w1_pos_)), cond_row));
  h = ad::leaky_relu(layer2_(tape, h));
  return layer3_(tape, h);
}

std::vector<ad::Parameter*> LocalField::parameters() {
  return {&w1_pos_, &w1_cond_, &b1_, &layer2_.weight, &layer2_.bias, &layer3_.weight, &layer3_.bias};
}

std::size_t LocalField::parameter_count() const {
  return w1_pos_.size() + w1_cond_.size() + b1_.size() + layer2_.parameter_count() +
         layer3_.parameter_count();
}

WarpResult warp(const DeformationModel& model, ad::Tape& tape, ad::Var x_obs, const FrameContext& ctx,
                const EncodingConfig& enc) {
  ad::Var t = model.deform(tape, x_obs, ctx, enc);
  return {t, ad::add(x_obs, t)};
}

// ---------------------------------------------------------------------------

namespace {

ad::Var condition_row(ad::Tape& tape, std::span<const double> expression, const FrameContext& ctx) {
  std::vector<double> fixed(expression.begin(), expression.end());
  fixed.insert(fixed.end(), ctx.pose.begin(), ctx.pose.end());
  const ad::Var parts[] = {tape.constant(ad::Matrix::row_vector(fixed)), ctx.pose_code};
  return ad::concat_cols(parts);
}

void check_context(const FrameContext& ctx, int num_expressions, int num_fields) {
  if (static_cast<int>(ctx.expression.size()) != num_expressions)
    throw std::invalid_argument("frame context: expression has wrong length");
  if (!ctx.pose_code.valid()) throw std::invalid_argument("frame context: missing pose code");
  if (num_fields > 0 && static_cast<int>(ctx.landmarks.size()) != num_fields)
    throw std::invalid_argument("frame context: landmark count does not match the ensemble");
  if (!ctx.field_expressions.empty() && static_cast<int>(ctx.field_expressions.size()) != num_fields)
    throw std::invalid_argument("frame context: field override list has wrong length");
}

}  // namespace

FieldEnsemble::FieldEnsemble(std::vector<Vec3> canonical_landmarks, AttentionMask mask, WeightLaw law,
                             int n_freqs, int pose_code_dim, int hidden, std::uint64_t seed)
    : canonical_(std::move(canonical_landmarks)), mask_(std::move(mask)), law_(law), n_freqs_(n_freqs) {
  if (mask_.num_landmarks != static_cast<int>(canonical_.size()))
    throw std::invalid_argument("FieldEnsemble: mask rows must match landmarks");
  std::mt19937_64 rng(seed);
  const int enc = EncodingConfig{n_freqs, 0.0}.output_size();
  const int cond = mask_.num_expressions + 6 + pose_code_dim;
  fields_.reserve(canonical_.size());
  for (std::size_t l = 0; l < canonical_.size(); ++l) {
    char name[32];
    std::snprintf(name, sizeof name, "field.%02zu", l);
    fields_.emplace_back(name, enc, cond, hidden, rng);
  }
}

ad::Var FieldEnsemble::condition(ad::Tape& tape, int l, const FrameContext& ctx) const {
  std::span<const double> e = ctx.expression;
  if (!ctx.field_expressions.empty() && !ctx.field_expressions[l].empty()) e = ctx.field_expressions[l];
  return condition_row(tape, apply_mask(e, mask_.row(l)), ctx);
}

ad::Var FieldEnsemble::local_deform(ad::Tape& tape, int l, ad::Var x_obs, const FrameContext& ctx,
                                    const EncodingConfig& enc) const {
  if (enc.n_freqs != n_freqs_) throw std::invalid_argument("FieldEnsemble: encoding frequency mismatch");
  const Vec3& c = ctx.landmarks[l];
  ad::Var offsets = ad::add_row(x_obs, tape.constant(ad::Matrix::from(1, 3, {-c.x(), -c.y(), -c.z()})));
  ad::Var out = fields_[l].forward(tape, encode(offsets, enc), condition(tape, l, ctx));
  const Vec3 delta = canonical_[l] - c;
  return ad::add_row(out, tape.constant(ad::Matrix::from(1, 3, {delta.x(), delta.y(), delta.z()})));
}

ad::Var FieldEnsemble::deform(ad::Tape& tape, ad::Var x_obs, const FrameContext& ctx,
                              const EncodingConfig& enc) const {
  check_context(ctx, mask_.num_expressions, size());
  const ad::Matrix& x = x_obs.value();
  const double cutoff2 = law_.cutoff_radius() * law_.cutoff_radius();
  std::vector<ad::RowScatter> pieces;
  for (int l = 0; l < size(); ++l) {
    const Vec3& c = ctx.landmarks[l];
    std::vector<int> rows;
    for (int i = 0; i < x.rows; ++i) {
      const double dx = x(i, 0) - c.x(), dy = x(i, 1) - c.y(), dz = x(i, 2) - c.z();
      if (dx * dx + dy * dy + dz * dz < cutoff2) rows.push_back(i);
    }
    if (rows.empty()) continue;
    ad::Var xs = ad::gather_rows(x_obs, rows);
    ad::Var offsets = ad::add_row(xs, tape.constant(ad::Matrix::from(1, 3, {-c.x(), -c.y(), -c.z()})));
    ad::Var w = local_weight(offsets, law_);
    ad::Var t_l = local_deform(tape, l, xs, ctx, enc);
    pieces.push_back({ad::mul_col(t_l, w), std::move(rows)});
  }
  return ad::scatter_rows(tape, x.rows, 3, pieces);
}

std::vector<ad::Parameter*> FieldEnsemble::parameters() {
  std::vector<ad::Parameter*> out;
  for (LocalField& f : fields_) {
    auto p = f.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t FieldEnsemble::parameter_count() const {
  std::size_t n = 0;
  for (const LocalField& f : fields_) n += f.parameter_count();
  return n;
}

// ---------------------------------------------------------------------------

GlobalField::GlobalField(int num_expressions, int n_freqs, int pose_code_dim, int hidden, std::uint64_t seed)
    : n_freqs_(n_freqs) {
  std::mt19937_64 rng(seed);
  mlp_ = LocalField("global", EncodingConfig{n_freqs, 0.0}.output_size(), num_expressions + 6 + pose_code_dim,
                    hidden, rng);
}

int GlobalField::matched_hidden(std::size_t target, int encoded_size, int condition_size) {
  // count(h) = (in + 1)·h + (h + 1)·h + 3h + 3 = h² + (in + 5)·h + 3
  const double b = encoded_size + condition_size + 5.0;
  const double h = (-b + std::sqrt(b * b + 4.0 * (static_cast<double>(target) - 3.0))) / 2.0;
  return std::max(1, static_cast<int>(std::lround(h)));
}

ad::Var GlobalField::deform(ad::Tape& tape, ad::Var x_obs, const FrameContext& ctx,
                            const EncodingConfig& enc) const {
  if (enc.n_freqs != n_freqs_) throw std::invalid_argument("GlobalField: encoding frequency mismatch");
  if (!ctx.pose_code.valid()) throw std::invalid_argument("frame context: missing pose code");
  return mlp_.forward(tape, encode(x_obs, enc), condition_row(tape, ctx.expression, ctx));
}

std::vector<ad::Parameter*> GlobalField::parameters() { return mlp_.parameters(); }

std::size_t GlobalField::parameter_count() const { return mlp_.parameter_count(); }

}  // namespace ldf
