#include "ldf/losses.hpp"

#include <stdexcept>

namespace ldf {

ad::Var rgb_loss(ad::Var rendered, const ad::Matrix& measured) {
  if (!rendered.value().same_shape(measured) || measured.cols != 3)
    throw std::invalid_argument("rgb_loss: shape mismatch");
  return ad::mean(ad::row_norm(ad::sub(rendered, rendered.tape()->constant(measured))));
}

ad::Var mesh_prior_loss(ad::Var t, const ad::Matrix& targets, std::span<const std::uint8_t> active) {
  ad::Tape& tape = *t.tape();
  if (!t.value().same_shape(targets) || active.size() != static_cast<std::size_t>(targets.rows))
    throw std::invalid_argument("mesh_prior_loss: shape mismatch");
  std::vector<int> rows;
  for (std::size_t i = 0; i < active.size(); ++i)
    if (active[i]) rows.push_back(static_cast<int>(i));
  if (rows.empty()) return tape.constant(ad::Matrix(1, 1));
  ad::Matrix picked(static_cast<int>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int a = 0; a < 3; ++a) picked(static_cast<int>(i), a) = targets(rows[i], a);
  return ad::mean(ad::row_norm(ad::sub(ad::gather_rows(t, rows), tape.constant(std::move(picked)))));
}

ad::Var deformation_reg(ad::Var t, std::span<const std::uint8_t> foreground) {
  if (foreground.size() != static_cast<std::size_t>(t.rows()))
    throw std::invalid_argument("deformation_reg: flag count mismatch");
  ad::Matrix lut(t.rows(), 1);
  for (int i = 0; i < t.rows(); ++i) lut.data[i] = foreground[i] ? kForegroundWeight : kBackgroundWeight;
  return ad::mean(ad::mul(ad::row_norm(t), t.tape()->constant(std::move(lut))));
}

ad::Var volume_sparsity(ad::Var sigma) { return ad::mean(ad::abs(sigma)); }

ad::Var code_reg(ad::Var pose_code, ad::Var app_code) {
  const ad::Var parts[] = {pose_code, app_code};
  return ad::row_norm(ad::concat_cols(parts));
}

ad::Var landmark_intersections(ad::Tape& tape, const FrameProbe& frame, std::span<const int> landmark_ids,
                               const LocalControlOptions& options, std::vector<std::uint8_t>* valid) {
  const int S = options.samples;
  std::vector<Ray> rays;
  std::vector<int> hit_rows;
  std::vector<std::uint8_t> ok(landmark_ids.size(), 0);
  for (std::size_t i = 0; i < landmark_ids.size(); ++i) {
    const int l = landmark_ids[i];
    if (l < 0 || l >= static_cast<int>(frame.landmarks.size()))
      throw std::out_of_range("landmark_intersections: bad landmark id");
    Ray ray;
    ray.origin = frame.camera_center;
    const Vec3 to = frame.landmarks[l] - frame.camera_center;
    if (to.norm() < 1e-12) continue;
    ray.direction = to.normalized();
    if (!clip_to_box(ray, options.bounds)) continue;
    ok[i] = 1;
    rays.push_back(ray);
    hit_rows.push_back(static_cast<int>(i));
  }
  if (valid) *valid = ok;
  const int n = static_cast<int>(landmark_ids.size());
  if (rays.empty()) return tape.constant(ad::Matrix(n, 3));

  const int R = static_cast<int>(rays.size());
  ad::Matrix positions(R * S, 3), directions(R * S, 3), deltas(R, S), depths(R, S), dirs(R, 3), origins(R, 3);
  for (int r = 0; r < R; ++r) {
    const RaySample s = sample_points(rays[r], S, false);
    for (int i = 0; i < S; ++i) {
      for (int a = 0; a < 3; ++a) {
        positions(r * S + i, a) = s.positions[i][a];
        directions(r * S + i, a) = rays[r].direction[a];
      }
      deltas(r, i) = s.deltas[i];
      depths(r, i) = s.depths[i];
    }
    for (int a = 0; a < 3; ++a) {
      dirs(r, a) = rays[r].direction[a];
      origins(r, a) = rays[r].origin[a];
    }
  }
  const FieldOutput f = frame.evaluate(tape, {tape.constant(std::move(positions)), std::move(directions)});
  const CompositeBatch c = composite(f.sigma, f.rgb, deltas, depths, frame.background);
  ad::Var x_hat = ad::add(ad::mul_col(tape.constant(std::move(dirs)), c.depth), tape.constant(std::move(origins)));
  ad::Var x_can = frame.warp(tape, x_hat);
  const ad::RowScatter piece[] = {{x_can, hit_rows}};
  return ad::scatter_rows(tape, n, 3, piece);
}

ad::Var local_control_loss(ad::Tape& tape, const FrameProbe& a, const FrameProbe& b,
                           std::span<const int> landmark_ids, const LocalControlOptions& options) {
  std::vector<std::uint8_t> va, vb;
  ad::Var xa = landmark_intersections(tape, a, landmark_ids, options, &va);
  ad::Var xb = landmark_intersections(tape, b, landmark_ids, options, &vb);
  std::vector<int> both;
  for (std::size_t i = 0; i < landmark_ids.size(); ++i)
    if (va[i] && vb[i]) both.push_back(static_cast<int>(i));
  if (both.empty()) return tape.constant(ad::Matrix(1, 1));
  return ad::sum(ad::row_abs_sum(ad::sub(ad::gather_rows(xa, both), ad::gather_rows(xb, both))));
}

ad::Var total_loss(ad::Tape& tape, const LossParts& parts, const LossWeights& weights, bool upsampled) {
  ad::Var total = parts.rgb.valid() ? parts.rgb : tape.constant(ad::Matrix(1, 1));
  auto add = [&](const ad::Var& term, double w) {
    if (term.valid() && w != 0.0) total = ad::add(total, ad::scale(term, w));
  };
  add(parts.local, weights.local);
  add(parts.mesh, weights.mesh);
  add(parts.def, weights.def);
  add(parts.vol, upsampled ? weights.vol_after_upsample : weights.vol);
  add(parts.code, weights.code);
  return total;
}

}  // namespace ldf
