#include "ldf/control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ldf {

std::vector<DriverFrame> driver_from_frames(const std::vector<const TrackedFrame*>& frames) {
  std::vector<DriverFrame> out;
  out.reserve(frames.size());
  for (const TrackedFrame* f : frames) out.push_back({f->expression, f->pose});
  return out;
}

ReenactResult reenact(const AvatarModel& model, const Camera& base_camera, const std::vector<DriverFrame>& driver,
                      const RenderOptions& options) {
  ReenactResult out;
  const int E = model.rig().num_expressions;
  for (std::size_t i = 0; i < driver.size(); ++i) {
    const DriverFrame& d = driver[i];
    if (static_cast<int>(d.expression.size()) != E)
      throw std::invalid_argument("reenact: driver frame " + std::to_string(i) + " has " +
                                  std::to_string(d.expression.size()) + " coefficients, expected " +
                                  std::to_string(E));
    double peak = 0.0;
    for (double v : d.expression) peak = std::max(peak, std::abs(v));
    if (peak > kExpressionWarnLimit) {
      std::ostringstream msg;
      msg << "frame " << i << ": expression magnitude " << peak << " is outside the trained range";
      out.warnings.push_back(msg.str());
    }
    const AvatarView view(model, default_condition(model, d.expression, d.pose));
    const Camera cam = posed_camera(base_camera, Vec3(d.pose[0], d.pose[1], d.pose[2]));
    out.images.push_back(render_image(view, cam, model.bounds(), options));
  }
  return out;
}

FrameCondition with_overrides(const AvatarModel& model, FrameCondition base,
                              const std::vector<FieldOverride>& overrides) {
  bool any = false;
  for (const FieldOverride& o : overrides) any = any || !o.field_ids.empty();
  if (!any) return base;
  const FieldEnsemble* ens = model.ensemble();
  if (!ens) throw std::invalid_argument("field overrides need a local-field model");
  const int L = ens->size();
  const int E = model.rig().num_expressions;
  if (base.field_expressions.empty()) base.field_expressions.assign(static_cast<std::size_t>(L), {});
  for (const FieldOverride& o : overrides) {
    if (o.field_ids.empty()) continue;
    if (static_cast<int>(o.expression.size()) != E)
      throw std::invalid_argument("override expression must have " + std::to_string(E) + " coefficients");
    for (int id : o.field_ids) {
      if (id < 0 || id >= L) throw std::out_of_range("field id " + std::to_string(id) + " out of range");
      base.field_expressions[id] = o.expression;
    }
  }
  return base;
}

RenderedImage inject_local_expression(const AvatarModel& model, const FrameCondition& base,
                                      const std::vector<int>& field_ids, const std::vector<double>& expression,
                                      const Camera& camera, const RenderOptions& options) {
  const AvatarView view(model, with_overrides(model, base, {{field_ids, expression}}));
  return render_image(view, camera, model.bounds(), options);
}

std::vector<int> fields_with_tag(const AvatarModel& model, const std::string& prefix) {
  std::vector<int> out;
  if (!model.ensemble()) return out;
  const auto& tags = model.field_rig().landmark_tags;
  for (int l = 0; l < static_cast<int>(tags.size()); ++l)
    if (tags[l].rfind(prefix, 0) == 0) out.push_back(l);
  return out;
}

std::vector<std::uint8_t> support_mask(const AvatarModel& model, const FrameCondition& condition,
                                       const std::vector<int>& field_ids, const Camera& camera, int dilate) {
  const FieldEnsemble* ens = model.ensemble();
  if (!ens) throw std::invalid_argument("support_mask: model has no local fields");
  const std::vector<Vec3> centers = model.field_landmarks(condition.expression, condition.pose);
  const double r = ens->law().cutoff_radius();
  const Vec3 o = camera.center();
  const int W = camera.width, H = camera.height;
  std::vector<std::uint8_t> core(static_cast<std::size_t>(W) * H, 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const Vec3 d = camera.direction(x + 0.5, y + 0.5);
      for (int id : field_ids) {
        const Vec3 oc = centers.at(id) - o;
        const double t = std::max(0.0, oc.dot(d));
        if ((oc - t * d).norm() <= r) {
          core[static_cast<std::size_t>(y) * W + x] = 1;
          break;
        }
      }
    }
  if (dilate <= 0) return core;
  std::vector<std::uint8_t> out(core.size(), 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!core[static_cast<std::size_t>(y) * W + x]) continue;
      for (int yy = std::max(0, y - dilate); yy <= std::min(H - 1, y + dilate); ++yy)
        for (int xx = std::max(0, x - dilate); xx <= std::min(W - 1, x + dilate); ++xx)
          out[static_cast<std::size_t>(yy) * W + xx] = 1;
    }
  return out;
}

DiffMass diff_mass(const RenderedImage& a, const RenderedImage& b, const std::vector<std::uint8_t>& mask) {
  if (a.rgb.size() != b.rgb.size() || mask.size() * 3 != a.rgb.size())
    throw std::invalid_argument("diff_mass: size mismatch");
  DiffMass m;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    double d = 0.0;
    for (int c = 0; c < 3; ++c) d += std::abs(a.rgb[i * 3 + c] - b.rgb[i * 3 + c]);
    m.total += d;
    if (mask[i]) m.inside += d;
  }
  return m;
}

std::pair<double, double> depth_range(const Camera& camera, const Eigen::AlignedBox3d& bounds) {
  const double d = (bounds.center() - camera.center()).norm();
  const double r = 0.5 * bounds.sizes().norm();
  return {std::max(0.0, d - r), d + r};
}

std::vector<int> surface_sides(const RenderedImage& image, const Camera& camera) {
  std::vector<int> out(image.alpha.size(), 0);
  const Vec3 o = camera.center();
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * image.width + x;
      if (image.alpha[i] < 0.5) continue;
      const Vec3 p = o + image.depth[i] * camera.direction(x + 0.5, y + 0.5);
      out[i] = p.x() > 0.0 ? 1 : (p.x() < 0.0 ? -1 : 0);
    }
  return out;
}

}  // namespace ldf
