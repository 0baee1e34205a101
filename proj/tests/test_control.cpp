#include <doctest.h>

#include "ldf/control.hpp"
#include "pipeline_check.hpp"
#include "support.hpp"

#include <cmath>

using namespace ldf;
using namespace ldf::testing;

namespace {

RenderOptions quick() {
  RenderOptions o;
  o.samples = 16;
  return o;
}

std::vector<double> zeros(const BlendshapeRig& rig) { return std::vector<double>(rig.num_expressions, 0.0); }

bool same_pixels(const RenderedImage& a, const RenderedImage& b) {
  return a.rgb == b.rgb && a.alpha == b.alpha && a.depth == b.depth;
}

}  // namespace

TEST_CASE("identity driver reproduces the renders of each driving frame") {
  const auto model = micro_model(small_rig(), Variant::Full, 21);
  const Dataset& ds = tiny_dataset();
  const auto frames = ds.split(Split::Train);
  const Camera base = default_camera(ds.info.width, ds.info.height);
  const ReenactResult r = reenact(*model, base, driver_from_frames(frames), quick());
  REQUIRE(r.images.size() == frames.size());
  CHECK(r.warnings.empty());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const AvatarView view(*model, default_condition(*model, frames[i]->expression, frames[i]->pose));
    const RenderedImage direct = render_image(view, frames[i]->camera, model->bounds(), quick());
    CHECK(same_pixels(r.images[i], direct));
  }
}

TEST_CASE("reenact uses the first training frame's codes") {
  const auto model = micro_model(small_rig(), Variant::Full, 22);
  const Dataset& ds = tiny_dataset();
  const TrackedFrame& f = *ds.split(Split::Train)[0];
  const ReenactResult r =
      reenact(*model, default_camera(ds.info.width, ds.info.height), {{f.expression, f.pose}}, quick());
  FrameCondition c;
  c.expression = f.expression;
  c.pose = f.pose;
  c.pose_code = ad::Matrix(1, model->config().pose_code_dim);
  c.app_code = ad::Matrix(1, model->config().app_code_dim);
  for (int k = 0; k < c.pose_code.cols; ++k) c.pose_code(0, k) = model->pose_codes().value(0, k);
  for (int k = 0; k < c.app_code.cols; ++k) c.app_code(0, k) = model->app_codes().value(0, k);
  const RenderedImage direct = render_image(AvatarView(*model, c), f.camera, model->bounds(), quick());
  CHECK(same_pixels(r.images[0], direct));
}

TEST_CASE("out-of-range expressions are warned about but still rendered") {
  const auto model = micro_model(small_rig(), Variant::Full, 23);
  const Camera cam = default_camera(12, 12);
  std::vector<double> e = zeros(model->rig());
  e[2] = -1.6;
  std::vector<DriverFrame> driver = {{zeros(model->rig()), {}}, {e, {}}};
  const ReenactResult r = reenact(*model, cam, driver, quick());
  REQUIRE(r.images.size() == 2);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("frame 1") != std::string::npos);
  CHECK(r.images[1].rgb.size() == 12u * 12u * 3u);

  e[2] = kExpressionWarnLimit;
  CHECK(reenact(*model, cam, {{e, {}}}, quick()).warnings.empty());

  driver[0].expression.pop_back();
  CHECK_THROWS_AS(reenact(*model, cam, driver, quick()), std::invalid_argument);
}

TEST_CASE("overrides that change nothing leave the render untouched") {
  const auto model = micro_model(small_rig(), Variant::Full, 24);
  const Camera cam = default_camera(20, 20);
  std::vector<double> e = zeros(model->rig());
  e[0] = 0.7;
  e[5] = -0.3;
  const FrameCondition base = default_condition(*model, e, {});
  const RenderedImage ref = render_image(AvatarView(*model, base), cam, model->bounds(), quick());

  const std::vector<int> eyes = fields_with_tag(*model, "eye");
  REQUIRE(!eyes.empty());
  CHECK(same_pixels(inject_local_expression(*model, base, {}, zeros(model->rig()), cam, quick()), ref));
  CHECK(same_pixels(inject_local_expression(*model, base, eyes, e, cam, quick()), ref));

  const FrameCondition none = with_overrides(*model, base, {{{}, {1.0}}});
  CHECK(none.field_expressions.empty());
}

TEST_CASE("override validation") {
  const auto model = micro_model(small_rig(), Variant::Full, 25);
  const FrameCondition base = default_condition(*model, zeros(model->rig()), {});
  const int L = model->ensemble()->size();
  CHECK_THROWS_AS(with_overrides(*model, base, {{{L}, zeros(model->rig())}}), std::out_of_range);
  CHECK_THROWS_AS(with_overrides(*model, base, {{{-1}, zeros(model->rig())}}), std::out_of_range);
  CHECK_THROWS_AS(with_overrides(*model, base, {{{0}, {1.0, 2.0}}}), std::invalid_argument);

  const auto global = micro_model(small_rig(), Variant::GlobalField, 25);
  const FrameCondition gbase = default_condition(*global, zeros(global->rig()), {});
  CHECK_THROWS_AS(with_overrides(*global, gbase, {{{0}, zeros(global->rig())}}), std::invalid_argument);
  CHECK(fields_with_tag(*global, "eye").empty());

  std::vector<double> a = zeros(model->rig()), b = zeros(model->rig());
  a[0] = 1.0;
  b[0] = 2.0;
  const FrameCondition c = with_overrides(*model, base, {{{0, 1}, a}, {{1}, b}});
  REQUIRE(c.field_expressions.size() == static_cast<std::size_t>(L));
  CHECK(c.field_expressions[0] == a);
  CHECK(c.field_expressions[1] == b);
  CHECK(c.field_expressions[2].empty());
}

TEST_CASE("eye injection stays inside the projected field support") {
  const auto model = micro_model(small_rig(), Variant::Full, 26);
  const Camera cam = default_camera(32, 32);
  const FrameCondition base = default_condition(*model, zeros(model->rig()), {});
  const RenderedImage ref = render_image(AvatarView(*model, base), cam, model->bounds(), quick());
  for (const char* tag : {"eye_r", "eye_l", "eye"}) {
    CAPTURE(tag);
    const std::vector<int> ids = fields_with_tag(*model, tag);
    REQUIRE(!ids.empty());
    std::vector<double> e(model->rig().num_expressions, 1.0);
    const RenderedImage inj = inject_local_expression(*model, base, ids, e, cam, quick());
    const auto mask = support_mask(*model, base, ids, cam, 2);
    const DiffMass m = diff_mass(inj, ref, mask);
    CHECK(m.total > 1e-5);
    CHECK(m.fraction() >= 0.99);
  }
}

TEST_CASE("support mask against a projection oracle") {
  const auto model = micro_model(small_rig(), Variant::Full, 27);
  const Camera cam = default_camera(40, 40);
  const FrameCondition base = default_condition(*model, zeros(model->rig()), {});
  const std::vector<int> ids = fields_with_tag(*model, "eye_r");
  const auto core = support_mask(*model, base, ids, cam, 0);
  const auto dilated = support_mask(*model, base, ids, cam, 2);
  const auto centers = model->field_landmarks(base.expression, base.pose);
  const double r = model->ensemble()->law().cutoff_radius();

  int set = 0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * cam.width + x;
      set += core[i];
      if (core[i]) CHECK(dilated[i]);
      // The projected centre of each field is always inside its disk.
      for (int id : ids) {
        const auto p = cam.project(centers[id]);
        REQUIRE(p);
        if (static_cast<int>(std::floor(p->x())) == x && static_cast<int>(std::floor(p->y())) == y) CHECK(core[i]);
      }
      // Pixels far from every projected centre lie outside: the disk radius in
      // pixels is at most fx·r / (depth − r).
      double nearest = 1e9;
      for (int id : ids) {
        const auto p = cam.project(centers[id]);
        const double depth = (centers[id] - cam.center()).norm();
        const double rad = cam.fx * r / (depth - r) + 1.0;
        nearest = std::min(nearest, std::hypot(x + 0.5 - p->x(), y + 0.5 - p->y()) - rad);
      }
      if (nearest > 0.0) CHECK_FALSE(core[i]);
    }
  CHECK(set > 0);
}

TEST_CASE("diff mass accounting") {
  RenderedImage a, b;
  a.width = b.width = 2;
  a.height = b.height = 1;
  a.rgb = {0, 0, 0, 0, 0, 0};
  b.rgb = {0.5, 0, 0, 0.25, 0.25, 0};
  const DiffMass m = diff_mass(a, b, {1, 0});
  CHECK(m.total == doctest::Approx(1.0));
  CHECK(m.inside == doctest::Approx(0.5));
  CHECK(m.fraction() == doctest::Approx(0.5));
  CHECK(diff_mass(a, a, {0, 0}).fraction() == 1.0);
  CHECK_THROWS_AS(diff_mass(a, b, {1}), std::invalid_argument);
}

TEST_CASE("field tags and depth range") {
  const auto model = micro_model(small_rig(), Variant::Full, 28);
  const auto& tags = model->field_rig().landmark_tags;
  const auto right = fields_with_tag(*model, "eye_r"), left = fields_with_tag(*model, "eye_l");
  const auto both = fields_with_tag(*model, "eye");
  CHECK(both.size() >= right.size() + left.size());
  for (int id : right) CHECK(tags[id].rfind("eye_r", 0) == 0);
  CHECK(fields_with_tag(*model, "no_such_region").empty());

  const Camera cam = default_camera(16, 16);
  const auto [near, far] = depth_range(cam, model->bounds());
  CHECK(near >= 0.0);
  CHECK(far > near);
  for (int k = 0; k < 8; ++k) {
    const Vec3 corner = model->bounds().corner(static_cast<Eigen::AlignedBox3d::CornerType>(k));
    const double d = (corner - cam.center()).norm();
    CHECK(d >= near - 1e-12);
    CHECK(d <= far + 1e-12);
  }
}

TEST_CASE("surface sides follow the sign of x") {
  const Camera cam = default_camera(4, 1);
  RenderedImage img;
  img.width = 4;
  img.height = 1;
  img.alpha = {1.0, 1.0, 0.2, 1.0};
  img.depth = {2.0, 2.0, 2.0, 2.0};
  img.rgb.assign(12, 0.0);
  const std::vector<int> s = surface_sides(img, cam);
  for (int x = 0; x < 4; ++x) {
    CAPTURE(x);
    if (x == 2) {
      CHECK(s[x] == 0);
      continue;
    }
    const Vec3 p = cam.center() + 2.0 * cam.direction(x + 0.5, 0.5);
    CHECK(s[x] == (p.x() > 0 ? 1 : -1));
  }
}
