#include "ldf/model.hpp"

#include "pipeline_check.hpp"
#include "support.hpp"

#include <doctest.h>

#include <random>

using namespace ldf;

TEST_CASE("variant names") {
  for (Variant v : {Variant::Full, Variant::NoMask, Variant::NoLocalLoss, Variant::GlobalField, Variant::K5})
    CHECK(parse_variant(to_string(v)) == v);
  CHECK(to_string(Variant::GlobalField) == "global_field");
  CHECK_THROWS_AS(parse_variant("everything"), std::invalid_argument);
}

TEST_CASE("variants build the matching deformation model") {
  const auto rig = ldf::testing::small_rig();
  const AvatarModel full(rig, Variant::Full, ModelConfig{}, 3, 1);
  REQUIRE(full.ensemble() != nullptr);
  CHECK(full.ensemble()->size() == 34);
  CHECK(full.mask() == binarize(displacement_matrix(*rig)));
  CHECK(full.num_train_frames() == 3);

  const AvatarModel no_mask(rig, Variant::NoMask, ModelConfig{}, 3, 1);
  CHECK(no_mask.mask() == AttentionMask::all_ones(34, rig->num_expressions));

  const AvatarModel k5(rig, Variant::K5, ModelConfig{}, 3, 1);
  CHECK(k5.ensemble()->size() == 5);
  CHECK(k5.field_rig().num_landmarks() == 5);
  CHECK(k5.rig().num_landmarks() == 34);

  const AvatarModel global(rig, Variant::GlobalField, ModelConfig{}, 3, 1);
  CHECK(global.ensemble() == nullptr);
  const double ratio = static_cast<double>(global.deformation().parameter_count()) /
                       static_cast<double>(full.deformation().parameter_count());
  CHECK(std::abs(ratio - 1.0) < 0.05);

  CHECK_THROWS_AS(AvatarModel(rig, Variant::Full, ModelConfig{}, 0, 1), std::invalid_argument);
}

TEST_CASE("fresh models warp by centroid deltas only") {
  const auto rig = ldf::testing::small_rig();
  AvatarModel model(rig, Variant::Full, ModelConfig{}, 1, 2);
  model.set_encoding_alpha(10.0);
  const std::vector<double> zero(rig->num_expressions, 0.0);
  ad::Tape tape(false);
  const auto lm = model.field_landmarks(zero, {});
  const FrameContext ctx = model.context(zero, {}, lm, model.pose_code(tape, 0));
  ad::Matrix xs(static_cast<int>(lm.size()), 3);
  for (int l = 0; l < xs.rows; ++l)
    for (int a = 0; a < 3; ++a) xs(l, a) = lm[l][a];
  const ad::Matrix x_can = model.warp(tape, tape.constant(xs), ctx).value();
  CHECK(x_can.data == xs.data);
}

TEST_CASE("density is queried at warped points") {
  const auto rig = ldf::testing::small_rig();
  auto model = ldf::testing::micro_model(rig, Variant::Full, 3);
  std::vector<double> e(rig->num_expressions, 0.4);
  const std::array<double, 6> pose = {0, 0, 0, 0.08, 0, 0};
  ad::Tape tape(false);
  const auto lm = model->field_landmarks(e, pose);
  const FrameContext ctx = model->context(e, pose, lm, model->pose_code(tape, 0));
  ad::Matrix xs(static_cast<int>(lm.size()), 3), dirs(xs.rows, 3);
  for (int l = 0; l < xs.rows; ++l) {
    for (int a = 0; a < 3; ++a) xs(l, a) = lm[l][a] + 0.01;
    dirs(l, 2) = -1.0;
  }
  const FieldOutput f = model->evaluate(tape, {tape.constant(xs), dirs}, ctx, model->app_code(tape, 0));
  int moved = 0;
  for (int i = 0; i < xs.rows; ++i) {
    const Vec3 obs(xs(i, 0), xs(i, 1), xs(i, 2));
    const Vec3 can(f.x_can.value()(i, 0), f.x_can.value()(i, 1), f.x_can.value()(i, 2));
    CHECK(f.sigma.value().data[i] == doctest::Approx(model->volume().density_at(can)).epsilon(1e-12));
    CHECK((can - obs - Vec3(f.t.value()(i, 0), f.t.value()(i, 1), f.t.value()(i, 2))).norm() < 1e-15);
    moved += (can - obs).norm() > 1e-6;
  }
  CHECK(moved > 0);
  const FieldOutput id = model->evaluate(tape, {tape.constant(xs), dirs}, ctx, model->app_code(tape, 0), true);
  CHECK(id.x_can.value().data == xs.data);
  CHECK_FALSE(id.t.valid());
}

TEST_CASE("end-to-end gradient check on micro instances") {
  const auto rig = ldf::testing::small_rig();
  for (Variant v : {Variant::Full, Variant::GlobalField}) {
    auto model = ldf::testing::micro_model(rig, v, 4);
    ad::GradCheckOptions o;
    o.max_entries_per_param = 8;
    const auto r = ad::finite_diff_check(
        [&](ad::Tape& t) { return ldf::testing::micro_pipeline_loss(t, *model, 11); }, model->parameters(), o);
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_error < 1e-3);
    CHECK(r.entries_checked > 100);
  }
}

TEST_CASE("pruning does not change renders") {
  const auto rig = ldf::testing::small_rig();
  ModelConfig mc;
  mc.volume.resolution = 10;
  AvatarModel model(rig, Variant::Full, mc, 1, 5);
  model.set_encoding_alpha(10.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  const GridGeometry& g = model.volume().geometry();
  for (int i = 0; i <= g.resolution; ++i)
    for (int j = 0; j <= g.resolution; ++j)
      for (int k = 0; k <= g.resolution; ++k) {
        const double r = g.node_position(i, j, k).norm();
        model.volume().density_grid().value(g.node_index(i, j, k), 0) = r < 0.45 ? 0.3 + u(rng) : -0.01 + 1e-6 * u(rng);
      }
  FrameCondition c;
  c.expression.assign(rig->num_expressions, 0.2);
  const Camera cam = default_camera(20, 20);
  const AvatarView pruned(model, c, true), full(model, c, false);
  const RenderedImage a = render_image(pruned, cam, model.bounds(), RenderOptions{32});
  const RenderedImage b = render_image(full, cam, model.bounds(), RenderOptions{32});
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) worst = std::max(worst, std::abs(a.rgb[i] - b.rgb[i]));
  CHECK(worst < 1e-4);
  const auto mask = model.volume().prune_mask();
  CHECK(std::count(mask.begin(), mask.end(), 1) > 0);
  CHECK_THROWS_AS(AvatarView(model, FrameCondition{}), std::invalid_argument);
}
