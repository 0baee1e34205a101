#include "ldf/dataset.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <unistd.h>

using namespace ldf;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ldf_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("default synthesis config") {
  const SynthConfig c;
  CHECK(c.train_frames == 300);
  CHECK(c.test_in_frames + c.test_asym_frames == 60);
  CHECK(c.info.num_vertices == 2562);
  CHECK(c.info.num_landmarks == 34);
}

TEST_CASE("dataset splits and frame invariants") {
  const auto rig = ldf::testing::small_rig();
  const Dataset& ds = ldf::testing::tiny_dataset();
  CHECK(ds.split(Split::Train).size() == 6);
  CHECK(ds.split(Split::TestIn).size() == 2);
  CHECK(ds.split(Split::TestAsym).size() == 2);
  std::set<int> ids;
  for (const TrackedFrame& f : ds.frames) {
    ids.insert(f.frame_id);
    CHECK(f.image.width == 32);
    CHECK(f.image.height == 32);
    CHECK(f.fg_mask.size() == 32u * 32u);
    const auto lm = mesh_landmarks(*rig, deform_mesh(*rig, f.expression, f.jaw()));
    REQUIRE(lm.size() == f.landmarks.size());
    for (std::size_t l = 0; l < lm.size(); ++l) CHECK(lm[l] == f.landmarks[l]);
    int fg = 0;
    for (auto m : f.fg_mask) fg += m;
    const double frac = fg / 1024.0;
    CHECK(frac >= 0.05);
    CHECK(frac <= 0.80);
  }
  CHECK(ids.size() == ds.frames.size());
}

TEST_CASE("foreground mask is ground-truth alpha above one half") {
  const auto rig = ldf::testing::small_rig();
  const Dataset& ds = ldf::testing::tiny_dataset();
  const TrackedFrame& f = *ds.split(Split::Train)[2];
  const BlobField blob(*rig, deform_mesh(*rig, f.expression, f.jaw()), ds.info.background);
  const RenderedImage img = render_image(blob, f.camera, ds.bounds(*rig), RenderOptions{ds.info.gt_samples});
  for (std::size_t i = 0; i < f.fg_mask.size(); ++i) CHECK(f.fg_mask[i] == (img.alpha[i] > 0.5 ? 1 : 0));
}

TEST_CASE("expression scripts") {
  const auto rig = ldf::testing::small_rig();
  SUBCASE("asymmetric split activates one one-sided basis") {
    const ExpressionScript s = make_expression_script(*rig, Split::TestAsym, 12, 3);
    for (const auto& e : s.expressions) {
      int active = 0;
      for (int k = 0; k < rig->num_expressions; ++k)
        if (e[k] != 0.0) {
          ++active;
          CHECK(rig->expression_sides[k] != 0);
        }
      CHECK(active == 1);
    }
  }
  SUBCASE("training split ties left and right") {
    const ExpressionScript s = make_expression_script(*rig, Split::Train, 50, 3);
    for (const auto& e : s.expressions) {
      std::vector<double> left, right;
      for (int k = 0; k < rig->num_expressions; ++k) {
        if (rig->expression_sides[k] > 0) left.push_back(e[k]);
        if (rig->expression_sides[k] < 0) right.push_back(e[k]);
      }
      CHECK(left == right);
    }
  }
}

TEST_CASE("zero-expression frames differ only by camera motion") {
  const auto rig = ldf::testing::small_rig();
  CameraScript cams;
  cams.base = default_camera(16, 16, 2.0);
  cams.head_rotations = {Vec3::Zero(), Vec3::Zero(), Vec3(0, 0.1, 0)};
  ExpressionScript ex;
  ex.expressions.assign(3, std::vector<double>(rig->num_expressions, 0.0));
  ex.jaws.assign(3, Vec3::Zero());
  SynthesisOptions o;
  o.gt_samples = 24;
  const auto frames = synthesize_sequence(*rig, cams, ex, o);
  CHECK(frames[0].image == frames[1].image);
  CHECK(frames[0].image != frames[2].image);
  CHECK(frames[0].landmarks == frames[2].landmarks);
}

TEST_CASE("synthesis rejects bad scripts") {
  const auto rig = ldf::testing::small_rig();
  CameraScript cams;
  cams.base = default_camera(8, 8, 2.0);
  cams.head_rotations = {Vec3::Zero(), Vec3::Zero()};
  ExpressionScript ex;
  ex.expressions.assign(2, std::vector<double>(rig->num_expressions, 0.0));
  ex.jaws.assign(2, Vec3::Zero());
  SynthesisOptions o;
  o.gt_samples = 8;
  SUBCASE("jump") {
    ex.expressions[1][0] = 1.0;
    CHECK_THROWS_AS(synthesize_sequence(*rig, cams, ex, o), std::invalid_argument);
  }
  SUBCASE("length mismatch") {
    ex.jaws.pop_back();
    CHECK_THROWS_AS(synthesize_sequence(*rig, cams, ex, o), std::invalid_argument);
  }
  SUBCASE("camera looking away") {
    Eigen::Matrix4d flip = Eigen::Matrix4d::Identity();
    flip(0, 0) = -1.0;
    flip(2, 2) = -1.0;
    cams.base.extrinsics = flip * cams.base.extrinsics;
    CHECK_THROWS_AS(synthesize_sequence(*rig, cams, ex, o), std::invalid_argument);
  }
}

TEST_CASE("synthesis is reproducible per seed") {
  const auto rig = ldf::testing::small_rig();
  SynthConfig c;
  c.info.rig_seed = 3;
  c.info.num_vertices = 642;
  c.info.width = c.info.height = 12;
  c.info.gt_samples = 16;
  c.train_frames = 2;
  c.test_in_frames = 1;
  c.test_asym_frames = 1;
  c.seed = 4;
  const Dataset a = synthesize_dataset(*rig, c), b = synthesize_dataset(*rig, c);
  c.seed = 5;
  const Dataset d = synthesize_dataset(*rig, c);
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].image == b.frames[i].image);
    CHECK(a.frames[i].expression == b.frames[i].expression);
  }
  CHECK(a.frames[0].expression != d.frames[0].expression);
}

TEST_CASE("dataset directory round trip is bit exact") {
  const Dataset& ds = ldf::testing::tiny_dataset();
  const fs::path dir = temp_dir("roundtrip");
  save_dataset(ds, dir);
  CHECK(fs::exists(dir / "manifest"));
  const Dataset back = load_dataset(dir);
  CHECK(back.info.rig_seed == ds.info.rig_seed);
  CHECK(back.info.fx == ds.info.fx);
  CHECK(back.info.cx == ds.info.cx);
  CHECK(back.info.background == ds.info.background);
  REQUIRE(back.frames.size() == ds.frames.size());
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const TrackedFrame &x = ds.frames[i], &y = back.frames[i];
    CHECK(x.frame_id == y.frame_id);
    CHECK(x.split == y.split);
    CHECK(x.expression == y.expression);
    CHECK(x.pose == y.pose);
    CHECK(x.camera.extrinsics == y.camera.extrinsics);
    CHECK(x.camera.fx == y.camera.fx);
    CHECK(x.camera.width == y.camera.width);
    CHECK(x.landmarks == y.landmarks);
    CHECK(x.image == y.image);
    CHECK(x.fg_mask == y.fg_mask);
  }
  // Saving the loaded copy reproduces every file byte for byte.
  const fs::path again = temp_dir("roundtrip2");
  save_dataset(back, again);
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path other = again / fs::relative(entry.path(), dir);
    std::ifstream a(entry.path(), std::ios::binary), b(other, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
  }
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("loading reports broken datasets") {
  CHECK_THROWS(load_dataset(temp_dir("missing")));
  const fs::path dir = temp_dir("broken");
  fs::create_directories(dir);
  std::ofstream(dir / "manifest") << "format something-else\n";
  CHECK_THROWS(load_dataset(dir));
  fs::remove_all(dir);
}

TEST_CASE("decimal text round trip") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, i % 20 - 10);
    CHECK(parse_double(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK_THROWS_AS(parse_double("1.5x"), std::invalid_argument);
}

TEST_CASE("split names") {
  for (Split s : {Split::Train, Split::TestIn, Split::TestAsym}) CHECK(parse_split(to_string(s)) == s);
  CHECK_THROWS_AS(parse_split("validation"), std::invalid_argument);
}

TEST_CASE("expression standard deviation") {
  TrackedFrame a, b, c;
  a.expression = {1.0, 0.0};
  b.expression = {3.0, 0.0};
  c.expression = {2.0, 0.0};
  const auto s = expression_std({&a, &b, &c});
  REQUIRE(s.size() == 2);
  CHECK(s[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(s[1] == 0.0);
  CHECK(expression_std({}).empty());
}
