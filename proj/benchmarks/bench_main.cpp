#include "ldf/control.hpp"
#include "ldf/dataset.hpp"
#include "ldf/metrics.hpp"
#include "ldf/trainer.hpp"

#include <benchmark/benchmark.h>

#include <memory>
#include <random>

using namespace ldf;

namespace {

std::shared_ptr<const BlendshapeRig> bench_rig() {
  static const auto rig = std::make_shared<const BlendshapeRig>(generate_rig(1, 2562, 16, 34));
  return rig;
}

std::unique_ptr<AvatarModel> bench_model(Variant v) {
  ModelConfig mc;
  mc.volume.resolution = 32;
  auto m = std::make_unique<AvatarModel>(bench_rig(), v, mc, 4, 1);
  m->set_encoding_alpha(10.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (ad::Parameter* p : m->deformation_parameters())
    for (double& x : p->value.data) x = u(rng);
  return m;
}

ad::Matrix points_near_face(int n, std::uint64_t seed) {
  const auto lm = bench_rig()->canonical_landmarks();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(lm.size()) - 1);
  std::uniform_real_distribution<double> off(-0.15, 0.15);
  ad::Matrix x(n, 3);
  for (int i = 0; i < n; ++i) {
    const Vec3 c = lm[pick(rng)];
    for (int a = 0; a < 3; ++a) x(i, a) = c[a] + off(rng);
  }
  return x;
}

}  // namespace

static void BM_CompositeRay(benchmark::State& state) {
  const int S = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> sig(0.5);
  std::vector<double> s(S), d(S, 0.01), z(S);
  std::vector<Vec3> c(S, Vec3(0.5, 0.5, 0.5));
  for (int i = 0; i < S; ++i) {
    s[i] = sig(rng);
    z[i] = 1.0 + 0.01 * i;
  }
  for (auto _ : state) benchmark::DoNotOptimize(composite(s, c, d, z, Vec3::Ones()));
  state.SetItemsProcessed(state.iterations() * S);
}
BENCHMARK(BM_CompositeRay)->Arg(64)->Arg(128);

static void BM_Warp(benchmark::State& state) {
  const auto model = bench_model(state.range(0) ? Variant::GlobalField : Variant::Full);
  const ad::Matrix x = points_near_face(4096, 2);
  const std::vector<double> e(16, 0.3);
  for (auto _ : state) {
    ad::Tape tape(false);
    const FrameContext ctx = model->context(e, {}, model->field_landmarks(e, {}), model->pose_code(tape, 0));
    benchmark::DoNotOptimize(model->warp(tape, tape.constant(x), ctx).value().data.data());
  }
  state.SetItemsProcessed(state.iterations() * x.rows);
  state.SetLabel(state.range(0) ? "global field" : "local fields");
}
BENCHMARK(BM_Warp)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_VolumeQuery(benchmark::State& state) {
  const auto model = bench_model(Variant::Full);
  const ad::Matrix x = points_near_face(4096, 4);
  ad::Matrix dirs(x.rows, 3);
  for (int i = 0; i < x.rows; ++i) dirs(i, 2) = -1.0;
  QueryOptions o;
  o.skip_empty = state.range(0) != 0;
  for (auto _ : state) {
    ad::Tape tape(false);
    benchmark::DoNotOptimize(
        model->volume().query(tape, tape.constant(x), dirs, model->app_code(tape, 0), o).sigma.value().data.data());
  }
  state.SetItemsProcessed(state.iterations() * x.rows);
}
BENCHMARK(BM_VolumeQuery)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_RenderImage(benchmark::State& state) {
  const auto model = bench_model(Variant::Full);
  const int res = static_cast<int>(state.range(0));
  const Camera cam = default_camera(res, res);
  const AvatarView view(*model, default_condition(*model, std::vector<double>(16, 0.0), {}));
  RenderOptions ro;
  ro.samples = 64;
  for (auto _ : state) benchmark::DoNotOptimize(render_image(view, cam, model->bounds(), ro).rgb.data());
  state.SetItemsProcessed(state.iterations() * res * res);
}
BENCHMARK(BM_RenderImage)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  static const Dataset ds = [] {
    SynthConfig c;
    c.info.width = c.info.height = 32;
    c.info.gt_samples = 32;
    c.train_frames = 4;
    c.test_in_frames = 1;
    c.test_asym_frames = 1;
    return synthesize_dataset(*bench_rig(), c);
  }();
  const TrainingData data(ds, bench_rig());
  TrainConfig cfg = TrainConfig::ci();
  cfg.ray_batch = static_cast<int>(state.range(0));
  cfg.pretrain_iters = 1;
  TrainState s = make_state(cfg, data);
  train_step(s, data);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(s, data).total);
  state.SetItemsProcessed(state.iterations() * cfg.ray_batch);
}
BENCHMARK(BM_TrainStep)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_Ssim(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(static_cast<std::size_t>(n) * n * 3), b(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(ssim({&a, n, n, 3}, {&b, n, n, 3}));
}
BENCHMARK(BM_Ssim)->Arg(128);

BENCHMARK_MAIN();
