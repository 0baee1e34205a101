#include "ldf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ldf {

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::fast() {
  TrainConfig c;
  c.profile = "fast";
  c.ray_batch = 512;
  c.samples = 48;
  c.eval_samples = 96;
  c.pretrain_iters = 500;
  c.total_iters = 6000;
  c.anneal_iters = 1000;
  c.upsample_at = 3000;
  c.initial_resolution = 48;
  c.final_resolution = 96;
  return c;
}

TrainConfig TrainConfig::ci() {
  TrainConfig c;
  c.profile = "ci";
  c.ray_batch = 256;
  c.samples = 48;
  c.eval_samples = 64;
  c.pretrain_iters = 200;
  c.total_iters = 2500;
  c.anneal_iters = 500;
  c.upsample_at = 1200;
  c.initial_resolution = 32;
  c.final_resolution = 48;
  c.test_code_iters = 60;
  c.test_code_rays = 256;
  return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "fast") return fast();
  if (name == "ci") return ci();
  throw std::invalid_argument("unknown training profile '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(pretrain_iters >= 0 && pretrain_iters < upsample_at && upsample_at < total_iters))
    throw std::invalid_argument("train config: need pretrain_iters < upsample_at < total_iters");
  if (ray_batch < 1 || samples < 2 || eval_samples < 2) throw std::invalid_argument("train config: batch sizes");
  if (initial_resolution < 2 || final_resolution < initial_resolution)
    throw std::invalid_argument("train config: grid resolutions");
  if (anneal_iters < 1) throw std::invalid_argument("train config: anneal_iters must be positive");
  if (lr_start <= 0.0 || lr_end <= 0.0) throw std::invalid_argument("train config: learning rates");
  if (weights.local < 0 || weights.mesh < 0 || weights.def < 0 || weights.code < 0 || weights.vol < 0 ||
      weights.vol_after_upsample < 0)
    throw std::invalid_argument("train config: loss weights must be nonnegative");
}

double TrainConfig::local_weight() const { return variant == Variant::NoLocalLoss ? 0.0 : weights.local; }

std::string csv_header() { return "iteration,phase,lr,alpha,rgb,local,mesh,def,vol,code,total"; }

std::string to_csv(const StepLog& l) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%ld,%s,%.6e,%.4f,%.8e,%.8e,%.8e,%.8e,%.8e,%.8e,%.8e", l.iteration,
                l.pretrain ? "pretrain" : "train", l.lr, l.alpha, l.rgb, l.local, l.mesh, l.def, l.vol, l.code,
                l.total);
  return buf;
}

// ---------------------------------------------------------------------------

TrainingData::TrainingData(const Dataset& dataset, std::shared_ptr<const BlendshapeRig> rig)
    : dataset_(&dataset), rig_(std::move(rig)) {
  for (const TrackedFrame* f : dataset.split(Split::Train)) {
    Frame fr;
    fr.source = f;
    fr.image = to_doubles(f->image);
    fr.mesh = deform_mesh(*rig_, f->expression, f->jaw());
    train_.push_back(std::move(fr));
  }
  if (train_.empty()) throw std::invalid_argument("training data: dataset has no training frames");
  // Proximity structures point into `mesh`, so build them once frames are in place.
  for (Frame& fr : train_) fr.proximity = std::make_unique<MeshProximity>(*rig_, fr.mesh);
}

ModelConfig model_config(const TrainConfig& config, const DatasetInfo& info) {
  ModelConfig m;
  m.volume.resolution = config.initial_resolution;
  m.volume.background = info.background;
  return m;
}

TrainState make_state(const TrainConfig& config, const TrainingData& data) {
  config.validate();
  TrainState s;
  s.config = config;
  s.model = std::make_unique<AvatarModel>(data.rig_ptr(), config.variant,
                                          model_config(config, data.dataset().info),
                                          static_cast<int>(data.train().size()), config.seed);
  return s;
}

double annealed_alpha(const TrainConfig& config, int n_freqs, long iteration) {
  const double f = static_cast<double>(iteration - config.pretrain_iters) / static_cast<double>(config.anneal_iters);
  return n_freqs * std::clamp(f, 0.0, 1.0);
}

namespace {

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<int> pixel;  // flat pixel index per ray
  ad::Matrix positions, directions, deltas, depths;
};

RayBatch sample_rays(const Camera& camera, const Eigen::AlignedBox3d& bounds, std::span<const Eigen::Vector2i> pixels,
                     int samples, bool stratified, std::mt19937_64& rng) {
  RayBatch b;
  const std::vector<Ray> rays = generate_rays(camera, pixels, bounds);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    if (!rays[i].hit) continue;
    b.rays.push_back(rays[i]);
    b.pixel.push_back(pixels[i].y() * camera.width + pixels[i].x());
  }
  const int R = static_cast<int>(b.rays.size()), S = samples;
  b.positions = ad::Matrix(R * S, 3);
  b.directions = ad::Matrix(R * S, 3);
  b.deltas = ad::Matrix(R, S);
  b.depths = ad::Matrix(R, S);
  for (int r = 0; r < R; ++r) {
    const RaySample s = sample_points(b.rays[r], S, stratified, &rng);
    for (int i = 0; i < S; ++i) {
      for (int a = 0; a < 3; ++a) {
        b.positions(r * S + i, a) = s.positions[i][a];
        b.directions(r * S + i, a) = b.rays[r].direction[a];
      }
      b.deltas(r, i) = s.deltas[i];
      b.depths(r, i) = s.depths[i];
    }
  }
  return b;
}

std::vector<Eigen::Vector2i> random_pixels(int width, int height, int count, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> ux(0, width - 1), uy(0, height - 1);
  std::vector<Eigen::Vector2i> px(static_cast<std::size_t>(count));
  for (auto& p : px) {
    const int x = ux(rng);
    p = {x, uy(rng)};
  }
  return px;
}

ad::Matrix target_colors(const std::vector<double>& image, const std::vector<int>& pixel) {
  ad::Matrix m(static_cast<int>(pixel.size()), 3);
  for (std::size_t r = 0; r < pixel.size(); ++r)
    for (int a = 0; a < 3; ++a) m(static_cast<int>(r), a) = image[static_cast<std::size_t>(pixel[r]) * 3 + a];
  return m;
}

ad::Matrix zero_app(const AvatarModel& model) { return ad::Matrix(1, model.config().app_code_dim); }

// Probe of training frame `index` on `tape` for the local control loss.
FrameProbe make_probe(const AvatarModel& model, const TrackedFrame& frame, const std::vector<Vec3>& field_landmarks,
                      ad::Var pose_code, ad::Var app_code) {
  FrameProbe p;
  p.camera_center = frame.camera.center();
  p.landmarks = frame.landmarks;
  p.background = model.volume().config().background;
  auto ctx = std::make_shared<FrameContext>(
      model.context(frame.expression, frame.pose, field_landmarks, pose_code));
  p.evaluate = [&model, ctx, app_code](ad::Tape& tape, const SampleBatch& batch) {
    QueryOptions q;
    q.skip_empty = true;
    return model.evaluate(tape, batch, *ctx, app_code, false, q);
  };
  p.warp = [&model, ctx](ad::Tape& tape, ad::Var x) { return model.warp(tape, x, *ctx); };
  return p;
}

double scalar(const ad::Var& v) { return v.valid() ? v.value().data[0] : 0.0; }

}  // namespace

StepLog train_step(TrainState& state, const TrainingData& data) {
  const TrainConfig& cfg = state.config;
  AvatarModel& model = *state.model;
  const long it = state.iteration;
  StepLog log;
  log.iteration = it;
  log.pretrain = it < cfg.pretrain_iters;
  const bool upsampled = it >= cfg.upsample_at;
  if (upsampled && model.volume().resolution() < cfg.final_resolution) model.volume().upsample(cfg.final_resolution);
  log.alpha = annealed_alpha(cfg, model.config().n_freqs, it);
  model.set_encoding_alpha(log.alpha);
  log.lr = ad::log_linear_lr(cfg.lr_start, cfg.lr_end, it, cfg.total_iters);

  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(it)));
  const int n_frames = static_cast<int>(data.train().size());
  const int fi = std::uniform_int_distribution<int>(0, n_frames - 1)(rng);
  const TrainingData::Frame& frame = data.train()[fi];
  const TrackedFrame& src = *frame.source;
  const Camera& cam = src.camera;
  const std::vector<Eigen::Vector2i> pixels = random_pixels(cam.width, cam.height, cfg.ray_batch, rng);
  RayBatch batch = sample_rays(cam, model.bounds(), pixels, cfg.samples, true, rng);

  std::vector<ad::Parameter*> params = log.pretrain ? model.volume_parameters() : model.parameters();
  for (ad::Parameter* p : model.parameters()) p->zero_grad();

  ad::Tape tape;
  LossParts parts;
  const int R = static_cast<int>(batch.rays.size());
  const int S = cfg.samples;
  if (R > 0) {
    const std::vector<Vec3> landmarks = model.field_landmarks(src.expression, src.pose);
    ad::Var pose_code = log.pretrain ? tape.constant(ad::Matrix(1, model.config().pose_code_dim))
                                     : model.pose_code(tape, fi);
    ad::Var app_code = log.pretrain ? tape.constant(zero_app(model)) : model.app_code(tape, fi);
    const FrameContext ctx = model.context(src.expression, src.pose, landmarks, pose_code);
    QueryOptions q;
    q.skip_empty = true;
    const SampleBatch sb{tape.constant(batch.positions), batch.directions};
    const FieldOutput out = model.evaluate(tape, sb, ctx, app_code, log.pretrain, q);
    const CompositeBatch comp = composite(out.sigma, out.rgb, batch.deltas, batch.depths,
                                          model.volume().config().background);
    parts.rgb = rgb_loss(comp.rgb, target_colors(frame.image, batch.pixel));
    parts.vol = volume_sparsity(out.sigma);

    if (!log.pretrain) {
      std::vector<std::uint8_t> fg(static_cast<std::size_t>(R) * S), active(fg.size(), 0);
      ad::Matrix targets(R * S, 3);
      for (int r = 0; r < R; ++r) {
        const std::uint8_t f = src.fg_mask[batch.pixel[r]];
        for (int i = 0; i < S; ++i) {
          const std::size_t n = static_cast<std::size_t>(r) * S + i;
          fg[n] = f;
          if (!f || comp.weights(r, i) <= 1e-4) continue;
          active[n] = 1;
          const Vec3 x(batch.positions(static_cast<int>(n), 0), batch.positions(static_cast<int>(n), 1),
                       batch.positions(static_cast<int>(n), 2));
          const SurfacePoint sp = frame.proximity->closest(x);
          const Vec3 t = pseudo_gt_deformation(data.rig(), frame.mesh, sp.face_id, sp.barycentric);
          for (int a = 0; a < 3; ++a) targets(static_cast<int>(n), a) = t[a];
        }
      }
      parts.def = deformation_reg(out.t, fg);
      parts.mesh = mesh_prior_loss(out.t, targets, active);
      parts.code = code_reg(pose_code, app_code);

      if (cfg.local_weight() > 0.0 && n_frames > 1) {
        int gi = std::uniform_int_distribution<int>(0, n_frames - 2)(rng);
        if (gi >= fi) ++gi;
        const TrackedFrame& other = *data.train()[gi].source;
        const int L = static_cast<int>(src.landmarks.size());
        std::vector<int> ids(static_cast<std::size_t>(L));
        std::iota(ids.begin(), ids.end(), 0);
        const int k = std::min(cfg.local_landmarks, L);
        for (int i = 0; i < k; ++i) std::swap(ids[i], ids[std::uniform_int_distribution<int>(i, L - 1)(rng)]);
        ids.resize(static_cast<std::size_t>(k));
        const FrameProbe pa = make_probe(model, src, landmarks, pose_code, app_code);
        const FrameProbe pb = make_probe(model, other, model.field_landmarks(other.expression, other.pose),
                                         model.pose_code(tape, gi), model.app_code(tape, gi));
        LocalControlOptions lo;
        lo.samples = cfg.samples;
        lo.bounds = model.bounds();
        parts.local = local_control_loss(tape, pa, pb, ids, lo);
      }
    }
  }

  LossWeights w = cfg.weights;
  w.local = cfg.local_weight();
  if (log.pretrain) w.local = w.mesh = w.def = w.code = 0.0;
  const ad::Var total = total_loss(tape, parts, w, upsampled);
  if (tape.requires_grad(total)) tape.backward(total);
  state.adam.step(params, log.lr);

  log.rgb = scalar(parts.rgb);
  log.local = scalar(parts.local);
  log.mesh = scalar(parts.mesh);
  log.def = scalar(parts.def);
  log.vol = scalar(parts.vol);
  log.code = scalar(parts.code);
  log.total = scalar(total);
  ++state.iteration;
  return log;
}

void pretrain_canonical(TrainState& state, const TrainingData& data, const StepCallback& on_step) {
  while (state.iteration < state.config.pretrain_iters) {
    const StepLog l = train_step(state, data);
    if (on_step) on_step(l);
  }
}

void train(TrainState& state, const TrainingData& data, const StepCallback& on_step) {
  while (state.iteration < state.config.total_iters) {
    const StepLog l = train_step(state, data);
    if (on_step) on_step(l);
  }
  state.model->set_encoding_alpha(annealed_alpha(state.config, state.model->config().n_freqs, state.iteration));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Eigen::Vector2i> validation_pixels(const TrackedFrame& frame, int count, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x76616cull));
  return random_pixels(frame.camera.width, frame.camera.height, count, rng);
}

ad::Var code_rgb_loss(ad::Tape& tape, const AvatarModel& model, const TrackedFrame& frame,
                      const std::vector<double>& image, const RayBatch& batch, ad::Var pose_code, ad::Var app_code) {
  const std::vector<Vec3> landmarks = model.field_landmarks(frame.expression, frame.pose);
  const FrameContext ctx = model.context(frame.expression, frame.pose, landmarks, pose_code);
  QueryOptions q;
  q.skip_empty = true;
  const FieldOutput out = model.evaluate(tape, {tape.constant(batch.positions), batch.directions}, ctx, app_code, false, q);
  const CompositeBatch comp = composite(out.sigma, out.rgb, batch.deltas, batch.depths, model.volume().config().background);
  return rgb_loss(comp.rgb, target_colors(image, batch.pixel));
}

}  // namespace

double validation_rgb_loss(const AvatarModel& model, const TrackedFrame& frame, const ad::Matrix& pose_code,
                           const ad::Matrix& app_code, int samples, int pixels, std::uint64_t seed) {
  const std::vector<Eigen::Vector2i> px = validation_pixels(frame, pixels, seed);
  std::mt19937_64 rng(0);
  const RayBatch batch = sample_rays(frame.camera, model.bounds(), px, samples, false, rng);
  if (batch.rays.empty()) return 0.0;
  ad::Tape tape(false);
  return code_rgb_loss(tape, model, frame, to_doubles(frame.image), batch, tape.constant(pose_code),
                       tape.constant(app_code))
      .value()
      .data[0];
}

TestCodes optimize_test_codes(const AvatarModel& model, const TrackedFrame& frame, const TrainConfig& config,
                              int iterations) {
  TestCodes out;
  out.pose_code = ad::Matrix(1, model.config().pose_code_dim);
  out.app_code = ad::Matrix(1, model.config().app_code_dim);
  for (int c = 0; c < out.app_code.cols; ++c) out.app_code(0, c) = model.app_codes().value(0, c);

  const std::uint64_t seed = mix_seed(config.seed, 0x7465737400000000ull + static_cast<std::uint64_t>(frame.frame_id));
  const int val_pixels = config.test_code_rays;
  auto val = [&](const ad::Matrix& code) {
    return validation_rgb_loss(model, frame, code, out.app_code, config.samples, val_pixels, seed);
  };
  out.loss_before = val(out.pose_code);
  double best = out.loss_before;
  ad::Matrix best_code = out.pose_code;

  const std::vector<double> image = to_doubles(frame.image);
  auto& mutable_model = const_cast<AvatarModel&>(model);
  const std::vector<ad::Parameter*> frozen = mutable_model.parameters();
  ad::Parameter code("test.pose", out.pose_code);
  ad::Adam adam;
  const int check_every = 50;
  for (int it = 0; it < iterations; ++it) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(it) + 1));
    const auto px = random_pixels(frame.camera.width, frame.camera.height, config.test_code_rays, rng);
    const RayBatch batch = sample_rays(frame.camera, model.bounds(), px, config.samples, true, rng);
    code.zero_grad();
    if (!batch.rays.empty()) {
      ad::Tape tape;
      for (const ad::Parameter* p : frozen) tape.freeze(*p);
      const ad::Var loss = code_rgb_loss(tape, model, frame, image, batch, tape.param(code), tape.constant(out.app_code));
      if (tape.requires_grad(loss)) tape.backward(loss);
    }
    ad::Parameter* step[] = {&code};
    adam.step(step, ad::log_linear_lr(config.lr_start, config.lr_end, it, iterations));
    if ((it + 1) % check_every == 0 || it + 1 == iterations) {
      const double l = val(code.value);
      if (l < best) {
        best = l;
        best_code = code.value;
      }
    }
  }
  out.pose_code = best_code;
  out.loss_after = best;
  return out;
}

FrameCondition default_condition(const AvatarModel& model, std::vector<double> expression,
                                 const std::array<double, 6>& pose) {
  FrameCondition c;
  c.expression = std::move(expression);
  c.pose = pose;
  c.pose_code = ad::Matrix(1, model.config().pose_code_dim);
  c.app_code = ad::Matrix(1, model.config().app_code_dim);
  for (int k = 0; k < c.pose_code.cols; ++k) c.pose_code(0, k) = model.pose_codes().value(0, k);
  for (int k = 0; k < c.app_code.cols; ++k) c.app_code(0, k) = model.app_codes().value(0, k);
  return c;
}

EvalReport evaluate(const AvatarModel& model, const std::vector<const TrackedFrame*>& frames,
                    const TrainConfig& config, bool optimize_codes) {
  EvalReport rep;
  for (const TrackedFrame* f : frames) {
    FrameCondition cond;
    cond.expression = f->expression;
    cond.pose = f->pose;
    if (optimize_codes) {
      const TestCodes tc = optimize_test_codes(model, *f, config, config.test_code_iters);
      cond.pose_code = tc.pose_code;
      cond.app_code = tc.app_code;
    } else {
      cond = default_condition(model, f->expression, f->pose);
      cond.pose_code = ad::Matrix(1, model.config().pose_code_dim);
    }
    const AvatarView view(model, cond);
    RenderOptions ro;
    ro.samples = config.eval_samples;
    ro.threads = config.threads;
    const RenderedImage img = render_image(view, f->camera, model.bounds(), ro);
    FrameEval fe;
    fe.frame_id = f->frame_id;
    fe.metrics = compare_images(img.rgb, to_doubles(f->image), img.width, img.height);
    rep.frames.push_back(fe);
  }
  if (!rep.frames.empty()) {
    for (const FrameEval& fe : rep.frames) {
      rep.mean.l1 += fe.metrics.l1;
      rep.mean.psnr += fe.metrics.psnr;
      rep.mean.ssim += fe.metrics.ssim;
    }
    const double n = static_cast<double>(rep.frames.size());
    rep.mean.l1 /= n;
    rep.mean.psnr /= n;
    rep.mean.ssim /= n;
  }
  return rep;
}

double landmark_scatter(const AvatarModel& model, const TrainingData& data, int pairs, int samples,
                        std::uint64_t seed) {
  const int n = static_cast<int>(data.train().size());
  if (n < 2) throw std::invalid_argument("landmark_scatter: need two training frames");
  std::mt19937_64 rng(mix_seed(seed, 0x736361ull));
  LocalControlOptions lo;
  lo.samples = samples;
  lo.bounds = model.bounds();
  double total = 0.0;
  int counted = 0;
  for (int p = 0; p < pairs; ++p) {
    const int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
    int b = std::uniform_int_distribution<int>(0, n - 2)(rng);
    if (b >= a) ++b;
    const TrackedFrame& fa = *data.train()[a].source;
    const TrackedFrame& fb = *data.train()[b].source;
    ad::Tape tape(false);
    const FrameProbe pa = make_probe(model, fa, model.field_landmarks(fa.expression, fa.pose),
                                     model.pose_code(tape, a), model.app_code(tape, a));
    const FrameProbe pb = make_probe(model, fb, model.field_landmarks(fb.expression, fb.pose),
                                     model.pose_code(tape, b), model.app_code(tape, b));
    std::vector<int> ids(fa.landmarks.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::vector<std::uint8_t> va, vb;
    const ad::Matrix xa = landmark_intersections(tape, pa, ids, lo, &va).value();
    const ad::Matrix xb = landmark_intersections(tape, pb, ids, lo, &vb).value();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!va[i] || !vb[i]) continue;
      const int r = static_cast<int>(i);
      total += std::abs(xa(r, 0) - xb(r, 0)) + std::abs(xa(r, 1) - xb(r, 1)) + std::abs(xa(r, 2) - xb(r, 2));
      ++counted;
    }
  }
  return counted ? total / counted : 0.0;
}

}  // namespace ldf
