#include "service.hpp"

#include "ldf/checkpoint.hpp"
#include "ldf/control.hpp"
#include "ldf/dataset.hpp"
#include "ldf/image.hpp"
#include "ldf/trainer.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace ldf;

namespace {

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_double(item.substr(item.find_first_not_of(" \t"))));
  }
  return out;
}

std::vector<int> parse_ids(const std::string& text) {
  std::vector<int> out;
  for (double v : parse_list(text)) out.push_back(static_cast<int>(v));
  return out;
}

std::shared_ptr<const AvatarModel> load_model(const std::string& path) {
  TrainState s = load_checkpoint(path);
  return std::shared_ptr<const AvatarModel>(std::move(s.model));
}

std::string frame_name(const fs::path& dir, const std::string& stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04d.png", i);
  return (dir / (stem + buf)).string();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t rig_seed = 1;
  std::uint64_t seed = 7;
  int vertices = 2562;
  int size = 128;
  int train = 300, test_in = 30, test_asym = 30;
  int samples = 128;
  int threads = 1;
};

int cmd_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.info.rig_seed = a.rig_seed;
  cfg.info.num_vertices = a.vertices;
  cfg.info.width = cfg.info.height = a.size;
  cfg.info.gt_samples = a.samples;
  cfg.train_frames = a.train;
  cfg.test_in_frames = a.test_in;
  cfg.test_asym_frames = a.test_asym;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  const BlendshapeRig rig = generate_rig(a.rig_seed, a.vertices, cfg.info.num_expressions, cfg.info.num_landmarks);
  const Dataset ds = synthesize_dataset(rig, cfg);
  save_dataset(ds, a.out);
  std::cout << "wrote " << ds.frames.size() << " frames (" << ds.split(Split::Train).size() << " train, "
            << ds.split(Split::TestIn).size() << " test_in, " << ds.split(Split::TestAsym).size()
            << " test_asym) to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, log, resume, profile = "desk", variant = "full";
  std::uint64_t seed = 0;
  long total_iters = -1, pretrain_iters = -1, upsample_at = -1, anneal_iters = -1;
  int ray_batch = -1, samples = -1, threads = 1;
  long checkpoint_every = 0, stop_after = -1;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const Dataset ds = load_dataset(a.data);
  auto rig = std::make_shared<const BlendshapeRig>(
      generate_rig(ds.info.rig_seed, ds.info.num_vertices, ds.info.num_expressions, ds.info.num_landmarks));
  TrainingData data(ds, rig);
  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    if (state.model->rig().seed != rig->seed || state.model->num_train_frames() != static_cast<int>(data.train().size()))
      throw std::runtime_error("checkpoint does not match the dataset");
  } else {
    TrainConfig cfg = TrainConfig::preset(a.profile);
    cfg.variant = parse_variant(a.variant);
    cfg.seed = a.seed;
    if (a.total_iters >= 0) cfg.total_iters = a.total_iters;
    if (a.pretrain_iters >= 0) cfg.pretrain_iters = a.pretrain_iters;
    if (a.upsample_at >= 0) cfg.upsample_at = a.upsample_at;
    if (a.anneal_iters >= 0) cfg.anneal_iters = a.anneal_iters;
    if (a.ray_batch > 0) cfg.ray_batch = a.ray_batch;
    if (a.samples > 0) cfg.samples = a.samples;
    state = make_state(cfg, data);
  }
  state.config.threads = a.threads;

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot open log " + a.log);
    if (a.resume.empty()) log << csv_header() << "\n";
  }
  const auto start = std::chrono::steady_clock::now();
  auto on_step = [&](const StepLog& l) {
    if (log) log << to_csv(l) << "\n";
    if (!a.quiet && (l.iteration % 100 == 0 || l.iteration + 1 == state.config.total_iters)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "iter %ld/%ld %s total %.5f rgb %.5f (%.0fs)\n", l.iteration, state.config.total_iters,
                   l.pretrain ? "pretrain" : "train", l.total, l.rgb, secs);
    }
    if (a.checkpoint_every > 0 && (l.iteration + 1) % a.checkpoint_every == 0) save_checkpoint(state, a.out);
  };
  if (a.stop_after >= 0) {
    while (state.iteration < std::min(a.stop_after, state.config.total_iters)) on_step(train_step(state, data));
  } else {
    train(state, data, on_step);
  }
  save_checkpoint(state, a.out);
  std::cout << "saved " << a.out << " after " << state.iteration << " iterations\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data, ckpt, split = "test_in";
  int frames = -1, code_iters = -1, threads = 1;
  bool no_codes = false;
};

int cmd_eval(const EvalArgs& a) {
  const Dataset ds = load_dataset(a.data);
  TrainState state = load_checkpoint(a.ckpt);
  state.config.threads = a.threads;
  if (a.code_iters >= 0) state.config.test_code_iters = a.code_iters;
  std::vector<const TrackedFrame*> frames = ds.split(parse_split(a.split));
  if (a.frames >= 0 && static_cast<std::size_t>(a.frames) < frames.size()) frames.resize(a.frames);
  const EvalReport rep = evaluate(*state.model, frames, state.config, !a.no_codes);
  for (const FrameEval& f : rep.frames)
    std::printf("frame %d l1 %.6f psnr %.4f ssim %.6f\n", f.frame_id, f.metrics.l1, f.metrics.psnr, f.metrics.ssim);
  std::printf("mean l1 %.6f psnr %.4f ssim %.6f frames %zu split %s\n", rep.mean.l1, rep.mean.psnr, rep.mean.ssim,
              rep.frames.size(), a.split.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string ckpt, out, expression, pose, fields, field_expression;
  int resolution = 128, samples = 128, threads = 1;
  bool depth = false;
};

int cmd_render(const RenderArgs& a) {
  auto model = load_model(a.ckpt);
  const int E = model->rig().num_expressions;
  service::RenderRequest req;
  req.expression = a.expression.empty() ? std::vector<double>(E, 0.0) : parse_list(a.expression);
  if (static_cast<int>(req.expression.size()) != E)
    throw std::invalid_argument("--expression needs " + std::to_string(E) + " values");
  if (!a.pose.empty()) {
    const auto p = parse_list(a.pose);
    if (p.size() != 6) throw std::invalid_argument("--pose needs 6 values");
    std::copy(p.begin(), p.end(), req.pose.begin());
  }
  if (!a.fields.empty()) {
    FieldOverride o{parse_ids(a.fields), parse_list(a.field_expression)};
    if (static_cast<int>(o.expression.size()) != E)
      throw std::invalid_argument("--field-expression needs " + std::to_string(E) + " values");
    req.overrides.push_back(o);
  }
  req.resolution = a.resolution;
  RenderOptions ro;
  ro.samples = a.samples;
  ro.threads = a.threads;
  const service::RenderService svc(model, ro);
  write_png(a.out, a.depth ? svc.depth(req) : svc.render(req));
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ReenactArgs {
  std::string ckpt, driver, session, split = "train", out;
  int frames = -1, samples = 128, threads = 1;
};

int cmd_reenact(const ReenactArgs& a) {
  auto model = load_model(a.ckpt);
  fs::create_directories(a.out);
  RenderOptions ro;
  ro.samples = a.samples;
  ro.threads = a.threads;
  int written = 0;
  if (!a.session.empty()) {
    const service::RenderService svc(model, ro);
    std::ifstream in(a.session);
    if (!in) throw std::runtime_error("cannot open session " + a.session);
    std::ostringstream text;
    text << in.rdbuf();
    for (const auto& req : service::parse_session(text.str(), model->rig().num_expressions, svc.num_fields())) {
      if (a.frames >= 0 && written >= a.frames) break;
      write_png(frame_name(a.out, "frame", written++), svc.render(req));
    }
  } else {
    const Dataset ds = load_dataset(a.driver);
    if (ds.info.num_expressions != model->rig().num_expressions)
      throw std::runtime_error("driver expression dimension does not match the model");
    auto frames = ds.split(parse_split(a.split));
    if (a.frames >= 0 && static_cast<std::size_t>(a.frames) < frames.size()) frames.resize(a.frames);
    const ReenactResult r = reenact(*model, default_camera(ds.info.width, ds.info.height), driver_from_frames(frames), ro);
    for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
    for (const RenderedImage& img : r.images)
      write_png(frame_name(a.out, "frame", written++), to_image8(img.rgb, img.width, img.height, 3));
  }
  std::cout << "wrote " << written << " frames to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string ckpt, data, host = "127.0.0.1";
  int port = 8080, samples = 96, threads = 1;
};

int cmd_serve(const ServeArgs& a) {
  auto model = load_model(a.ckpt);
  RenderOptions ro;
  ro.samples = a.samples;
  ro.threads = a.threads;
  service::RenderService svc(model, ro);
  if (!a.data.empty()) {
    const Dataset ds = load_dataset(a.data);
    svc.set_expression_std(expression_std(ds.split(Split::Train)));
  }
  httplib::Server server;
  service::install_routes(server, svc);
  std::cout << "serving " << a.ckpt << " on http://" << a.host << ":" << a.port << std::endl;
  if (!server.listen(a.host, a.port)) throw std::runtime_error("cannot listen on port " + std::to_string(a.port));
  return 0;
}

// ---------------------------------------------------------------------------

struct MaskArgs {
  std::string ckpt;
  std::uint64_t rig_seed = 1;
  int vertices = 2562, landmarks = 34;
};

int cmd_mask(const MaskArgs& a) {
  if (!a.ckpt.empty()) {
    std::cout << to_text(load_model(a.ckpt)->mask());
    return 0;
  }
  const BlendshapeRig rig = generate_rig(a.rig_seed, a.vertices, 16, a.landmarks);
  std::cout << to_text(binarize(displacement_matrix(rig)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local deformation field head avatars: data synthesis, training, evaluation and rendering"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "Render a synthetic tracked dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--rig-seed", sa.rig_seed, "Seed of the procedural head")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Seed of the expression and camera scripts")->capture_default_str();
  synth->add_option("--vertices", sa.vertices, "Mesh vertex count (icosphere size)")->capture_default_str();
  synth->add_option("--size", sa.size, "Image width and height in pixels")->capture_default_str();
  synth->add_option("--train", sa.train, "Training frames")->capture_default_str();
  synth->add_option("--test-in", sa.test_in, "In-distribution test frames")->capture_default_str();
  synth->add_option("--test-asym", sa.test_asym, "Asymmetric-expression test frames")->capture_default_str();
  synth->add_option("--samples", sa.samples, "Samples per ray for ground truth")->capture_default_str();
  synth->add_option("--threads", sa.threads, "Render threads")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train an avatar on a dataset");
  tr->add_option("--data", ta.data, "Dataset directory")->required();
  tr->add_option("--out", ta.out, "Checkpoint to write")->required();
  tr->add_option("--profile", ta.profile, "Schedule preset: desk, fast or ci")->capture_default_str();
  tr->add_option("--variant", ta.variant, "full, no_mask, no_local_loss, global_field or k5")->capture_default_str();
  tr->add_option("--seed", ta.seed, "Model and sampling seed")->capture_default_str();
  tr->add_option("--total-iters", ta.total_iters, "Override the total iteration count");
  tr->add_option("--pretrain-iters", ta.pretrain_iters, "Override the canonical pre-training length");
  tr->add_option("--upsample-at", ta.upsample_at, "Override the grid upsampling iteration");
  tr->add_option("--anneal-iters", ta.anneal_iters, "Override the encoding annealing length");
  tr->add_option("--ray-batch", ta.ray_batch, "Override rays per iteration");
  tr->add_option("--samples", ta.samples, "Override samples per ray");
  tr->add_option("--log", ta.log, "CSV training log");
  tr->add_option("--resume", ta.resume, "Continue from this checkpoint");
  tr->add_option("--checkpoint-every", ta.checkpoint_every, "Also save every N iterations");
  tr->add_option("--stop-after", ta.stop_after, "Save and exit once this iteration count is reached");
  tr->add_option("--threads", ta.threads, "Threads for evaluation renders")->capture_default_str();
  tr->add_flag("--quiet", ta.quiet, "No progress output");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split (L1, PSNR, SSIM)");
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  ev->add_option("--split", ea.split, "train, test_in or test_asym")->capture_default_str();
  ev->add_option("--frames", ea.frames, "Evaluate only the first N frames");
  ev->add_option("--code-iters", ea.code_iters, "Test-code optimization iterations");
  ev->add_flag("--no-code-opt", ea.no_codes, "Skip test-code optimization");
  ev->add_option("--threads", ea.threads, "Render threads")->capture_default_str();

  RenderArgs ra;
  auto* rd = app.add_subcommand("render", "Render one image (or its depth) for an expression and pose");
  rd->add_option("--ckpt", ra.ckpt, "Checkpoint")->required();
  rd->add_option("--out", ra.out, "Output PNG")->required();
  rd->add_option("--expression", ra.expression, "Comma-separated expression coefficients (default zeros)");
  rd->add_option("--pose", ra.pose, "Comma-separated head and jaw axis-angles (6 values)");
  rd->add_option("--fields", ra.fields, "Comma-separated field ids receiving --field-expression");
  rd->add_option("--field-expression", ra.field_expression, "Expression injected into --fields");
  rd->add_option("--resolution", ra.resolution, "Image size in pixels")->capture_default_str();
  rd->add_option("--samples", ra.samples, "Samples per ray")->capture_default_str();
  rd->add_option("--threads", ra.threads, "Render threads")->capture_default_str();
  rd->add_flag("--depth", ra.depth, "Write the depth image instead of colour");

  ReenactArgs re;
  auto* rn = app.add_subcommand("reenact", "Drive a trained avatar with another performance or a saved session");
  rn->add_option("--ckpt", re.ckpt, "Checkpoint")->required();
  rn->add_option("--out", re.out, "Output directory for frame_NNNN.png")->required();
  auto* drv = rn->add_option("--driver", re.driver, "Dataset whose expressions and poses drive the avatar");
  auto* ses = rn->add_option("--session", re.session, "Session file: header line, then one JSON render request per frame");
  drv->excludes(ses);
  rn->add_option("--split", re.split, "Driver split")->capture_default_str();
  rn->add_option("--frames", re.frames, "Only the first N frames");
  rn->add_option("--samples", re.samples, "Samples per ray")->capture_default_str();
  rn->add_option("--threads", re.threads, "Render threads")->capture_default_str();

  ServeArgs sv;
  auto* se = app.add_subcommand("serve", "HTTP render service (GET /meta, POST /render, GET|POST /depth)");
  se->add_option("--ckpt", sv.ckpt, "Checkpoint")->required();
  se->add_option("--data", sv.data, "Dataset whose training split sets the expression ranges reported by /meta");
  se->add_option("--host", sv.host, "Bind address")->capture_default_str();
  se->add_option("--port", sv.port, "Port")->capture_default_str();
  se->add_option("--samples", sv.samples, "Samples per ray")->capture_default_str();
  se->add_option("--threads", sv.threads, "Render threads per request")->capture_default_str();

  MaskArgs ma;
  auto* mk = app.add_subcommand("mask", "Print the attention mask (one landmark per line)");
  mk->add_option("--ckpt", ma.ckpt, "Read the mask of this checkpoint");
  mk->add_option("--rig-seed", ma.rig_seed, "Otherwise build it for this rig seed")->capture_default_str();
  mk->add_option("--vertices", ma.vertices, "Rig vertex count")->capture_default_str();
  mk->add_option("--landmarks", ma.landmarks, "Landmark count (5 or 34)")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(sa);
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_eval(ea);
    if (*rd) return cmd_render(ra);
    if (*rn) {
      if (re.driver.empty() && re.session.empty()) throw std::invalid_argument("reenact needs --driver or --session");
      return cmd_reenact(re);
    }
    if (*se) return cmd_serve(sv);
    if (*mk) return cmd_mask(ma);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
