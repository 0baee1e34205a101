#include "ldf/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ldf {

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::TestIn: return "test_in";
    case Split::TestAsym: return "test_asym";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test_in") return Split::TestIn;
  if (text == "test_asym") return Split::TestAsym;
  throw std::invalid_argument("unknown split '" + text + "'");
}

// ---------------------------------------------------------------------------

BlobField::BlobField(const BlendshapeRig& rig, const MeshState& mesh, Vec3 background)
    : rig_(&rig), centers_(mesh.vertices), background_(std::move(background)) {
  const double edge = rig.mean_edge_length();
  radius_ = 1.5 * edge;
  gain_ = 0.25 / edge;
  cutoff_ = 3.0 * radius_;
  Eigen::AlignedBox3d box;
  for (const Vec3& c : centers_) box.extend(c);
  origin_ = box.min() - Vec3::Constant(cutoff_);
  const Vec3 extent = box.sizes() + Vec3::Constant(2.0 * cutoff_);
  for (int a = 0; a < 3; ++a) dims_[a] = std::max(1, static_cast<int>(std::ceil(extent[a] / cutoff_)));
  const int cells = dims_[0] * dims_[1] * dims_[2];
  std::vector<int> cell_of(centers_.size());
  std::vector<int> counts(static_cast<std::size_t>(cells) + 1, 0);
  for (std::size_t v = 0; v < centers_.size(); ++v) {
    int idx[3];
    for (int a = 0; a < 3; ++a)
      idx[a] = std::clamp(static_cast<int>((centers_[v][a] - origin_[a]) / cutoff_), 0, dims_[a] - 1);
    cell_of[v] = (idx[0] * dims_[1] + idx[1]) * dims_[2] + idx[2];
    ++counts[cell_of[v] + 1];
  }
  for (int c = 0; c < cells; ++c) counts[c + 1] += counts[c];
  cell_start_ = counts;
  cell_items_.resize(centers_.size());
  std::vector<int> fill(counts.begin(), counts.end() - 1);
  for (std::size_t v = 0; v < centers_.size(); ++v) cell_items_[fill[cell_of[v]]++] = static_cast<int>(v);
}

void BlobField::accumulate(const Vec3& x, double& sigma, Vec3& color) const {
  double total = 0.0;
  Vec3 c = Vec3::Zero();
  int base[3];
  for (int a = 0; a < 3; ++a) base[a] = static_cast<int>(std::floor((x[a] - origin_[a]) / cutoff_));
  const double inv = 1.0 / (2.0 * radius_ * radius_);
  const double cut2 = cutoff_ * cutoff_;
  for (int i = base[0] - 1; i <= base[0] + 1; ++i) {
    if (i < 0 || i >= dims_[0]) continue;
    for (int j = base[1] - 1; j <= base[1] + 1; ++j) {
      if (j < 0 || j >= dims_[1]) continue;
      for (int k = base[2] - 1; k <= base[2] + 1; ++k) {
        if (k < 0 || k >= dims_[2]) continue;
        const int cell = (i * dims_[1] + j) * dims_[2] + k;
        for (int n = cell_start_[cell]; n < cell_start_[cell + 1]; ++n) {
          const int v = cell_items_[n];
          const double d2 = (x - centers_[v]).squaredNorm();
          if (d2 >= cut2) continue;
          const double g = std::exp(-d2 * inv);
          total += g;
          c += g * rig_->vertex_colors[v];
        }
      }
    }
  }
  sigma = gain_ * total;
  color = total > 0.0 ? Vec3(c / total) : background_;
}

double BlobField::density(const Vec3& x) const {
  double s;
  Vec3 c;
  accumulate(x, s, c);
  return s;
}

FieldOutput BlobField::evaluate(ad::Tape& tape, const SampleBatch& batch) const {
  const ad::Matrix& x = batch.positions.value();
  ad::Matrix sigma(x.rows, 1), rgb(x.rows, 3);
  for (int n = 0; n < x.rows; ++n) {
    Vec3 c;
    accumulate(Vec3(x(n, 0), x(n, 1), x(n, 2)), sigma.data[n], c);
    for (int a = 0; a < 3; ++a) rgb(n, a) = c[a];
  }
  FieldOutput out;
  out.sigma = tape.constant(std::move(sigma));
  out.rgb = tape.constant(std::move(rgb));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> expression_std(const std::vector<const TrackedFrame*>& frames) {
  if (frames.empty()) return {};
  const std::size_t E = frames[0]->expression.size();
  std::vector<double> mean(E, 0.0), var(E, 0.0);
  for (const TrackedFrame* f : frames)
    for (std::size_t k = 0; k < E; ++k) mean[k] += f->expression.at(k);
  for (double& m : mean) m /= static_cast<double>(frames.size());
  for (const TrackedFrame* f : frames)
    for (std::size_t k = 0; k < E; ++k) var[k] += (f->expression[k] - mean[k]) * (f->expression[k] - mean[k]);
  for (double& v : var) v = std::sqrt(v / static_cast<double>(frames.size()));
  return var;
}

Camera default_camera(int width, int height, double distance) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = 1.67 * width;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.extrinsics = Eigen::Matrix4d::Identity();
  cam.extrinsics.topLeftCorner<3, 3>() = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
  cam.extrinsics.topRightCorner<3, 1>() = Vec3(0.0, 0.0, distance);
  return cam;
}

Camera posed_camera(const Camera& base, const Vec3& head_rotation) {
  Camera cam = base;
  cam.extrinsics.topLeftCorner<3, 3>() = base.extrinsics.topLeftCorner<3, 3>() * axis_angle(head_rotation);
  return cam;
}

CameraScript make_camera_script(const Camera& base, int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double p0 = phase(rng), p1 = phase(rng), p2 = phase(rng);
  CameraScript s;
  s.base = base;
  for (int f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f);
    const double yaw = 0.30 * std::sin(2.0 * std::numbers::pi * t / 97.0 + p0);
    const double pitch = 0.12 * std::sin(2.0 * std::numbers::pi * t / 61.0 + p1);
    const double roll = 0.05 * std::sin(2.0 * std::numbers::pi * t / 43.0 + p2);
    const Eigen::Matrix3d R = (Eigen::AngleAxisd(yaw, Vec3::UnitY()) * Eigen::AngleAxisd(pitch, Vec3::UnitX()) *
                               Eigen::AngleAxisd(roll, Vec3::UnitZ()))
                                  .toRotationMatrix();
    const Eigen::AngleAxisd aa(R);
    s.head_rotations.push_back(aa.angle() * aa.axis());
  }
  return s;
}

namespace {

/// Groups of basis indices driven together: left/right pairs share a group.
std::vector<std::vector<int>> symmetric_groups(const BlendshapeRig& rig) {
  std::vector<std::vector<int>> groups;
  std::vector<bool> used(static_cast<std::size_t>(rig.num_expressions), false);
  for (int k = 0; k < rig.num_expressions; ++k) {
    if (used[k]) continue;
    used[k] = true;
    std::vector<int> g{k};
    if (rig.expression_sides[k] != 0) {
      for (int j = k + 1; j < rig.num_expressions; ++j)
        if (!used[j] && rig.expression_sides[j] == -rig.expression_sides[k]) {
          used[j] = true;
          g.push_back(j);
          break;
        }
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

}  // namespace

ExpressionScript make_expression_script(const BlendshapeRig& rig, Split split, int frames, std::uint64_t seed) {
  const int E = rig.num_expressions;
  ExpressionScript s;
  s.expressions.assign(static_cast<std::size_t>(frames), std::vector<double>(static_cast<std::size_t>(E), 0.0));
  s.jaws.assign(static_cast<std::size_t>(frames), Vec3::Zero());
  std::mt19937_64 rng(seed ^ (0x5851F42D4C957F2Dull * (static_cast<std::uint64_t>(split) + 1)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  if (split == Split::TestAsym) {
    std::vector<int> one_sided;
    for (int k = 0; k < E; ++k)
      if (rig.expression_sides[k] != 0) one_sided.push_back(k);
    if (one_sided.empty()) throw std::invalid_argument("make_expression_script: rig has no one-sided bases");
    const double ramp[] = {0.3, 0.6, 0.9, 0.6, 0.3};
    for (int f = 0; f < frames; ++f) {
      const int k = one_sided[(f / 5) % one_sided.size()];
      s.expressions[f][k] = ramp[f % 5];
    }
    return s;
  }

  for (const std::vector<int>& g : symmetric_groups(rig)) {
    const double period = 40.0 + 60.0 * unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double amp = 0.6 + 0.4 * unit(rng);
    for (int f = 0; f < frames; ++f) {
      const double v = amp * std::max(0.0, std::sin(2.0 * std::numbers::pi * f / period + phase));
      for (int k : g) s.expressions[f][k] = v;
    }
  }
  const double period = 50.0 + 30.0 * unit(rng);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  for (int f = 0; f < frames; ++f)
    s.jaws[f] = Vec3(0.1 * std::max(0.0, std::sin(2.0 * std::numbers::pi * f / period + phase)), 0.0, 0.0);
  return s;
}

std::vector<TrackedFrame> synthesize_sequence(const BlendshapeRig& rig, const CameraScript& cameras,
                                              const ExpressionScript& expressions,
                                              const SynthesisOptions& options) {
  const std::size_t n = cameras.head_rotations.size();
  if (expressions.expressions.size() != n || expressions.jaws.size() != n)
    throw std::invalid_argument("synthesize_sequence: script lengths differ");
  for (std::size_t f = 0; f < n; ++f) {
    if (static_cast<int>(expressions.expressions[f].size()) != rig.num_expressions)
      throw std::invalid_argument("synthesize_sequence: expression vector has wrong length");
    if (f == 0) continue;
    for (int k = 0; k < rig.num_expressions; ++k)
      if (std::abs(expressions.expressions[f][k] - expressions.expressions[f - 1][k]) > kMaxExpressionStep)
        throw std::invalid_argument("synthesize_sequence: expression trajectory is not smooth");
    if ((cameras.head_rotations[f] - cameras.head_rotations[f - 1]).norm() > kMaxRotationStep ||
        (expressions.jaws[f] - expressions.jaws[f - 1]).norm() > kMaxRotationStep)
      throw std::invalid_argument("synthesize_sequence: pose trajectory is not smooth");
  }
  const Vec3 head_center = rig.bounding_box().center();
  bool seen = n == 0;
  for (std::size_t f = 0; f < n && !seen; ++f) {
    const auto p = posed_camera(cameras.base, cameras.head_rotations[f]).project(head_center);
    seen = p && p->x() >= 0 && p->y() >= 0 && p->x() < cameras.base.width && p->y() < cameras.base.height;
  }
  if (!seen) throw std::invalid_argument("synthesize_sequence: the camera never views the head");

  const Eigen::AlignedBox3d bounds = inflate_box(rig.bounding_box());
  std::vector<TrackedFrame> frames;
  frames.reserve(n);
  for (std::size_t f = 0; f < n; ++f) {
    TrackedFrame fr;
    fr.frame_id = options.first_frame_id + static_cast<int>(f);
    fr.split = options.split;
    fr.expression = expressions.expressions[f];
    const Vec3 rot = cameras.head_rotations[f], jaw = expressions.jaws[f];
    fr.pose = {rot.x(), rot.y(), rot.z(), jaw.x(), jaw.y(), jaw.z()};
    fr.camera = posed_camera(cameras.base, rot);
    const MeshState mesh = deform_mesh(rig, fr.expression, jaw);
    fr.landmarks = mesh_landmarks(rig, mesh);
    const BlobField blobs(rig, mesh, options.background);
    RenderOptions ro;
    ro.samples = options.gt_samples;
    ro.threads = options.threads;
    const RenderedImage img = render_image(blobs, fr.camera, bounds, ro);
    fr.image = to_image8(img.rgb, img.width, img.height, 3);
    fr.fg_mask.resize(img.alpha.size());
    for (std::size_t i = 0; i < img.alpha.size(); ++i) fr.fg_mask[i] = img.alpha[i] > 0.5 ? 1 : 0;
    frames.push_back(std::move(fr));
  }
  return frames;
}

// ---------------------------------------------------------------------------

std::vector<const TrackedFrame*> Dataset::split(Split s) const {
  std::vector<const TrackedFrame*> out;
  for (const TrackedFrame& f : frames)
    if (f.split == s) out.push_back(&f);
  return out;
}

Eigen::AlignedBox3d Dataset::bounds(const BlendshapeRig& rig) const { return inflate_box(rig.bounding_box()); }

Dataset synthesize_dataset(const BlendshapeRig& rig, const SynthConfig& config) {
  Dataset ds;
  ds.info = config.info;
  ds.info.rig_seed = rig.seed;
  ds.info.num_vertices = rig.num_vertices();
  ds.info.num_expressions = rig.num_expressions;
  ds.info.num_landmarks = rig.num_landmarks();
  const Camera base = default_camera(config.info.width, config.info.height);
  ds.info.fx = base.fx;
  ds.info.fy = base.fy;
  ds.info.cx = base.cx;
  ds.info.cy = base.cy;
  const std::pair<Split, int> plan[] = {
      {Split::Train, config.train_frames}, {Split::TestIn, config.test_in_frames}, {Split::TestAsym, config.test_asym_frames}};
  std::uint64_t salt = 0;
  for (const auto& [split, count] : plan) {
    ++salt;
    if (count <= 0) continue;
    const CameraScript cams = make_camera_script(base, count, config.seed * 1000003ull + salt);
    const ExpressionScript expr = make_expression_script(rig, split, count, config.seed + salt);
    SynthesisOptions opt;
    opt.gt_samples = config.info.gt_samples;
    opt.threads = config.threads;
    opt.background = config.info.background;
    opt.split = split;
    opt.first_frame_id = static_cast<int>(ds.frames.size());
    for (TrackedFrame& f : synthesize_sequence(rig, cams, expr, opt)) ds.frames.push_back(std::move(f));
  }
  return ds;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw std::invalid_argument("not a number: '" + text + "'");
  return v;
}

namespace {

using KeyValues = std::map<std::string, std::vector<std::string>>;

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  KeyValues kv;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    std::vector<std::string> values;
    for (std::string v; ls >> v;) values.push_back(v);
    kv[key] = std::move(values);
  }
  return kv;
}

const std::vector<std::string>& require(const KeyValues& kv, const std::string& key, std::size_t count,
                                        const std::filesystem::path& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::runtime_error(path.string() + ": missing '" + key + "'");
  if (count && it->second.size() != count)
    throw std::runtime_error(path.string() + ": '" + key + "' expects " + std::to_string(count) + " values");
  return it->second;
}

long parse_int(const std::string& s) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
  return v;
}

std::string frame_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", id);
  return buf;
}

template <typename Range>
void write_numbers(std::ostream& out, const char* key, const Range& values) {
  out << key;
  for (double v : values) out << ' ' << format_double(v);
  out << '\n';
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "frames", ec);
  if (ec || !fs::is_directory(dir / "frames"))
    throw std::runtime_error("cannot create dataset directory " + dir.string());
  {
    std::ofstream m(dir / "manifest");
    if (!m) throw std::runtime_error("cannot write " + (dir / "manifest").string());
    const DatasetInfo& i = ds.info;
    m << "format ldf-dataset\nversion 1\n";
    m << "rig_seed " << i.rig_seed << "\nnum_vertices " << i.num_vertices << "\nnum_expressions "
      << i.num_expressions << "\nnum_landmarks " << i.num_landmarks << "\nwidth " << i.width << "\nheight "
      << i.height << "\nfx " << format_double(i.fx) << "\nfy " << format_double(i.fy) << "\ncx "
      << format_double(i.cx) << "\ncy " << format_double(i.cy) << "\ngt_samples " << i.gt_samples << '\n';
    write_numbers(m, "background", i.background);
    m << "frames " << ds.frames.size() << '\n';
    m << "train " << ds.split(Split::Train).size() << "\ntest_in " << ds.split(Split::TestIn).size()
      << "\ntest_asym " << ds.split(Split::TestAsym).size() << '\n';
  }
  for (const TrackedFrame& f : ds.frames) {
    const std::string stem = frame_stem(f.frame_id);
    write_png(dir / "frames" / (stem + ".png"), f.image);
    Image8 mask{f.image.width, f.image.height, 1, std::vector<std::uint8_t>(f.fg_mask.size())};
    for (std::size_t i = 0; i < f.fg_mask.size(); ++i) mask.pixels[i] = f.fg_mask[i] ? 255 : 0;
    write_png(dir / "frames" / (stem + "_mask.png"), mask);
    std::ofstream r(dir / "frames" / (stem + ".txt"));
    r << "frame_id " << f.frame_id << "\nsplit " << to_string(f.split) << '\n';
    write_numbers(r, "expression", f.expression);
    write_numbers(r, "pose", f.pose);
    write_numbers(r, "extrinsics", std::span<const double>(f.camera.extrinsics.data(), 16));
    std::vector<double> lm;
    for (const Vec3& p : f.landmarks) lm.insert(lm.end(), {p.x(), p.y(), p.z()});
    write_numbers(r, "landmarks", lm);
    if (!r) throw std::runtime_error("cannot write frame record " + stem);
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const std::filesystem::path mpath = dir / "manifest";
  const KeyValues m = read_key_values(mpath);
  if (require(m, "format", 1, mpath)[0] != "ldf-dataset") throw std::runtime_error("not a dataset manifest");
  if (parse_int(require(m, "version", 1, mpath)[0]) != 1) throw std::runtime_error("unsupported dataset version");
  Dataset ds;
  DatasetInfo& i = ds.info;
  i.rig_seed = std::stoull(require(m, "rig_seed", 1, mpath)[0]);
  i.num_vertices = static_cast<int>(parse_int(require(m, "num_vertices", 1, mpath)[0]));
  i.num_expressions = static_cast<int>(parse_int(require(m, "num_expressions", 1, mpath)[0]));
  i.num_landmarks = static_cast<int>(parse_int(require(m, "num_landmarks", 1, mpath)[0]));
  i.width = static_cast<int>(parse_int(require(m, "width", 1, mpath)[0]));
  i.height = static_cast<int>(parse_int(require(m, "height", 1, mpath)[0]));
  i.fx = parse_double(require(m, "fx", 1, mpath)[0]);
  i.fy = parse_double(require(m, "fy", 1, mpath)[0]);
  i.cx = parse_double(require(m, "cx", 1, mpath)[0]);
  i.cy = parse_double(require(m, "cy", 1, mpath)[0]);
  i.gt_samples = static_cast<int>(parse_int(require(m, "gt_samples", 1, mpath)[0]));
  const auto& bg = require(m, "background", 3, mpath);
  i.background = Vec3(parse_double(bg[0]), parse_double(bg[1]), parse_double(bg[2]));
  const long count = parse_int(require(m, "frames", 1, mpath)[0]);

  for (long id = 0; id < count; ++id) {
    const std::string stem = frame_stem(static_cast<int>(id));
    const std::filesystem::path rpath = dir / "frames" / (stem + ".txt");
    const KeyValues r = read_key_values(rpath);
    TrackedFrame f;
    f.frame_id = static_cast<int>(parse_int(require(r, "frame_id", 1, rpath)[0]));
    f.split = parse_split(require(r, "split", 1, rpath)[0]);
    for (const std::string& v : require(r, "expression", static_cast<std::size_t>(i.num_expressions), rpath))
      f.expression.push_back(parse_double(v));
    const auto& pose = require(r, "pose", 6, rpath);
    for (int k = 0; k < 6; ++k) f.pose[k] = parse_double(pose[k]);
    const auto& ext = require(r, "extrinsics", 16, rpath);
    f.camera.width = i.width;
    f.camera.height = i.height;
    f.camera.fx = i.fx;
    f.camera.fy = i.fy;
    f.camera.cx = i.cx;
    f.camera.cy = i.cy;
    for (int k = 0; k < 16; ++k) f.camera.extrinsics.data()[k] = parse_double(ext[k]);
    const auto& lm = require(r, "landmarks", static_cast<std::size_t>(3 * i.num_landmarks), rpath);
    for (int l = 0; l < i.num_landmarks; ++l)
      f.landmarks.emplace_back(parse_double(lm[3 * l]), parse_double(lm[3 * l + 1]), parse_double(lm[3 * l + 2]));
    f.image = read_png(dir / "frames" / (stem + ".png"));
    const Image8 mask = read_png(dir / "frames" / (stem + "_mask.png"));
    if (f.image.width != i.width || f.image.height != i.height || f.image.channels != 3 || mask.channels != 1 ||
        mask.width != i.width || mask.height != i.height)
      throw std::runtime_error("frame " + stem + ": image size does not match the manifest");
    f.fg_mask.resize(mask.pixels.size());
    for (std::size_t p = 0; p < mask.pixels.size(); ++p) f.fg_mask[p] = mask.pixels[p] >= 128 ? 1 : 0;
    ds.frames.push_back(std::move(f));
  }
  return ds;
}

}  // namespace ldf
