#include "ldf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace ldf {

namespace {

constexpr char kMagic[4] = {'M', 'R', 'H', 'C'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes(b) {}
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
};

NamedTensor from_matrix(const std::string& name, const ad::Matrix& m) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)};
  t.values.reserve(m.size());
  for (double v : m.data) t.values.push_back(static_cast<float>(v));
  return t;
}

NamedTensor from_ints(const std::string& name, const std::vector<long>& values) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<std::uint32_t>(values.size())};
  for (long v : values) {
    if (v < 0 || v > (1L << 24)) throw std::invalid_argument("checkpoint: integer field out of float32 range");
    t.values.push_back(static_cast<float>(v));
  }
  return t;
}

std::vector<long> to_ints(const NamedTensor& t) {
  std::vector<long> out;
  for (float f : t.values) out.push_back(static_cast<long>(f));
  return out;
}

void load_matrix(ad::Matrix& dst, const NamedTensor& t) {
  if (t.dims.size() != 2 || static_cast<int>(t.dims[0]) != dst.rows || static_cast<int>(t.dims[1]) != dst.cols)
    throw std::runtime_error("checkpoint: tensor '" + t.name + "' has unexpected shape");
  for (std::size_t i = 0; i < t.values.size(); ++i) dst.data[i] = static_cast<double>(t.values[i]);
}

// The seed split into 16-bit pieces, each exact in float32.
std::vector<long> seed_pieces(std::uint64_t s) {
  return {static_cast<long>(s & 0xffff), static_cast<long>((s >> 16) & 0xffff), static_cast<long>((s >> 32) & 0xffff),
          static_cast<long>((s >> 48) & 0xffff)};
}

std::uint64_t seed_from_pieces(const std::vector<long>& p) {
  if (p.size() != 4) throw std::runtime_error("checkpoint: bad seed record");
  std::uint64_t s = 0;
  for (int i = 0; i < 4; ++i) s |= static_cast<std::uint64_t>(p[i]) << (16 * i);
  return s;
}

}  // namespace

const NamedTensor* CheckpointFile::find(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& CheckpointFile::at(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (!t) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  return *t;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(file.version);
  w.u64(file.rig_seed);
  w.str(file.variant);
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const NamedTensor& t : file.tensors) {
    std::size_t count = 1;
    for (std::uint32_t d : t.dims) count *= d;
    if (count != t.values.size()) throw std::invalid_argument("checkpoint: tensor '" + t.name + "' size mismatch");
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) w.u32(d);
    for (float f : t.values) w.f32(f);
  }
  return std::move(w.out);
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic (not an MRHC file)");
  Reader r(bytes);
  r.pos = 4;
  CheckpointFile f;
  f.version = r.u32();
  if (f.version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(f.version) + " (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  f.rig_seed = r.u64();
  f.variant = r.str();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t nd = r.u32();
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < nd; ++d) {
      t.dims.push_back(r.u32());
      count *= t.dims.back();
    }
    r.need(count * 4);
    t.values.resize(count);
    for (float& v : t.values) v = r.f32();
    f.tensors.push_back(std::move(t));
  }
  if (r.pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return f;
}

CheckpointFile to_checkpoint(const TrainState& state) {
  const AvatarModel& m = *state.model;
  const TrainConfig& c = state.config;
  const ModelConfig& mc = m.config();
  const VolumeConfig& vc = m.volume().config();
  CheckpointFile f;
  f.rig_seed = m.rig().seed;
  f.variant = to_string(m.variant());
  f.tensors.push_back(from_ints("meta.rig", {m.rig().num_vertices(), m.rig().num_expressions, m.rig().num_landmarks()}));
  f.tensors.push_back(from_ints("meta.model", {mc.n_freqs, mc.pose_code_dim, mc.app_code_dim, mc.hidden,
                                               m.num_train_frames()}));
  f.tensors.push_back(from_ints("meta.volume", {vc.resolution, vc.app_channels, vc.decoder_hidden, vc.view_freqs}));
  f.tensors.push_back(from_ints("meta.train", {state.iteration, c.pretrain_iters, c.total_iters, c.anneal_iters,
                                               c.upsample_at, c.ray_batch, c.samples, c.eval_samples,
                                               c.initial_resolution, c.final_resolution, c.local_landmarks,
                                               c.test_code_iters, c.test_code_rays}));
  f.tensors.push_back(from_ints("meta.seed", seed_pieces(c.seed)));
  f.tensors.push_back(from_matrix("meta.background", ad::Matrix::from(1, 3, {vc.background[0], vc.background[1],
                                                                            vc.background[2]})));
  f.tensors.push_back(from_matrix("meta.alpha", ad::Matrix::from(1, 1, {m.encoding_alpha()})));
  const AttentionMask& mask = m.mask();
  ad::Matrix mk(mask.num_landmarks, mask.num_expressions);
  for (int l = 0; l < mk.rows; ++l)
    for (int k = 0; k < mk.cols; ++k) mk(l, k) = mask.at(l, k) ? 1.0 : 0.0;
  f.tensors.push_back(from_matrix("mask", mk));

  auto& params_model = const_cast<AvatarModel&>(m);
  for (const ad::Parameter* p : params_model.parameters()) f.tensors.push_back(from_matrix(p->name, p->value));
  for (const auto& [name, mom] : state.adam.moments()) {
    f.tensors.push_back(from_matrix("adam.m." + name, mom.m));
    f.tensors.push_back(from_matrix("adam.v." + name, mom.v));
    f.tensors.push_back(from_ints("adam.step." + name, {mom.step}));
  }
  return f;
}

TrainState from_checkpoint(const CheckpointFile& f) {
  const std::vector<long> rig = to_ints(f.at("meta.rig"));
  const std::vector<long> model = to_ints(f.at("meta.model"));
  const std::vector<long> vol = to_ints(f.at("meta.volume"));
  const std::vector<long> tr = to_ints(f.at("meta.train"));
  if (rig.size() != 3 || model.size() != 5 || vol.size() != 4 || tr.size() != 13)
    throw std::runtime_error("checkpoint: malformed metadata");

  TrainState s;
  TrainConfig& c = s.config;
  c.profile = "checkpoint";
  c.variant = parse_variant(f.variant);
  s.iteration = tr[0];
  c.pretrain_iters = tr[1];
  c.total_iters = tr[2];
  c.anneal_iters = tr[3];
  c.upsample_at = tr[4];
  c.ray_batch = static_cast<int>(tr[5]);
  c.samples = static_cast<int>(tr[6]);
  c.eval_samples = static_cast<int>(tr[7]);
  c.initial_resolution = static_cast<int>(tr[8]);
  c.final_resolution = static_cast<int>(tr[9]);
  c.local_landmarks = static_cast<int>(tr[10]);
  c.test_code_iters = static_cast<int>(tr[11]);
  c.test_code_rays = static_cast<int>(tr[12]);
  c.seed = seed_from_pieces(to_ints(f.at("meta.seed")));

  ModelConfig mc;
  mc.n_freqs = static_cast<int>(model[0]);
  mc.pose_code_dim = static_cast<int>(model[1]);
  mc.app_code_dim = static_cast<int>(model[2]);
  mc.hidden = static_cast<int>(model[3]);
  mc.volume.resolution = c.initial_resolution;
  mc.volume.app_channels = static_cast<int>(vol[1]);
  mc.volume.decoder_hidden = static_cast<int>(vol[2]);
  mc.volume.view_freqs = static_cast<int>(vol[3]);
  mc.volume.app_code_dim = mc.app_code_dim;
  const NamedTensor& bg = f.at("meta.background");
  mc.volume.background = Vec3(bg.values.at(0), bg.values.at(1), bg.values.at(2));

  auto rig_ptr = std::make_shared<const BlendshapeRig>(generate_rig(
      f.rig_seed, static_cast<int>(rig[0]), static_cast<int>(rig[1]), static_cast<int>(rig[2])));
  s.model = std::make_unique<AvatarModel>(rig_ptr, c.variant, mc, static_cast<int>(model[4]), c.seed);
  AvatarModel& m = *s.model;
  if (vol[0] != m.volume().resolution()) m.volume().reshape(static_cast<int>(vol[0]));
  m.set_encoding_alpha(f.at("meta.alpha").values.at(0));

  const NamedTensor& mask = f.at("mask");
  if (mask.values.size() != m.mask().bits.size())
    throw std::runtime_error("checkpoint: stored attention mask has the wrong size");
  for (int l = 0; l < m.mask().num_landmarks; ++l)
    for (int k = 0; k < m.mask().num_expressions; ++k)
      if ((mask.values[static_cast<std::size_t>(l) * m.mask().num_expressions + k] != 0.0f) != m.mask().at(l, k))
        throw std::runtime_error("checkpoint: stored attention mask disagrees with the regenerated rig");

  for (ad::Parameter* p : m.parameters()) {
    load_matrix(p->value, f.at(p->name));
    p->zero_grad();
  }
  for (const NamedTensor& t : f.tensors) {
    if (t.name.rfind("adam.step.", 0) != 0) continue;
    const std::string name = t.name.substr(10);
    ad::AdamMoments mom;
    const NamedTensor& tm = f.at("adam.m." + name);
    const NamedTensor& tv = f.at("adam.v." + name);
    if (tm.dims.size() != 2 || tv.dims != tm.dims) throw std::runtime_error("checkpoint: bad moment shape");
    mom.m = ad::Matrix(static_cast<int>(tm.dims[0]), static_cast<int>(tm.dims[1]));
    mom.v = mom.m;
    load_matrix(mom.m, tm);
    load_matrix(mom.v, tv);
    mom.step = static_cast<long>(t.values.at(0));
    s.adam.moments().emplace_back(name, std::move(mom));
  }
  return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(to_checkpoint(state));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_checkpoint(decode_checkpoint(bytes));
}

}  // namespace ldf
