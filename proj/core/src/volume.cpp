#include "ldf/volume.hpp"

#include "ldf/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>

namespace ldf {

Vec3 GridGeometry::node_position(int i, int j, int k) const {
  const Vec3 step = box.sizes() / resolution;
  return box.min() + Vec3(i * step.x(), j * step.y(), k * step.z());
}

bool GridGeometry::contains(const double* x) const {
  for (int a = 0; a < 3; ++a)
    if (!(x[a] >= box.min()[a] && x[a] <= box.max()[a])) return false;
  return true;
}

namespace {

struct Cell {
  int i = 0, j = 0, k = 0;
  double f[3] = {0, 0, 0};
  bool inside = false;
};

Cell locate(const double* x, const GridGeometry& g) {
  Cell c;
  if (!g.contains(x)) return c;
  c.inside = true;
  int idx[3];
  for (int a = 0; a < 3; ++a) {
    const double u = (x[a] - g.box.min()[a]) / (g.box.max()[a] - g.box.min()[a]) * g.resolution;
    idx[a] = std::clamp(static_cast<int>(std::floor(u)), 0, g.resolution - 1);
    c.f[a] = u - idx[a];
  }
  c.i = idx[0];
  c.j = idx[1];
  c.k = idx[2];
  return c;
}

// Corner order: bit 2 → x, bit 1 → y, bit 0 → z.
void corners(const Cell& c, const GridGeometry& g, int* rows, double* weights) {
  for (int b = 0; b < 8; ++b) {
    const int dx = (b >> 2) & 1, dy = (b >> 1) & 1, dz = b & 1;
    rows[b] = g.node_index(c.i + dx, c.j + dy, c.k + dz);
    weights[b] = (dx ? c.f[0] : 1.0 - c.f[0]) * (dy ? c.f[1] : 1.0 - c.f[1]) * (dz ? c.f[2] : 1.0 - c.f[2]);
  }
}

}  // namespace

ad::Var trilinear(ad::Var grid, ad::Var positions, const GridGeometry& geometry) {
  const ad::Matrix& table = grid.value();
  const ad::Matrix& x = positions.value();
  if (x.cols != 3) throw std::invalid_argument("trilinear: positions must be N×3");
  if (table.rows != geometry.node_count()) throw std::invalid_argument("trilinear: grid/geometry mismatch");
  const int channels = table.cols;
  auto cells = std::make_shared<std::vector<Cell>>(x.rows);
  ad::Matrix out(x.rows, channels);
  int rows[8];
  double w[8];
  for (int n = 0; n < x.rows; ++n) {
    const Cell c = locate(x.row(n), geometry);
    (*cells)[n] = c;
    if (!c.inside) continue;
    corners(c, geometry, rows, w);
    double* dst = out.row(n);
    for (int b = 0; b < 8; ++b) {
      const double* src = table.row(rows[b]);
      for (int ch = 0; ch < channels; ++ch) dst[ch] += w[b] * src[ch];
    }
  }
  const int ig = grid.id(), ip = positions.id();
  return grid.tape()->record(
      std::move(out), {grid, positions}, [ig, ip, cells, geometry](ad::Tape& t, const ad::Matrix& g) {
        const bool want_grid = t.requires_grad(ig), want_pos = t.requires_grad(ip);
        const ad::Matrix& table = t.value(ig);
        const int channels = table.cols;
        ad::Matrix* gg = want_grid ? &t.grad_buffer(ig) : nullptr;
        ad::Matrix* gp = want_pos ? &t.grad_buffer(ip) : nullptr;
        const Vec3 inv_step = Vec3::Constant(geometry.resolution).cwiseQuotient(geometry.box.sizes());
        int rows[8];
        double w[8];
        for (int n = 0; n < g.rows; ++n) {
          const Cell& c = (*cells)[n];
          if (!c.inside) continue;
          corners(c, geometry, rows, w);
          const double* gn = g.row(n);
          if (gg) {
            for (int b = 0; b < 8; ++b) {
              double* dst = gg->row(rows[b]);
              for (int ch = 0; ch < channels; ++ch) dst[ch] += w[b] * gn[ch];
            }
          }
          if (gp) {
            double d[3] = {0, 0, 0};
            for (int b = 0; b < 8; ++b) {
              const int bits[3] = {(b >> 2) & 1, (b >> 1) & 1, b & 1};
              double dot = 0.0;
              const double* src = table.row(rows[b]);
              for (int ch = 0; ch < channels; ++ch) dot += gn[ch] * src[ch];
              for (int a = 0; a < 3; ++a) {
                double dw = bits[a] ? 1.0 : -1.0;
                for (int o = 0; o < 3; ++o)
                  if (o != a) dw *= bits[o] ? c.f[o] : 1.0 - c.f[o];
                d[a] += dw * dot;
              }
            }
            for (int a = 0; a < 3; ++a) (*gp)(n, a) += d[a] * inv_step[a];
          }
        }
      });
}

double trilinear(const ad::Matrix& grid, int channel, const Vec3& x, const GridGeometry& geometry) {
  const Cell c = locate(x.data(), geometry);
  if (!c.inside) return 0.0;
  int rows[8];
  double w[8];
  corners(c, geometry, rows, w);
  double v = 0.0;
  for (int b = 0; b < 8; ++b) v += w[b] * grid(rows[b], channel);
  return v;
}

// ---------------------------------------------------------------------------

CanonicalVolume::CanonicalVolume(const Eigen::AlignedBox3d& bounds, VolumeConfig config, std::uint64_t seed)
    : geometry_{bounds, config.resolution}, config_(config) {
  if (config_.resolution < 1) throw std::invalid_argument("CanonicalVolume: resolution must be positive");
  std::mt19937_64 rng(seed);
  const int nodes = geometry_.node_count();
  ad::Matrix density(nodes, 1);
  std::uniform_real_distribution<double> d0(0.0, 0.02);
  for (double& v : density.data) v = ad::round_to_float(d0(rng));
  density_ = ad::Parameter("volume.density", std::move(density), config_.grid_lr_scale);
  app_ = ad::Parameter("volume.app", uniform_matrix(nodes, config_.app_channels, 0.1, rng), config_.grid_lr_scale);

  const int view = EncodingConfig{config_.view_freqs, 0.0}.output_size();
  const int in = config_.app_channels + view + config_.app_code_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  dec1_feat_ = ad::Parameter("decoder.w1_feat",
                             uniform_matrix(config_.app_channels + view, config_.decoder_hidden, bound, rng));
  dec1_code_ = ad::Parameter("decoder.w1_code", uniform_matrix(config_.app_code_dim, config_.decoder_hidden, bound, rng));
  dec1_bias_ = ad::Parameter("decoder.b1", uniform_matrix(1, config_.decoder_hidden, bound, rng));
  dec2_ = Linear("decoder.l2", config_.decoder_hidden, 3, rng);
}

ad::Var CanonicalVolume::decode(ad::Tape& tape, ad::Var features, const ad::Matrix& directions,
                                ad::Var app_code) const {
  const EncodingConfig view_cfg{config_.view_freqs, static_cast<double>(config_.view_freqs)};
  ad::Matrix view(directions.rows, view_cfg.output_size());
  for (int n = 0; n < directions.rows; ++n) {
    const std::vector<double> v = encode(Vec3(directions(n, 0), directions(n, 1), directions(n, 2)), view_cfg);
    std::copy(v.begin(), v.end(), view.row(n));
  }
  const ad::Var parts[] = {features, tape.constant(std::move(view))};
  ad::Var input = ad::concat_cols(parts);
  ad::Var code_row = ad::add(ad::matmul(app_code, tape.param(dec1_code_)), tape.param(dec1_bias_));
  ad::Var h = ad::leaky_relu(ad::add_row(ad::matmul(input, tape.param(dec1_feat_)), code_row));
  return ad::sigmoid(dec2_(tape, h));
}

VolumeQuery CanonicalVolume::query(ad::Tape& tape, ad::Var positions, const ad::Matrix& directions,
                                   ad::Var app_code, const QueryOptions& options) const {
  const ad::Matrix& x = positions.value();
  if (!directions.same_shape(x)) throw std::invalid_argument("query: directions must match positions");
  if (app_code.cols() != config_.app_code_dim) throw std::invalid_argument("query: appearance code size");
  const int n = x.rows;

  // Rows that can carry density: inside the box and not in a pruned cell.
  std::vector<int> live;
  live.reserve(n);
  for (int r = 0; r < n; ++r) {
    if (!geometry_.contains(x.row(r))) continue;
    if (options.pruned) {
      const Cell c = locate(x.row(r), geometry_);
      const int R = geometry_.resolution;
      if ((*options.pruned)[(static_cast<std::size_t>(c.i) * R + c.j) * R + c.k]) continue;
    }
    live.push_back(r);
  }

  const Vec3& bg = config_.background;
  ad::Matrix background(n, 3);
  for (int r = 0; r < n; ++r)
    for (int a = 0; a < 3; ++a) background(r, a) = bg[a];
  if (live.empty()) return {tape.constant(ad::Matrix(n, 1)), tape.constant(std::move(background))};

  ad::Var xs = ad::gather_rows(positions, live);
  ad::Var sigma_live =
      ad::scale(ad::relu(trilinear(tape.param(density_), xs, geometry_)), config_.density_scale);

  std::vector<int> colored;  // indices into `live`
  colored.reserve(live.size());
  for (std::size_t i = 0; i < live.size(); ++i)
    if (!options.skip_empty || sigma_live.value().data[i] > 0.0) colored.push_back(static_cast<int>(i));

  const ad::RowScatter sigma_piece[] = {{sigma_live, live}};
  ad::Var sigma = ad::scatter_rows(tape, n, 1, sigma_piece);

  std::vector<int> colored_rows(colored.size());
  std::vector<int> bg_rows;
  {
    std::vector<std::uint8_t> has_color(static_cast<std::size_t>(n), 0);
    for (std::size_t i = 0; i < colored.size(); ++i) {
      colored_rows[i] = live[colored[i]];
      has_color[colored_rows[i]] = 1;
    }
    for (int r = 0; r < n; ++r)
      if (!has_color[r]) bg_rows.push_back(r);
  }
  std::vector<ad::RowScatter> rgb_pieces;
  if (!colored_rows.empty()) {
    ad::Var xc = ad::gather_rows(xs, colored);
    ad::Matrix dirs(static_cast<int>(colored_rows.size()), 3);
    for (std::size_t i = 0; i < colored_rows.size(); ++i)
      for (int a = 0; a < 3; ++a) dirs(static_cast<int>(i), a) = directions(colored_rows[i], a);
    ad::Var features = trilinear(tape.param(app_), xc, geometry_);
    rgb_pieces.push_back({decode(tape, features, dirs, app_code), colored_rows});
  }
  if (!bg_rows.empty()) {
    ad::Matrix fill(static_cast<int>(bg_rows.size()), 3);
    for (int r = 0; r < fill.rows; ++r)
      for (int a = 0; a < 3; ++a) fill(r, a) = bg[a];
    rgb_pieces.push_back({tape.constant(std::move(fill)), std::move(bg_rows)});
  }
  return {sigma, ad::scatter_rows(tape, n, 3, rgb_pieces)};
}

double CanonicalVolume::density_at(const Vec3& x) const {
  return config_.density_scale * std::max(trilinear(density_.value, 0, x, geometry_), 0.0);
}

void CanonicalVolume::upsample(int new_resolution) {
  if (new_resolution < geometry_.resolution)
    throw std::invalid_argument("upsample: new resolution is below the current one");
  if (new_resolution == geometry_.resolution) return;
  const GridGeometry next{geometry_.box, new_resolution};
  const int m = next.nodes_per_axis();
  auto resample = [&](const ad::Matrix& src) {
    ad::Matrix dst(next.node_count(), src.cols);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        for (int k = 0; k < m; ++k) {
          const Vec3 p = next.node_position(i, j, k).cwiseMax(geometry_.box.min()).cwiseMin(geometry_.box.max());
          double* row = dst.row(next.node_index(i, j, k));
          for (int ch = 0; ch < src.cols; ++ch) row[ch] = ad::round_to_float(trilinear(src, ch, p, geometry_));
        }
    return dst;
  };
  density_.value = resample(density_.value);
  app_.value = resample(app_.value);
  density_.grad = ad::Matrix();
  app_.grad = ad::Matrix();
  geometry_ = next;
  config_.resolution = new_resolution;
}

void CanonicalVolume::reshape(int resolution) {
  geometry_.resolution = resolution;
  config_.resolution = resolution;
  density_.value = ad::Matrix(geometry_.node_count(), 1);
  app_.value = ad::Matrix(geometry_.node_count(), config_.app_channels);
  density_.grad = ad::Matrix();
  app_.grad = ad::Matrix();
}

std::vector<std::uint8_t> CanonicalVolume::prune_mask(double threshold) const {
  const int R = geometry_.resolution;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(R) * R * R, 1);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j)
      for (int k = 0; k < R; ++k) {
        bool empty = true;
        for (int b = 0; b < 8 && empty; ++b) {
          const double v = density_.value(geometry_.node_index(i + ((b >> 2) & 1), j + ((b >> 1) & 1), k + (b & 1)), 0);
          if (config_.density_scale * std::max(v, 0.0) >= threshold) empty = false;
        }
        mask[(static_cast<std::size_t>(i) * R + j) * R + k] = empty ? 1 : 0;
      }
  return mask;
}

std::vector<ad::Parameter*> CanonicalVolume::parameters() {
  return {&density_, &app_, &dec1_feat_, &dec1_code_, &dec1_bias_, &dec2_.weight, &dec2_.bias};
}

std::vector<ad::Parameter*> CanonicalVolume::grid_parameters() { return {&density_, &app_}; }

std::size_t CanonicalVolume::parameter_count() const {
  return density_.size() + app_.size() + dec1_feat_.size() + dec1_code_.size() + dec1_bias_.size() +
         dec2_.parameter_count();
}

}  // namespace ldf
