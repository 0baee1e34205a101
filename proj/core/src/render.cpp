#include "ldf/render.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <thread>

namespace ldf {

Vec3 Camera::center() const {
  const Eigen::Matrix3d R = extrinsics.topLeftCorner<3, 3>();
  return -R.transpose() * extrinsics.topRightCorner<3, 1>();
}

Vec3 Camera::direction(double px, double py) const {
  const Eigen::Matrix3d R = extrinsics.topLeftCorner<3, 3>();
  const Vec3 d((px - cx) / fx, (py - cy) / fy, 1.0);
  return (R.transpose() * d).normalized();
}

std::optional<Eigen::Vector2d> Camera::project(const Vec3& world) const {
  const Vec3 p = extrinsics.topLeftCorner<3, 3>() * world + extrinsics.topRightCorner<3, 1>();
  if (p.z() <= 0.0) return std::nullopt;
  return Eigen::Vector2d(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
}

bool clip_to_box(Ray& ray, const Eigen::AlignedBox3d& box) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (std::abs(d) < 1e-15) {
      if (o < box.min()[a] || o > box.max()[a]) {
        ray.hit = false;
        return false;
      }
      continue;
    }
    double ta = (box.min()[a] - o) / d, tb = (box.max()[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  ray.hit = t1 > t0;
  ray.near = ray.hit ? t0 : 0.0;
  ray.far = ray.hit ? t1 : 0.0;
  return ray.hit;
}

std::vector<Ray> generate_rays(const Camera& camera, std::span<const Eigen::Vector2i> pixels,
                               const Eigen::AlignedBox3d& bounds) {
  std::vector<Ray> rays(pixels.size());
  const Vec3 origin = camera.center();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    rays[i].origin = origin;
    rays[i].direction = camera.direction(pixels[i].x() + 0.5, pixels[i].y() + 0.5);
    clip_to_box(rays[i], bounds);
  }
  return rays;
}

RaySample sample_points(const Ray& ray, int samples, bool stratified, std::mt19937_64* rng) {
  if (samples < 1) throw std::invalid_argument("sample_points: need at least one sample");
  if (!(ray.far > ray.near)) throw std::invalid_argument("sample_points: empty ray interval");
  if (stratified && !rng) throw std::invalid_argument("sample_points: stratified sampling needs an rng");
  RaySample s;
  s.depths.resize(samples);
  s.deltas.resize(samples);
  s.positions.resize(samples);
  const double bin = (ray.far - ray.near) / samples;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < samples; ++i) {
    const double offset = stratified ? u(*rng) : 0.5;
    s.depths[i] = std::min(ray.near + (i + offset) * bin, ray.far);
  }
  for (int i = 0; i < samples; ++i) {
    s.deltas[i] = (i + 1 < samples ? s.depths[i + 1] : ray.far) - s.depths[i];
    s.positions[i] = ray.origin + s.depths[i] * ray.direction;
  }
  return s;
}

CompositeResult composite(std::span<const double> sigmas, std::span<const Vec3> rgbs,
                          std::span<const double> deltas, std::span<const double> depths,
                          const Vec3& background) {
  const std::size_t n = sigmas.size();
  if (rgbs.size() != n || deltas.size() != n || depths.size() != n)
    throw std::invalid_argument("composite: length mismatch");
  CompositeResult r;
  r.weights.resize(n);
  double optical = 0.0, z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sigmas[i] < 0.0) throw std::invalid_argument("composite: negative density");
    const double T = std::exp(-optical);
    const double a = -std::expm1(-sigmas[i] * deltas[i]);
    const double w = T * a;
    r.weights[i] = w;
    r.rgb += w * rgbs[i];
    r.alpha += w;
    z += w * depths[i];
    optical += sigmas[i] * deltas[i];
  }
  r.transmittance = std::exp(-optical);
  r.rgb += r.transmittance * background;
  r.depth = z / std::max(r.alpha, kDepthAlphaFloor);
  return r;
}

CompositeBatch composite(ad::Var sigma, ad::Var rgb, const ad::Matrix& deltas, const ad::Matrix& depths,
                         const Vec3& background) {
  const int R = deltas.rows, S = deltas.cols;
  if (!depths.same_shape(deltas)) throw std::invalid_argument("composite: depths/deltas shape");
  if (sigma.rows() != R * S || sigma.cols() != 1 || rgb.rows() != R * S || rgb.cols() != 3)
    throw std::invalid_argument("composite: sample tensor shape");
  const ad::Matrix& sg = sigma.value();
  const ad::Matrix& cl = rgb.value();
  CompositeBatch out;
  out.weights = ad::Matrix(R, S);
  out.transmittance = ad::Matrix(R, 1);
  ad::Matrix packed(R, 5);  // r g b alpha depth
  // Per-sample transmittance after the sample, kept for backward.
  auto t_after = std::make_shared<ad::Matrix>(R, S);
  for (int r = 0; r < R; ++r) {
    double optical = 0.0, z = 0.0, A = 0.0;
    Vec3 c = Vec3::Zero();
    for (int i = 0; i < S; ++i) {
      const int n = r * S + i;
      if (sg.data[n] < 0.0) throw std::invalid_argument("composite: negative density");
      const double T = std::exp(-optical);
      const double w = T * -std::expm1(-sg.data[n] * deltas(r, i));
      optical += sg.data[n] * deltas(r, i);
      (*t_after)(r, i) = std::exp(-optical);
      out.weights(r, i) = w;
      c += w * Vec3(cl(n, 0), cl(n, 1), cl(n, 2));
      A += w;
      z += w * depths(r, i);
    }
    const double Tn = std::exp(-optical);
    out.transmittance.data[r] = Tn;
    c += Tn * background;
    packed(r, 0) = c.x();
    packed(r, 1) = c.y();
    packed(r, 2) = c.z();
    packed(r, 3) = A;
    packed(r, 4) = z / std::max(A, kDepthAlphaFloor);
  }

  const int is = sigma.id(), ic = rgb.id();
  auto weights = std::make_shared<ad::Matrix>(out.weights);
  auto dl = std::make_shared<ad::Matrix>(deltas);
  auto dp = std::make_shared<ad::Matrix>(depths);
  auto T_final = std::make_shared<ad::Matrix>(out.transmittance);
  ad::Var all = sigma.tape()->record(
      std::move(packed), {sigma, rgb},
      [=](ad::Tape& t, const ad::Matrix& g) {
        const ad::Matrix& cl = t.value(ic);
        ad::Matrix* gs = t.requires_grad(is) ? &t.grad_buffer(is) : nullptr;
        ad::Matrix* gc = t.requires_grad(ic) ? &t.grad_buffer(ic) : nullptr;
        for (int r = 0; r < R; ++r) {
          const Vec3 gC(g(r, 0), g(r, 1), g(r, 2));
          const double gA = g(r, 3), gD = g(r, 4);
          double A = 0.0, Z = 0.0;
          for (int i = 0; i < S; ++i) {
            A += (*weights)(r, i);
            Z += (*weights)(r, i) * (*dp)(r, i);
          }
          const double Abar = std::max(A, kDepthAlphaFloor);
          const double gA_eff = gA - (A > kDepthAlphaFloor ? gD * Z / (Abar * Abar) : 0.0);
          const double Tn = T_final->data[r];
          const double bg_term = gC.dot(background) * Tn;
          if (gc) {
            for (int i = 0; i < S; ++i) {
              const double w = (*weights)(r, i);
              for (int a = 0; a < 3; ++a) (*gc)(r * S + i, a) += gC[a] * w;
            }
          }
          if (gs) {
            double suffix = 0.0;  // Σ_{k>i} q_k w_k
            for (int i = S - 1; i >= 0; --i) {
              const int n = r * S + i;
              const double qi = gC.dot(Vec3(cl(n, 0), cl(n, 1), cl(n, 2))) + gD / Abar * (*dp)(r, i);
              const double delta = (*dl)(r, i);
              gs->data[n] += delta * (qi * (*t_after)(r, i) - suffix - bg_term) + gA_eff * delta * Tn;
              suffix += qi * (*weights)(r, i);
            }
          }
        }
      });
  out.rgb = ad::slice_cols(all, 0, 3);
  out.alpha = ad::slice_cols(all, 3, 1);
  out.depth = ad::slice_cols(all, 4, 1);
  return out;
}

std::vector<std::uint8_t> surface_mask(std::span<const double> weights, double threshold) {
  std::vector<std::uint8_t> m(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) m[i] = weights[i] > threshold ? 1 : 0;
  return m;
}

Eigen::AlignedBox3d inflate_box(const Eigen::AlignedBox3d& box, double inflate) {
  const Vec3 c = box.center();
  const Vec3 h = 0.5 * box.sizes() * (1.0 + inflate);
  return {c - h, c + h};
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

void render_chunk(const RadianceField& field, const std::vector<Ray>& rays, std::size_t begin, std::size_t end,
                  const RenderOptions& options, RenderedImage& out) {
  const Vec3 bg = field.background();
  std::vector<std::size_t> hit;
  for (std::size_t i = begin; i < end; ++i) {
    if (rays[i].hit) {
      hit.push_back(i);
    } else {
      for (int a = 0; a < 3; ++a) out.rgb[i * 3 + a] = bg[a];
      out.alpha[i] = 0.0;
      out.depth[i] = 0.0;
    }
  }
  if (hit.empty()) return;
  const int S = options.samples;
  const int R = static_cast<int>(hit.size());
  ad::Matrix positions(R * S, 3), directions(R * S, 3), deltas(R, S), depths(R, S);
  for (int r = 0; r < R; ++r) {
    const Ray& ray = rays[hit[r]];
    std::mt19937_64 rng(mix_seed(options.seed, hit[r]));
    const RaySample s = sample_points(ray, S, options.stratified, &rng);
    for (int i = 0; i < S; ++i) {
      for (int a = 0; a < 3; ++a) {
        positions(r * S + i, a) = s.positions[i][a];
        directions(r * S + i, a) = ray.direction[a];
      }
      deltas(r, i) = s.deltas[i];
      depths(r, i) = s.depths[i];
    }
  }
  ad::Tape tape(false);
  const FieldOutput f = field.evaluate(tape, {tape.constant(std::move(positions)), std::move(directions)});
  const CompositeBatch c = composite(f.sigma, f.rgb, deltas, depths, bg);
  for (int r = 0; r < R; ++r) {
    const std::size_t i = hit[r];
    for (int a = 0; a < 3; ++a) out.rgb[i * 3 + a] = c.rgb.value()(r, a);
    out.alpha[i] = c.alpha.value().data[r];
    out.depth[i] = c.depth.value().data[r];
  }
}

}  // namespace

RenderedImage render_pixels(const RadianceField& field, const Camera& camera, const Eigen::AlignedBox3d& bounds,
                            std::span<const Eigen::Vector2i> pixels, const RenderOptions& options) {
  const std::vector<Ray> rays = generate_rays(camera, pixels, bounds);
  RenderedImage out;
  out.width = static_cast<int>(pixels.size());
  out.height = 1;
  out.rgb.assign(pixels.size() * 3, 0.0);
  out.alpha.assign(pixels.size(), 0.0);
  out.depth.assign(pixels.size(), 0.0);
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, options.chunk_rays));
  const std::size_t n_chunks = (rays.size() + chunk - 1) / chunk;
  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(n_chunks)));
  auto run = [&](std::size_t c) { render_chunk(field, rays, c * chunk, std::min(rays.size(), (c + 1) * chunk), options, out); };
  if (threads == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run(c);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < n_chunks; c = next++) run(c);
    });
  for (std::thread& th : pool) th.join();
  return out;
}

RenderedImage render_image(const RadianceField& field, const Camera& camera, const Eigen::AlignedBox3d& bounds,
                           const RenderOptions& options) {
  std::vector<Eigen::Vector2i> pixels;
  pixels.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) pixels.emplace_back(x, y);
  RenderedImage out = render_pixels(field, camera, bounds, pixels, options);
  out.width = camera.width;
  out.height = camera.height;
  return out;
}

}  // namespace ldf
