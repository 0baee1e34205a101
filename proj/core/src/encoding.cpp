#include "ldf/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ldf {

double EncodingConfig::window(int band) const {
  const double t = std::clamp(alpha - band, 0.0, 1.0);
  return 0.5 * (1.0 - std::cos(std::numbers::pi * t));
}

namespace {

void encode_row(const double* x, const EncodingConfig& cfg, const std::vector<double>& weights, double* out) {
  out[0] = x[0];
  out[1] = x[1];
  out[2] = x[2];
  int o = 3;
  for (int a = 0; a < 3; ++a) {
    double freq = std::numbers::pi;
    for (int j = 0; j < cfg.n_freqs; ++j, freq *= 2.0) {
      out[o++] = weights[j] * std::sin(freq * x[a]);
      out[o++] = weights[j] * std::cos(freq * x[a]);
    }
  }
}

std::vector<double> band_weights(const EncodingConfig& cfg) {
  std::vector<double> w(static_cast<std::size_t>(cfg.n_freqs));
  for (int j = 0; j < cfg.n_freqs; ++j) w[j] = cfg.window(j);
  return w;
}

}  // namespace

std::vector<double> encode(const Vec3& x, const EncodingConfig& cfg) {
  std::vector<double> out(static_cast<std::size_t>(cfg.output_size()));
  encode_row(x.data(), cfg, band_weights(cfg), out.data());
  return out;
}

ad::Var encode(ad::Var positions, const EncodingConfig& cfg) {
  const ad::Matrix& x = positions.value();
  if (x.cols != 3) throw std::invalid_argument("encode: positions must be N×3");
  const std::vector<double> weights = band_weights(cfg);
  ad::Matrix out(x.rows, cfg.output_size());
  for (int i = 0; i < x.rows; ++i) encode_row(x.row(i), cfg, weights, out.row(i));
  const int ip = positions.id();
  return positions.tape()->record(
      std::move(out), {positions}, [ip, cfg, weights](ad::Tape& t, const ad::Matrix& g) {
        const ad::Matrix& x = t.value(ip);
        ad::Matrix& gx = t.grad_buffer(ip);
        for (int i = 0; i < x.rows; ++i) {
          const double* gi = g.row(i);
          double* dst = gx.row(i);
          int o = 3;
          for (int a = 0; a < 3; ++a) {
            double acc = gi[a];
            double freq = std::numbers::pi;
            for (int j = 0; j < cfg.n_freqs; ++j, freq *= 2.0) {
              const double s = std::sin(freq * x(i, a)), c = std::cos(freq * x(i, a));
              acc += weights[j] * freq * (gi[o] * c - gi[o + 1] * s);
              o += 2;
            }
            dst[a] += acc;
          }
        }
      });
}

}  // namespace ldf
