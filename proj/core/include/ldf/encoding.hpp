#pragma once

#include "ldf/autodiff.hpp"
#include "ldf/rig.hpp"

#include <vector>

namespace ldf {

/// Sinusoidal encoding with a coarse-to-fine window. Band j has frequency
/// 2^j·π and weight (1 − cos(π·clamp(alpha − j, 0, 1))) / 2, so alpha = 0
/// closes every band and alpha = n_freqs opens them all.
struct EncodingConfig {
  int n_freqs = 10;
  double alpha = 10.0;

  int output_size() const { return 3 + 6 * n_freqs; }
  double window(int band) const;
};

/// Layout: [x, y, z, then per axis, per band: sin, cos].
std::vector<double> encode(const Vec3& x, const EncodingConfig& cfg);

/// Tape version over an N×3 input; differentiable w.r.t. the positions.
ad::Var encode(ad::Var positions, const EncodingConfig& cfg);

}  // namespace ldf
