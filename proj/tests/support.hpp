#pragma once

#include "ldf/dataset.hpp"
#include "ldf/rig.hpp"
#include "ldf/trainer.hpp"

#include <memory>
#include <random>

namespace ldf::testing {

/// Smallest icosphere rig, shared across a test binary.
inline std::shared_ptr<const BlendshapeRig> small_rig() {
  static const auto rig = std::make_shared<const BlendshapeRig>(generate_rig(3, 642, 16, 34));
  return rig;
}

/// A few 32×32 frames per split.
inline const Dataset& tiny_dataset() {
  static const Dataset ds = [] {
    SynthConfig c;
    c.info.rig_seed = 3;
    c.info.num_vertices = 642;
    c.info.width = c.info.height = 32;
    c.info.gt_samples = 32;
    c.train_frames = 6;
    c.test_in_frames = 2;
    c.test_asym_frames = 2;
    c.seed = 11;
    return synthesize_dataset(*small_rig(), c);
  }();
  return ds;
}

/// Schedule with every phase reached within a dozen iterations.
inline TrainConfig tiny_config() {
  TrainConfig c = TrainConfig::ci();
  c.profile = "tiny";
  c.ray_batch = 48;
  c.samples = 12;
  c.eval_samples = 16;
  c.pretrain_iters = 3;
  c.upsample_at = 6;
  c.total_iters = 10;
  c.anneal_iters = 3;
  c.initial_resolution = 6;
  c.final_resolution = 8;
  c.test_code_iters = 4;
  c.test_code_rays = 48;
  c.seed = 5;
  return c;
}

inline ad::Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Matrix m(rows, cols);
  for (double& v : m.data) v = u(rng);
  return m;
}

}  // namespace ldf::testing
