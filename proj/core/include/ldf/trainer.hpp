#pragma once

#include "ldf/autodiff.hpp"
#include "ldf/dataset.hpp"
#include "ldf/losses.hpp"
#include "ldf/metrics.hpp"
#include "ldf/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace ldf {

struct TrainConfig {
  std::string profile = "desk";
  int ray_batch = 1024;
  int samples = 64;
  int eval_samples = 128;
  long pretrain_iters = 1000;
  long total_iters = 20000;
  long anneal_iters = 2000;
  long upsample_at = 8000;
  int initial_resolution = 64;
  int final_resolution = 128;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  LossWeights weights;
  /// Landmark pairs per step for the local control loss.
  int local_landmarks = 8;
  int test_code_iters = 200;
  int test_code_rays = 512;
  std::uint64_t seed = 0;
  Variant variant = Variant::Full;
  int threads = 1;

  /// 128×128 data, 1024 rays, 20k iterations.
  static TrainConfig desk();
  /// Same schedule on 64×64 data.
  static TrainConfig fast();
  /// Reduced schedule sized for a single-core CI machine.
  static TrainConfig ci();
  static TrainConfig preset(const std::string& name);

  /// Throws std::invalid_argument unless pretrain < upsample_at < total.
  void validate() const;
  /// λ_local actually used (0 for the no_local_loss variant).
  double local_weight() const;
};

/// Per-iteration loss breakdown.
struct StepLog {
  long iteration = 0;
  bool pretrain = false;
  double lr = 0.0;
  double alpha = 0.0;
  double rgb = 0.0, local = 0.0, mesh = 0.0, def = 0.0, vol = 0.0, code = 0.0, total = 0.0;
};

std::string csv_header();
std::string to_csv(const StepLog& log);

/// Frames prepared for training: decoded images, meshes, field landmarks.
class TrainingData {
 public:
  TrainingData(const Dataset& dataset, std::shared_ptr<const BlendshapeRig> rig);

  struct Frame {
    const TrackedFrame* source;
    std::vector<double> image;  // H·W·3 in [0, 1]
    MeshState mesh;
    std::unique_ptr<MeshProximity> proximity;
  };

  const std::vector<Frame>& train() const { return train_; }
  const Dataset& dataset() const { return *dataset_; }
  const BlendshapeRig& rig() const { return *rig_; }
  std::shared_ptr<const BlendshapeRig> rig_ptr() const { return rig_; }

 private:
  const Dataset* dataset_;
  std::shared_ptr<const BlendshapeRig> rig_;
  std::vector<Frame> train_;
};

struct TrainState {
  TrainConfig config;
  std::unique_ptr<AvatarModel> model;
  ad::Adam adam;
  long iteration = 0;
};

/// Fresh state for `config` on the given training data.
TrainState make_state(const TrainConfig& config, const TrainingData& data);

/// Model configuration implied by a training config.
ModelConfig model_config(const TrainConfig& config, const DatasetInfo& info);

/// Encoding window at a global iteration.
double annealed_alpha(const TrainConfig& config, int n_freqs, long iteration);

/// One optimizer step at state.iteration (pre-training or joint training,
/// by schedule), then advances the counter.
StepLog train_step(TrainState& state, const TrainingData& data);

using StepCallback = std::function<void(const StepLog&)>;

/// Runs the pre-training iterations that remain.
void pretrain_canonical(TrainState& state, const TrainingData& data, const StepCallback& on_step = {});
/// Runs every remaining iteration up to total_iters.
void train(TrainState& state, const TrainingData& data, const StepCallback& on_step = {});

/// Fixed-pixel RGB loss used to judge code optimization.
double validation_rgb_loss(const AvatarModel& model, const TrackedFrame& frame, const ad::Matrix& pose_code,
                           const ad::Matrix& app_code, int samples, int pixels, std::uint64_t seed);

struct TestCodes {
  ad::Matrix pose_code;
  ad::Matrix app_code;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

/// Optimizes ω^p (zero start) on the frame with RGB loss only, ω^a held at
/// the first training frame's code; the better of start and end is kept.
TestCodes optimize_test_codes(const AvatarModel& model, const TrackedFrame& frame, const TrainConfig& config,
                              int iterations);

struct FrameEval {
  int frame_id = 0;
  ImageMetrics metrics;
};

struct EvalReport {
  std::vector<FrameEval> frames;
  ImageMetrics mean;
};

/// Renders each frame with optimized test codes and scores it.
EvalReport evaluate(const AvatarModel& model, const std::vector<const TrackedFrame*>& frames,
                    const TrainConfig& config, bool optimize_codes = true);

/// First-training-frame codes; the reenactment and control default.
FrameCondition default_condition(const AvatarModel& model, std::vector<double> expression,
                                 const std::array<double, 6>& pose);

/// Mean pairwise ℓ1 distance of canonical landmark intersections over
/// `pairs` random training-frame pairs (all landmarks, stored codes).
double landmark_scatter(const AvatarModel& model, const TrainingData& data, int pairs, int samples,
                        std::uint64_t seed);

}  // namespace ldf
