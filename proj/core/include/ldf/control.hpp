#pragma once

#include "ldf/dataset.hpp"
#include "ldf/model.hpp"
#include "ldf/render.hpp"
#include "ldf/trainer.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ldf {

/// One frame of a driving performance.
struct DriverFrame {
  std::vector<double> expression;
  std::array<double, 6> pose{};
};

/// Expression / pose sequence of a dataset split.
std::vector<DriverFrame> driver_from_frames(const std::vector<const TrackedFrame*>& frames);

/// Largest |coefficient| a driver may use before reenact warns.
constexpr double kExpressionWarnLimit = 1.5;

struct ReenactResult {
  std::vector<RenderedImage> images;
  std::vector<std::string> warnings;
};

/// Renders the model under each driver frame with the first training
/// frame's latent codes. The camera follows the driver's head rotation.
ReenactResult reenact(const AvatarModel& model, const Camera& base_camera, const std::vector<DriverFrame>& driver,
                      const RenderOptions& options = {});

/// One injected expression for a set of fields.
struct FieldOverride {
  std::vector<int> field_ids;
  std::vector<double> expression;
};

/// `base` with each override applied to its fields (e_override∘A_l there,
/// the base expression elsewhere). Later overrides win on shared fields.
FrameCondition with_overrides(const AvatarModel& model, FrameCondition base,
                              const std::vector<FieldOverride>& overrides);

RenderedImage inject_local_expression(const AvatarModel& model, const FrameCondition& base,
                                      const std::vector<int>& field_ids, const std::vector<double>& expression,
                                      const Camera& camera, const RenderOptions& options = {});

/// Field indices whose landmark tag starts with `prefix` ("eye", "eye_r", ...).
std::vector<int> fields_with_tag(const AvatarModel& model, const std::string& prefix);

/// Pixels whose centre ray passes within the weight-law cutoff of any
/// selected field centre, dilated by `dilate` pixels (square neighbourhood).
std::vector<std::uint8_t> support_mask(const AvatarModel& model, const FrameCondition& condition,
                                       const std::vector<int>& field_ids, const Camera& camera, int dilate = 2);

/// Σ over pixels of the ℓ1 RGB difference, and the share of it under `mask`.
struct DiffMass {
  double total = 0.0;
  double inside = 0.0;
  double fraction() const { return total > 0.0 ? inside / total : 1.0; }
};
DiffMass diff_mass(const RenderedImage& a, const RenderedImage& b, const std::vector<std::uint8_t>& mask);

/// Near and far distances bracketing `bounds` as seen from the camera.
std::pair<double, double> depth_range(const Camera& camera, const Eigen::AlignedBox3d& bounds);

/// Per pixel: +1 / -1 for the sign of the surface point's x (the subject's
/// left / right), 0 where alpha < 0.5.
std::vector<int> surface_sides(const RenderedImage& image, const Camera& camera);

}  // namespace ldf
