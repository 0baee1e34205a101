#pragma once

#include "ldf/autodiff.hpp"
#include "ldf/mlp.hpp"
#include "ldf/rig.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

namespace ldf {

/// Regular lattice over an axis-aligned box: `resolution` cells per axis,
/// resolution + 1 nodes per axis, node (i, j, k) stored at row (i·n + j)·n + k.
struct GridGeometry {
  Eigen::AlignedBox3d box;
  int resolution = 1;

  int nodes_per_axis() const { return resolution + 1; }
  int node_count() const { return nodes_per_axis() * nodes_per_axis() * nodes_per_axis(); }
  int node_index(int i, int j, int k) const { return (i * nodes_per_axis() + j) * nodes_per_axis() + k; }
  Vec3 node_position(int i, int j, int k) const;
  bool contains(const double* x) const;
};

/// Trilinear interpolation of a node table (node_count × C) at N×3
/// positions; rows outside the box are zero. Differentiable w.r.t. both the
/// table and the positions.
ad::Var trilinear(ad::Var grid, ad::Var positions, const GridGeometry& geometry);

/// Scalar evaluation of one channel (tests and resampling).
double trilinear(const ad::Matrix& grid, int channel, const Vec3& x, const GridGeometry& geometry);

struct VolumeConfig {
  int resolution = 64;
  int app_channels = 12;
  int decoder_hidden = 64;
  int view_freqs = 2;
  int app_code_dim = 16;
  /// σ = density_scale · ReLU(interpolated density feature).
  double density_scale = 25.0;
  Vec3 background{1.0, 1.0, 1.0};
  /// Learning-rate multiplier for both grids.
  double grid_lr_scale = 20.0;
};

struct VolumeQuery {
  ad::Var sigma;  // N×1
  ad::Var rgb;    // N×3
};

struct QueryOptions {
  /// Leave colour undecoded (background) wherever σ is zero. Neither the
  /// composite nor any gradient depends on colour there.
  bool skip_empty = false;
  /// Per-cell flags from prune_mask(); samples in pruned cells get σ = 0.
  const std::vector<std::uint8_t>* pruned = nullptr;
};

/// Dense density and appearance grids with a small colour decoder
/// conditioned on view direction and the per-frame appearance code.
class CanonicalVolume {
 public:
  CanonicalVolume(const Eigen::AlignedBox3d& bounds, VolumeConfig config, std::uint64_t seed);

  /// `positions` N×3 canonical points, `directions` N×3 unit vectors,
  /// `app_code` 1×app_code_dim.
  VolumeQuery query(ad::Tape& tape, ad::Var positions, const ad::Matrix& directions, ad::Var app_code,
                    const QueryOptions& options = {}) const;

  /// Activated density at one point (0 outside the box).
  double density_at(const Vec3& x) const;

  /// Resamples both grids trilinearly onto `new_resolution` cells per axis.
  void upsample(int new_resolution);

  /// One flag per cell (resolution³, x-major): 1 when every corner's
  /// activated density is below `threshold`.
  std::vector<std::uint8_t> prune_mask(double threshold = 1e-4) const;

  std::vector<ad::Parameter*> parameters();
  std::vector<ad::Parameter*> grid_parameters();
  std::size_t parameter_count() const;

  const GridGeometry& geometry() const { return geometry_; }
  const VolumeConfig& config() const { return config_; }
  int resolution() const { return geometry_.resolution; }
  ad::Parameter& density_grid() { return density_; }
  ad::Parameter& app_grid() { return app_; }
  const ad::Parameter& density_grid() const { return density_; }
  const ad::Parameter& app_grid() const { return app_; }
  /// Restores a grid resolution before loading saved tensors.
  void reshape(int resolution);

 private:
  ad::Var decode(ad::Tape& tape, ad::Var features, const ad::Matrix& directions, ad::Var app_code) const;

  GridGeometry geometry_;
  VolumeConfig config_;
  ad::Parameter density_;
  ad::Parameter app_;
  ad::Parameter dec1_feat_;
  ad::Parameter dec1_code_;
  ad::Parameter dec1_bias_;
  Linear dec2_;
};

}  // namespace ldf
