#pragma once

#include "ldf/rig.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ldf {

/// Binary landmark × expression mask: row l selects the expression
/// dimensions that may drive the deformation field centered on landmark l.
struct AttentionMask {
  int num_landmarks = 0;
  int num_expressions = 0;
  double quantile = 0.25;
  std::vector<std::uint8_t> bits;

  bool at(int l, int k) const { return bits[static_cast<std::size_t>(l) * num_expressions + k] != 0; }
  std::span<const std::uint8_t> row(int l) const {
    return {bits.data() + static_cast<std::size_t>(l) * num_expressions,
            static_cast<std::size_t>(num_expressions)};
  }

  static AttentionMask all_ones(int num_landmarks, int num_expressions);
  bool operator==(const AttentionMask&) const = default;
};

/// |displacement| of landmark l under expression basis k alone (N_l × E).
Eigen::MatrixXd displacement_matrix(const BlendshapeRig& rig);

/// Per column, zeroes entries strictly below the column threshold and sets
/// the survivors to 1. The threshold is the smallest column value with at
/// least ⌈q·N_l⌉ entries strictly below it; a column without such a value
/// (constant, or ties at the top) keeps every entry.
AttentionMask binarize(const Eigen::MatrixXd& displacement, double quantile = 0.25);

/// Column threshold used by binarize, or -inf when nothing is zeroed.
double column_threshold(const Eigen::VectorXd& column, double quantile);

/// e ∘ A_l.
std::vector<double> apply_mask(std::span<const double> expression, std::span<const std::uint8_t> mask_row);

/// Rows of '0'/'1' characters separated by spaces, one landmark per line.
std::string to_text(const AttentionMask& mask);

}  // namespace ldf
