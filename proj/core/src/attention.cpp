#include "ldf/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ldf {

AttentionMask AttentionMask::all_ones(int num_landmarks, int num_expressions) {
  AttentionMask m;
  m.num_landmarks = num_landmarks;
  m.num_expressions = num_expressions;
  m.bits.assign(static_cast<std::size_t>(num_landmarks) * num_expressions, 1);
  return m;
}

Eigen::MatrixXd displacement_matrix(const BlendshapeRig& rig) {
  Eigen::MatrixXd d(rig.num_landmarks(), rig.num_expressions);
  for (int l = 0; l < rig.num_landmarks(); ++l)
    for (int k = 0; k < rig.num_expressions; ++k)
      d(l, k) = rig.basis_vector(rig.landmark_vertex_ids[l], k).norm();
  return d;
}

double column_threshold(const Eigen::VectorXd& column, double quantile) {
  const auto n = static_cast<std::size_t>(column.size());
  const auto need = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(n)));
  std::vector<double> sorted(column.data(), column.data() + n);
  std::sort(sorted.begin(), sorted.end());
  // sorted[i] has exactly i entries strictly below it when it differs from
  // sorted[i-1]; the first such index ≥ need gives the threshold.
  for (std::size_t i = std::max<std::size_t>(need, 1); i < n; ++i)
    if (sorted[i] > sorted[i - 1]) return sorted[i];
  return -std::numeric_limits<double>::infinity();
}

AttentionMask binarize(const Eigen::MatrixXd& displacement, double quantile) {
  if (!(quantile > 0.0 && quantile < 1.0)) throw std::invalid_argument("binarize: quantile must be in (0,1)");
  if ((displacement.array() < 0.0).any()) throw std::invalid_argument("binarize: negative displacement");
  AttentionMask mask;
  mask.num_landmarks = static_cast<int>(displacement.rows());
  mask.num_expressions = static_cast<int>(displacement.cols());
  mask.quantile = quantile;
  mask.bits.assign(static_cast<std::size_t>(displacement.size()), 1);
  for (int k = 0; k < displacement.cols(); ++k) {
    const double thr = column_threshold(displacement.col(k), quantile);
    for (int l = 0; l < displacement.rows(); ++l)
      if (displacement(l, k) < thr) mask.bits[static_cast<std::size_t>(l) * mask.num_expressions + k] = 0;
  }
  return mask;
}

std::vector<double> apply_mask(std::span<const double> expression, std::span<const std::uint8_t> mask_row) {
  if (expression.size() != mask_row.size())
    throw std::invalid_argument("apply_mask: expression and mask lengths differ");
  std::vector<double> out(expression.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = mask_row[k] ? expression[k] : 0.0;
  return out;
}

std::string to_text(const AttentionMask& mask) {
  std::ostringstream os;
  for (int l = 0; l < mask.num_landmarks; ++l) {
    for (int k = 0; k < mask.num_expressions; ++k) os << (k ? " " : "") << (mask.at(l, k) ? '1' : '0');
    os << '\n';
  }
  return os.str();
}

}  // namespace ldf
