#pragma once

#include "ldf/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace ldf {

/// Fully-connected layer y = x·W + b with W stored in×out.
struct Linear {
  ad::Parameter weight;
  ad::Parameter bias;

  Linear() = default;
  /// Fan-in uniform init U(−1/√in, 1/√in); `zero` gives an all-zero layer.
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng, bool zero = false);

  ad::Var operator()(ad::Tape& tape, ad::Var x) const;
  int in() const { return weight.value.rows; }
  int out() const { return weight.value.cols; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

ad::Matrix uniform_matrix(int rows, int cols, double bound, std::mt19937_64& rng);

}  // namespace ldf
