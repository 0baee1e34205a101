#include "ldf/mlp.hpp"

#include <cmath>

namespace ldf {

ad::Matrix uniform_matrix(int rows, int cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Matrix m(rows, cols);
  for (double& v : m.data) v = ad::round_to_float(dist(rng));
  return m;
}

Linear::Linear(const std::string& name, int in, int out, std::mt19937_64& rng, bool zero) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = ad::Parameter(name + ".weight", zero ? ad::Matrix(in, out) : uniform_matrix(in, out, bound, rng));
  bias = ad::Parameter(name + ".bias", zero ? ad::Matrix(1, out) : uniform_matrix(1, out, bound, rng));
}

ad::Var Linear::operator()(ad::Tape& tape, ad::Var x) const {
  return ad::add_row(ad::matmul(x, tape.param(weight)), tape.param(bias));
}

}  // namespace ldf
