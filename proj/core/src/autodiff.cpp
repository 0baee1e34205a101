#include "ldf/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace ldf::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Matrix& m) { return {m.data.data(), m.rows, m.cols}; }
Eigen::Map<RowMat> view(Matrix& m) { return {m.data.data(), m.rows, m.cols}; }

std::string shape(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + detail);
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an empty Var");
  return *a.tape();
}

void same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("Vars from different tapes");
}

/// Elementwise unary op; `deriv(x, y)` returns dy/dx.
template <class F, class D>
Var unary(Var a, F f, D deriv) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = f(x.data[i]);
  const int ia = a.id();
  return t.record(std::move(y), {a}, [ia, deriv](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix& ga = tp.grad_buffer(ia);
    // Output value is the node after ia; recompute from x to avoid holding it.
    for (std::size_t i = 0; i < x.size(); ++i) ga.data[i] += g.data[i] * deriv(x.data[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------

Matrix::Matrix(int r, int c, double fill)
    : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {
  if (r < 0 || c < 0) throw std::invalid_argument("negative matrix shape");
}

Matrix Matrix::from(int r, int c, std::vector<double> values) {
  if (values.size() != static_cast<std::size_t>(r) * c)
    throw std::invalid_argument("Matrix::from: size mismatch");
  Matrix m;
  m.rows = r;
  m.cols = c;
  m.data = std::move(values);
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return from(1, static_cast<int>(values.size()), {values.begin(), values.end()});
}

void Matrix::set_zero() { std::fill(data.begin(), data.end(), 0.0); }

Parameter::Parameter(std::string n, Matrix v, double lr)
    : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols), lr_scale(lr) {}

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) grad = Matrix(value.rows, value.cols);
  else grad.set_zero();
}

const Matrix& Var::value() const {
  if (!tape_) throw std::invalid_argument("value() on an empty Var");
  return tape_->value(id_);
}

// ---------------------------------------------------------------------------

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.ref = &p.value;
  const bool learn = record_ && !frozen_.contains(&p);
  n.param = learn ? const_cast<Parameter*>(&p) : nullptr;
  n.requires_grad = learn;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Tape::input(Matrix value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.own = std::move(value);
  if (record_) {
    for (const Var& v : inputs) {
      if (v.tape() != this) throw std::invalid_argument("input Var belongs to another tape");
      n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.own;
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.param) {
    if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
    n.has_grad = true;
    return n.param->grad;
  }
  if (!n.has_grad) {
    const Matrix& v = value(id);
    n.grad = Matrix(v.rows, v.cols);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("backward: root from another tape");
  const Matrix& rv = value(root.id());
  if (rv.rows != 1 || rv.cols != 1)
    throw std::invalid_argument("backward: root must be a scalar, got " + shape(rv));
  if (!nodes_[root.id()].requires_grad) return;
  grad_buffer(root.id()).data[0] += 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    // Parameter leaves never carry closures, so n.grad is the node's own buffer.
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  same_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  require(x.same_shape(y), "add", shape(x) + " vs " + shape(y));
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] + y.data[i];
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    for (int id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      Matrix& gi = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi.data[i] += g.data[i];
    }
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  require(x.same_shape(y), "sub", shape(x) + " vs " + shape(y));
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] - y.data[i];
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  require(x.same_shape(y), "mul", shape(x) + " vs " + shape(y));
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] * y.data[i];
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(ib);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * y.data[i];
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * x.data[i];
    }
  });
}

Var add_row(Var a, Var row) {
  same_tape(a, row);
  const Matrix& x = a.value();
  const Matrix& r = row.value();
  require(r.rows == 1 && r.cols == x.cols, "add_row", shape(x) + " + " + shape(r));
  Matrix out = x;
  for (int i = 0; i < out.rows; ++i) {
    double* o = out.row(i);
    for (int j = 0; j < out.cols; ++j) o[j] += r.data[j];
  }
  const int ia = a.id(), ir = row.id();
  return tape_of(a).record(std::move(out), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    }
    if (t.requires_grad(ir)) {
      Matrix& gr = t.grad_buffer(ir);
      for (int i = 0; i < g.rows; ++i) {
        const double* gi = g.row(i);
        for (int j = 0; j < g.cols; ++j) gr.data[j] += gi[j];
      }
    }
  });
}

Var mul_col(Var a, Var col) {
  same_tape(a, col);
  const Matrix& x = a.value();
  const Matrix& c = col.value();
  require(c.cols == 1 && c.rows == x.rows, "mul_col", shape(x) + " * " + shape(c));
  Matrix out = x;
  for (int i = 0; i < out.rows; ++i) {
    double* o = out.row(i);
    for (int j = 0; j < out.cols; ++j) o[j] *= c.data[i];
  }
  const int ia = a.id(), ic = col.id();
  return tape_of(a).record(std::move(out), {a, col}, [ia, ic](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    const Matrix& c = t.value(ic);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga(i, j) += g(i, j) * c.data[i];
    }
    if (t.requires_grad(ic)) {
      Matrix& gc = t.grad_buffer(ic);
      for (int i = 0; i < g.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < g.cols; ++j) s += g(i, j) * x(i, j);
        gc.data[i] += s;
      }
    }
  });
}

Var scale(Var a, double k) {
  const Matrix& x = a.value();
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = k * x.data[i];
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia, k](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += k * g.data[i];
  });
}

Var add_scalar(Var a, double k) {
  const Matrix& x = a.value();
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] + k;
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
  });
}

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  require(x.cols == y.rows, "matmul", shape(x) + " @ " + shape(y));
  Matrix out(x.rows, y.cols);
  view(out).noalias() = view(x) * view(y);
  const int ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(ib);
    if (t.requires_grad(ia)) view(t.grad_buffer(ia)).noalias() += view(g) * view(y).transpose();
    if (t.requires_grad(ib)) view(t.grad_buffer(ib)).noalias() += view(x).transpose() * view(g);
  });
}

Var sin(Var a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var maximum(Var a, double floor) {
  return unary(a, [floor](double x) { return x > floor ? x : floor; },
               [floor](double x) { return x > floor ? 1.0 : 0.0; });
}

Var relu(Var a) { return maximum(a, 0.0); }

Var leaky_relu(Var a, double slope) {
  return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(Var a) {
  auto f = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  return unary(a, f, [f](double x) {
    const double s = f(x);
    return s * (1.0 - s);
  });
}

Var sum(Var a) {
  const Matrix& x = a.value();
  double s = 0.0;
  for (double v : x.data) s += v;
  const int ia = a.id();
  return tape_of(a).record(Matrix::from(1, 1, {s}), {a}, [ia](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(ia);
    for (double& v : ga.data) v += g.data[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  require(n > 0, "mean", "empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_norm(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows, 1);
  for (int i = 0; i < x.rows; ++i) {
    double s = 0.0;
    const double* r = x.row(i);
    for (int j = 0; j < x.cols; ++j) s += r[j] * r[j];
    out.data[i] = std::sqrt(s);
  }
  const int ia = a.id();
  Tape& t = tape_of(a);
  // The norms are needed in backward; keep a copy in the closure.
  Matrix norms = out;
  return t.record(std::move(out), {a},
                  [ia, norms = std::move(norms)](Tape& t, const Matrix& g) {
                    const Matrix& x = t.value(ia);
                    Matrix& ga = t.grad_buffer(ia);
                    for (int i = 0; i < x.rows; ++i) {
                      const double n = norms.data[i];
                      if (n == 0.0) continue;
                      const double k = g.data[i] / n;
                      for (int j = 0; j < x.cols; ++j) ga(i, j) += k * x(i, j);
                    }
                  });
}

Var row_abs_sum(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows, 1);
  for (int i = 0; i < x.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < x.cols; ++j) s += std::abs(x(i, j));
    out.data[i] = s;
  }
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    Matrix& ga = t.grad_buffer(ia);
    for (int i = 0; i < x.rows; ++i)
      for (int j = 0; j < x.cols; ++j) {
        const double v = x(i, j);
        ga(i, j) += g.data[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
      }
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  const Matrix& x = a.value();
  Matrix out(static_cast<int>(rows.size()), x.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < x.rows, "gather_rows", "row index out of range");
    std::copy_n(x.row(rows[i]), x.cols, out.row(static_cast<int>(i)));
  }
  const int ia = a.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return tape_of(a).record(std::move(out), {a},
                           [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
                             Matrix& ga = t.grad_buffer(ia);
                             for (std::size_t i = 0; i < idx.size(); ++i) {
                               const double* gi = g.row(static_cast<int>(i));
                               double* dst = ga.row(idx[i]);
                               for (int j = 0; j < g.cols; ++j) dst[j] += gi[j];
                             }
                           });
}

Var scatter_rows(Tape& tape, int n_rows, int cols, std::span<const RowScatter> pieces) {
  Matrix out(n_rows, cols);
  std::vector<Var> inputs;
  inputs.reserve(pieces.size());
  for (const RowScatter& p : pieces) {
    const Matrix& v = p.values.value();
    require(p.values.tape() == &tape, "scatter_rows", "piece from another tape");
    require(v.cols == cols && v.rows == static_cast<int>(p.rows.size()), "scatter_rows",
            "piece shape " + shape(v) + " vs " + std::to_string(p.rows.size()) + " rows");
    for (std::size_t i = 0; i < p.rows.size(); ++i) {
      require(p.rows[i] >= 0 && p.rows[i] < n_rows, "scatter_rows", "row index out of range");
      const double* src = v.row(static_cast<int>(i));
      double* dst = out.row(p.rows[i]);
      for (int j = 0; j < cols; ++j) dst[j] += src[j];
    }
    inputs.push_back(p.values);
  }
  std::vector<std::pair<int, std::vector<int>>> routes;
  routes.reserve(pieces.size());
  for (const RowScatter& p : pieces) routes.emplace_back(p.values.id(), p.rows);
  return tape.record(std::move(out), std::span<const Var>(inputs),
                     [routes = std::move(routes)](Tape& t, const Matrix& g) {
                       for (const auto& [id, rows] : routes) {
                         if (!t.requires_grad(id)) continue;
                         Matrix& gp = t.grad_buffer(id);
                         for (std::size_t i = 0; i < rows.size(); ++i) {
                           const double* src = g.row(rows[i]);
                           double* dst = gp.row(static_cast<int>(i));
                           for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
                         }
                       }
                     });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  Tape& t = tape_of(parts[0]);
  const int rows = parts[0].rows();
  int cols = 0;
  for (const Var& p : parts) {
    require(p.tape() == &t, "concat_cols", "inputs from different tapes");
    require(p.rows() == rows, "concat_cols", "row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, int>> layout;  // (id, column offset)
  int off = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (int i = 0; i < rows; ++i) std::copy_n(v.row(i), v.cols, out.row(i) + off);
    layout.emplace_back(p.id(), off);
    off += v.cols;
  }
  return t.record(std::move(out), parts, [layout = std::move(layout)](Tape& t, const Matrix& g) {
    for (const auto& [id, offset] : layout) {
      if (!t.requires_grad(id)) continue;
      Matrix& gp = t.grad_buffer(id);
      for (int i = 0; i < gp.rows; ++i) {
        const double* src = g.row(i) + offset;
        double* dst = gp.row(i);
        for (int j = 0; j < gp.cols; ++j) dst[j] += src[j];
      }
    }
  });
}

Var slice_cols(Var a, int begin, int count) {
  const Matrix& x = a.value();
  require(begin >= 0 && count >= 0 && begin + count <= x.cols, "slice_cols",
          "range out of bounds for " + shape(x));
  Matrix out(x.rows, count);
  for (int i = 0; i < x.rows; ++i) std::copy_n(x.row(i) + begin, count, out.row(i));
  const int ia = a.id();
  return tape_of(a).record(std::move(out), {a}, [ia, begin](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(ia);
    for (int i = 0; i < g.rows; ++i) {
      const double* src = g.row(i);
      double* dst = ga.row(i) + begin;
      for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
    }
  });
}

// ---------------------------------------------------------------------------

AdamMoments* Adam::find(const std::string& name) {
  for (auto& [n, m] : moments_)
    if (n == name) return &m;
  return nullptr;
}

void Adam::step(std::span<Parameter* const> params, double lr) {
  for (Parameter* p : params) {
    if (!p->grad.same_shape(p->value))
      throw std::invalid_argument("adam: gradient shape mismatch for " + p->name);
    AdamMoments* mom = find(p->name);
    if (!mom) {
      moments_.emplace_back(p->name, AdamMoments{});
      mom = &moments_.back().second;
    }
    if (!mom->m.same_shape(p->value)) {
      mom->m = Matrix(p->value.rows, p->value.cols);
      mom->v = Matrix(p->value.rows, p->value.cols);
      mom->step = 0;
    }
    ++mom->step;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(mom->step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(mom->step));
    const double rate = lr * p->lr_scale;
    double* w = p->value.data.data();
    const double* g = p->grad.data.data();
    double* m = mom->m.data.data();
    double* v = mom->v.data.data();
    const std::size_t n = p->value.size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      if (cfg_.round_to_float) {
        m[i] = round_to_float(m[i]);
        v[i] = round_to_float(v[i]);
      }
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= rate * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (cfg_.round_to_float) w[i] = round_to_float(w[i]);
    }
  }
}

double log_linear_lr(double start, double end, long iteration, long total) {
  if (total <= 1) return start;
  const double f = std::clamp(static_cast<double>(iteration) / static_cast<double>(total - 1), 0.0, 1.0);
  return start * std::pow(end / start, f);
}

// ---------------------------------------------------------------------------

GradCheckResult finite_diff_check(const std::function<Var(Tape&)>& fn,
                                  std::span<Parameter* const> params,
                                  const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var out = fn(tape);
    tape.backward(out);
  }
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto evaluate = [&]() {
    Tape tape(false);
    return fn(tape).value().data.at(0);
  };

  std::mt19937 rng(options.seed);
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const int n = static_cast<int>(p.value.size());
    std::vector<int> entries(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) entries[static_cast<std::size_t>(i)] = i;
    if (options.max_entries_per_param >= 0 && options.max_entries_per_param < n) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(static_cast<std::size_t>(options.max_entries_per_param));
    }
    for (int idx : entries) {
      const double saved = p.value.data[idx];
      p.value.data[idx] = saved + options.epsilon;
      const double fp = evaluate();
      p.value.data[idx] = saved - options.epsilon;
      const double fm = evaluate();
      p.value.data[idx] = saved;
      const double numeric = (fp - fm) / (2.0 * options.epsilon);
      const double a = analytic[pi].data[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      if (options.skip_kinks && err > 1e-4) {
        const double f0 = evaluate();
        const double fwd = (fp - f0) / options.epsilon, bwd = (f0 - fm) / options.epsilon;
        const double jump = std::abs(fwd - bwd);
        if (jump > 1e-3 * std::max({std::abs(fwd), std::abs(bwd), options.floor}) && jump > std::abs(a - numeric)) {
          ++result.entries_skipped;
          continue;
        }
      }
      ++result.entries_checked;
      if (err > result.max_rel_error || result.worst_index < 0) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_param = p.name;
          result.worst_index = idx;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return result;
}

}  // namespace ldf::ad
