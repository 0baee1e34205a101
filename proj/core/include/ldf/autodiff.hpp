#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace ldf::ad {

/// Dense row-major matrix of doubles. Every tape value is one of these;
/// vectors are stored as 1×n rows or n×1 columns.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0);
  static Matrix from(int r, int c, std::vector<double> values);
  static Matrix row_vector(std::span<const double> values);

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  void set_zero();
};

/// A named learnable tensor. Gradients from every tape that references it
/// accumulate into `grad` until zero_grad().
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  /// Multiplier on the optimizer's base learning rate.
  double lr_scale = 1.0;

  Parameter() = default;
  Parameter(std::string name, Matrix value, double lr_scale = 1.0);
  void zero_grad();
  std::size_t size() const { return value.size(); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  /// Stays valid for the tape's lifetime.
  const Matrix& value() const;
  int rows() const { return value().rows; }
  int cols() const { return value().cols; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records a computation graph of matrix-valued primitives and replays it in
/// reverse. Nodes are appended in evaluation order, so the recording order is
/// already a topological order; backward() visits each node once, last to first.
///
/// A tape built with record=false treats parameters as constants and stores
/// no backward closures (inference mode).
class Tape {
 public:
  /// Receives the gradient of the node's output and accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf aliasing p.value (no copy). When recording, gradients accumulate
  /// into p.grad, so the parameter must not be shared with a concurrent
  /// recording tape; inference tapes never write to it.
  Var param(const Parameter& p);
  /// Subsequent param(p) calls on this tape yield a constant leaf.
  void freeze(const Parameter& p) { frozen_.insert(&p); }
  /// Differentiable leaf with its own gradient buffer (used by checks).
  Var input(Matrix value);

  /// Appends an op node. `fn` is dropped when no input requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);

  /// Reverse sweep from a 1×1 root. Throws std::invalid_argument otherwise.
  void backward(Var root);

  const Matrix& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }
  /// Gradient buffer of a node, allocated (zeroed) on first access.
  Matrix& grad_buffer(int id);
  /// Gradient of a node after backward(); zeros when nothing reached it.
  const Matrix& grad(Var v) { return grad_buffer(v.id()); }

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* ref = nullptr;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    Matrix grad;
    BackwardFn backward;
  };
  // A deque keeps value references valid while nodes are appended.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  std::unordered_set<const Parameter*> frozen_;
  bool record_;
};

// ---------------------------------------------------------------------------
// Primitive ops. Shapes are checked; mismatches throw std::invalid_argument.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a (N×C) + row (1×C) broadcast over rows.
Var add_row(Var a, Var row);
/// a (N×C) * col (N×1) broadcast over columns.
Var mul_col(Var a, Var col);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var matmul(Var a, Var b);

Var sin(Var a);
Var cos(Var a);
Var exp(Var a);
Var square(Var a);
Var abs(Var a);
/// Elementwise max(a, floor); subgradient 0 at the kink.
Var maximum(Var a, double floor);
Var relu(Var a);
Var leaky_relu(Var a, double slope = 0.01);
Var sigmoid(Var a);

/// Sum of all entries, 1×1.
Var sum(Var a);
Var mean(Var a);
/// Per-row Euclidean norm (N×1). Subgradient 0 at a zero row.
Var row_norm(Var a);
/// Per-row sum of absolute values (N×1).
Var row_abs_sum(Var a);

Var gather_rows(Var a, std::span<const int> rows);
/// Sums pieces into an (n_rows × cols) zero matrix at the given row indices.
struct RowScatter {
  Var values;
  std::vector<int> rows;
};
Var scatter_rows(Tape& tape, int n_rows, int cols, std::span<const RowScatter> pieces);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, int begin, int count);

// ---------------------------------------------------------------------------

/// Adam moments for one parameter.
struct AdamMoments {
  Matrix m;
  Matrix v;
  long step = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Round parameters and moments to float32 after each step so that the
  /// 32-bit checkpoint format round-trips exactly.
  bool round_to_float = true;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update with base learning rate `lr` (times each parameter's
  /// lr_scale). Parameters whose shape changed since the last step get
  /// fresh moments.
  void step(std::span<Parameter* const> params, double lr);

  const AdamConfig& config() const { return cfg_; }
  /// Moments keyed by parameter name, in insertion order.
  std::vector<std::pair<std::string, AdamMoments>>& moments() { return moments_; }
  const std::vector<std::pair<std::string, AdamMoments>>& moments() const { return moments_; }
  AdamMoments* find(const std::string& name);

 private:
  AdamConfig cfg_;
  std::vector<std::pair<std::string, AdamMoments>> moments_;
};

/// Log-linear interpolation from `start` to `end` over `total` iterations.
double log_linear_lr(double start, double end, long iteration, long total);

inline float round_to_float(double x) { return static_cast<float>(x); }

// ---------------------------------------------------------------------------

struct GradCheckOptions {
  double epsilon = 1e-4;
  /// Entries per parameter to probe; -1 probes all of them.
  int max_entries_per_param = -1;
  unsigned seed = 0;
  /// Denominator floor of the relative error.
  double floor = 1e-6;
  /// An entry with relative error above 1e-4 is re-probed one-sidedly. If the
  /// forward and backward differences disagree by more than 1e-3 (relative)
  /// and by more than the central difference misses the analytic value, the
  /// probe straddles a kink of a piecewise-linear op: the entry is counted
  /// in entries_skipped instead of being scored.
  bool skip_kinks = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int entries_checked = 0;
  int entries_skipped = 0;
};

/// Compares reverse-mode gradients of the scalar built by `fn` against
/// central finite differences. `fn` is invoked on a fresh tape for every
/// evaluation; the relative error of an entry is
/// |analytic − numeric| / max(|analytic|, |numeric|, floor).
GradCheckResult finite_diff_check(const std::function<Var(Tape&)>& fn,
                                  std::span<Parameter* const> params,
                                  const GradCheckOptions& options = {});

}  // namespace ldf::ad
