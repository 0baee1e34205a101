#include "ldf/autodiff.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace ldf;
using namespace ldf::ad;
using ldf::testing::random_matrix;

namespace {

// Central differences of a scalar function of one parameter, checked
// against the tape gradient.
double max_grad_error(Parameter& p, const std::function<Var(Tape&)>& fn) {
  Parameter* ps[] = {&p};
  GradCheckOptions o;
  o.floor = 1e-6;
  return finite_diff_check(fn, ps, o).max_rel_error;
}

}  // namespace

TEST_CASE("elementwise and reduction gradients match finite differences") {
  std::mt19937_64 rng(1);
  Parameter a("a", random_matrix(4, 3, rng, 0.2, 1.0));
  Parameter b("b", random_matrix(4, 3, rng, 0.2, 1.0));
  const std::vector<std::pair<const char*, std::function<Var(Tape&)>>> cases = {
      {"add", [&](Tape& t) { return sum(square(add(t.param(a), t.param(b)))); }},
      {"sub", [&](Tape& t) { return sum(square(sub(t.param(a), t.param(b)))); }},
      {"mul", [&](Tape& t) { return sum(mul(t.param(a), t.param(b))); }},
      {"sin_cos", [&](Tape& t) { return sum(mul(sin(t.param(a)), cos(t.param(b)))); }},
      {"exp", [&](Tape& t) { return mean(exp(t.param(a))); }},
      {"sigmoid", [&](Tape& t) { return sum(sigmoid(t.param(a))); }},
      {"leaky", [&](Tape& t) { return sum(leaky_relu(sub(t.param(a), t.param(b)), 0.1)); }},
      {"row_norm", [&](Tape& t) { return sum(row_norm(t.param(a))); }},
      {"row_abs_sum", [&](Tape& t) { return sum(row_abs_sum(sub(t.param(a), t.param(b)))); }},
      {"scale_add_scalar", [&](Tape& t) { return sum(square(add_scalar(scale(t.param(a), 3.0), -0.5))); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(max_grad_error(a, fn) < 1e-6);
  }
}

TEST_CASE("matmul and broadcast gradients") {
  std::mt19937_64 rng(2);
  Parameter x("x", random_matrix(5, 4, rng));
  Parameter w("w", random_matrix(4, 3, rng));
  Parameter r("r", random_matrix(1, 3, rng));
  Parameter c("c", random_matrix(5, 1, rng));
  auto fn = [&](Tape& t) {
    return sum(square(mul_col(add_row(matmul(t.param(x), t.param(w)), t.param(r)), t.param(c))));
  };
  Parameter* ps[] = {&x, &w, &r, &c};
  CHECK(finite_diff_check(fn, ps).max_rel_error < 1e-6);
}

TEST_CASE("gather, scatter, concat and slice gradients") {
  std::mt19937_64 rng(3);
  Parameter a("a", random_matrix(6, 2, rng));
  Parameter b("b", random_matrix(6, 3, rng));
  auto fn = [&](Tape& t) {
    const int rows1[] = {0, 2, 2, 5};
    const int rows2[] = {1, 2};
    Var g1 = gather_rows(t.param(a), rows1);
    Var g2 = slice_cols(t.param(b), 1, 2);
    const RowScatter pieces[] = {{g1, {3, 1, 0, 2}}, {gather_rows(g2, rows2), {1, 4}}};
    Var s = scatter_rows(t, 5, 2, pieces);
    const Var parts[] = {s, s};
    return sum(square(concat_cols(parts)));
  };
  Parameter* ps[] = {&a, &b};
  CHECK(finite_diff_check(fn, ps).max_rel_error < 1e-6);
}

TEST_CASE("backward rejects a non-scalar root") {
  Tape t;
  Parameter p("p", Matrix(2, 2, 1.0));
  Var v = t.param(p);
  CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
}

TEST_CASE("shape mismatches throw") {
  Tape t;
  Var a = t.constant(Matrix(2, 3));
  Var b = t.constant(Matrix(3, 2));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("values stay addressable while the tape grows") {
  Tape t;
  Var a = t.constant(Matrix(3, 3, 2.0));
  const Matrix& ref = a.value();
  for (int i = 0; i < 5000; ++i) t.constant(Matrix(1, 1, i));
  CHECK(ref(2, 2) == 2.0);
  CHECK(&ref == &a.value());
}

TEST_CASE("inference tapes record no gradients") {
  Parameter p("p", Matrix(2, 2, 1.0));
  Tape t(false);
  Var s = sum(square(t.param(p)));
  CHECK_FALSE(t.requires_grad(s));
  CHECK(s.value()(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("frozen parameters act as constants") {
  Parameter p("p", Matrix(1, 2, 1.0));
  Parameter q("q", Matrix(1, 2, 2.0));
  p.zero_grad();
  q.zero_grad();
  Tape t;
  t.freeze(p);
  Var s = sum(mul(t.param(p), t.param(q)));
  t.backward(s);
  CHECK(p.grad(0, 0) == 0.0);
  CHECK(q.grad(0, 0) == 1.0);
}

TEST_CASE("gradients from repeated parameter uses accumulate") {
  Parameter p("p", Matrix::from(1, 1, {3.0}));
  p.zero_grad();
  Tape t;
  Var v = t.param(p);
  t.backward(sum(add(mul(v, v), v)));
  CHECK(p.grad(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("Adam first step moves each entry by lr against the gradient sign") {
  Parameter p("p", Matrix::from(1, 3, {0.5, -0.25, 1.0}));
  p.grad = Matrix::from(1, 3, {2.0, -3.0, 0.0});
  Adam adam;
  Parameter* ps[] = {&p};
  adam.step(ps, 0.01);
  // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
  CHECK(p.value(0, 0) == doctest::Approx(0.49).epsilon(1e-6));
  CHECK(p.value(0, 1) == doctest::Approx(-0.24).epsilon(1e-6));
  CHECK(p.value(0, 2) == 1.0);
  CHECK(adam.find("p")->step == 1);
  for (double v : p.value.data) CHECK(static_cast<double>(static_cast<float>(v)) == v);
}

TEST_CASE("Adam applies lr_scale and resets moments on reshape") {
  Parameter p("p", Matrix::from(1, 1, {0.0}), 20.0);
  p.grad = Matrix::from(1, 1, {1.0});
  Adam adam({0.9, 0.999, 1e-8, false});
  Parameter* ps[] = {&p};
  adam.step(ps, 1e-3);
  CHECK(p.value(0, 0) == doctest::Approx(-0.02).epsilon(1e-6));
  p.value = Matrix(2, 2);
  p.grad = Matrix(2, 2, 1.0);
  adam.step(ps, 1e-3);
  CHECK(adam.find("p")->step == 1);
  CHECK(adam.find("p")->m.rows == 2);
}

TEST_CASE("log-linear learning rate hits both endpoints") {
  CHECK(log_linear_lr(1e-3, 1e-4, 0, 100) == doctest::Approx(1e-3));
  CHECK(log_linear_lr(1e-3, 1e-4, 99, 100) == doctest::Approx(1e-4));
  // Geometric midpoint.
  CHECK(log_linear_lr(1e-3, 1e-4, 50, 101) == doctest::Approx(std::sqrt(1e-7)));
  CHECK(log_linear_lr(1e-3, 1e-4, 500, 100) == doctest::Approx(1e-4));
}

TEST_CASE("finite_diff_check reports a wrong gradient") {
  Parameter p("p", Matrix::from(1, 2, {0.3, 0.7}));
  auto bad = [&](Tape& t) {
    Var x = t.param(p);
    // Forward is x², backward claims 3x.
    Matrix y(1, 2);
    for (int i = 0; i < 2; ++i) y.data[i] = x.value().data[i] * x.value().data[i];
    const int ix = x.id();
    Var out = t.record(std::move(y), {x}, [ix](Tape& tp, const Matrix& g) {
      Matrix& gx = tp.grad_buffer(ix);
      for (int i = 0; i < 2; ++i) gx.data[i] += g.data[i] * 3.0 * tp.value(ix).data[i];
    });
    return sum(out);
  };
  Parameter* ps[] = {&p};
  CHECK(finite_diff_check(bad, ps).max_rel_error > 0.3);
}

TEST_CASE("gradient check separates kinks from wrong gradients") {
  Parameter p("p", Matrix(1, 3));
  p.value.data = {0.5, 3e-5, -0.7};
  auto kinked = [&](Tape& t) { return sum(scale(relu(t.param(p)), 2.0)); };
  Parameter* ps[] = {&p};
  GradCheckOptions o;
  const GradCheckResult plain = finite_diff_check(kinked, ps, o);
  CHECK(plain.max_rel_error > 0.1);
  CHECK(plain.worst_index == 1);
  o.skip_kinks = true;
  const GradCheckResult skipped = finite_diff_check(kinked, ps, o);
  CHECK(skipped.entries_skipped == 1);
  CHECK(skipped.entries_checked == 2);
  CHECK(skipped.max_rel_error < 1e-9);

  // The second term's dependence on p is invisible to the tape.
  p.value.data = {0.5, 0.9, -0.7};
  auto wrong = [&](Tape& t) {
    double hidden = 0.0;
    for (double v : p.value.data) hidden += v * v;
    return add_scalar(sum(square(t.param(p))), hidden);
  };
  const GradCheckResult bug = finite_diff_check(wrong, ps, o);
  CHECK(bug.entries_skipped == 0);
  CHECK(bug.max_rel_error == doctest::Approx(0.5).epsilon(1e-3));
}
