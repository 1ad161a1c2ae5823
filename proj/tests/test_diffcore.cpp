#include <doctest.h>

#include <cmath>

#include "sfda/diffcore.hpp"
#include "sfda/losses.hpp"
#include "sfda/model.hpp"
#include "test_util.hpp"

using namespace sfda;
using sfda::testing::max_abs_diff;
using sfda::testing::random_matrix;

namespace {

Matrix mat(Index r, Index c, std::initializer_list<Scalar> v) {
  Matrix m(r, c);
  Index i = 0;
  for (Scalar x : v) m.data()[i++] = x;
  return m;
}

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      Scalar s = 0.0;
      for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("matmul values") {
  Tape t;
  SUBCASE("identity") {
    const Matrix a = mat(2, 2, {1, 2, 3, 4});
    CHECK(matmul(t.constant(a), t.constant(Matrix::Identity(2, 2))).value() == a);
  }
  SUBCASE("orthogonal vectors") {
    CHECK(matmul(t.constant(mat(1, 2, {1, 0})), t.constant(mat(2, 1, {0, 1}))).value()(0, 0) == 0.0);
  }
  SUBCASE("triple-loop oracle, exact") {
    Rng rng(11);
    const Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng);
    CHECK(sfda::testing::same_bits(matmul(t.constant(a), t.constant(b)).value(), triple_loop(a, b)));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3))), DimensionError);
  }
}

TEST_CASE("matmul backward accumulates into both inputs") {
  Rng rng(3);
  Tape t;
  const Matrix av = random_matrix(3, 4, rng), bv = random_matrix(4, 2, rng);
  Var a = t.input(av), b = t.input(bv);
  t.backward(sum(matmul(a, b)));
  const Matrix ones = Matrix::Ones(3, 2);
  CHECK(max_abs_diff(a.grad(), ones * bv.transpose()) < 1e-14);
  CHECK(max_abs_diff(b.grad(), av.transpose() * ones) < 1e-14);
}

TEST_CASE("softmax") {
  SUBCASE("uniform logits") {
    const Matrix p = softmax_rows(Matrix::Zero(1, 4));
    for (Index k = 0; k < 4; ++k) CHECK(p(0, k) == 0.25);
  }
  SUBCASE("large logits do not overflow") {
    const Matrix p = softmax_rows(mat(1, 2, {1000, 0}));
    CHECK(std::abs(p(0, 0) - 1.0) <= 1e-12);
    CHECK(std::abs(p(0, 1)) <= 1e-12);
  }
  SUBCASE("rows sum to one") {
    Rng rng(5);
    for (Scalar scale : {1.0, 1e3}) {
      const Matrix p = softmax_rows(random_matrix(8, 5, rng, scale));
      for (Index i = 0; i < 8; ++i) {
        CHECK(std::abs(p.row(i).sum() - 1.0) <= 1e-12);
        CHECK(p.row(i).minCoeff() >= 0.0);
      }
    }
  }
  SUBCASE("log_softmax agrees with log of softmax") {
    Rng rng(6);
    const Matrix z = random_matrix(4, 3, rng, 2.0);
    CHECK(max_abs_diff(log_softmax_rows(z), softmax_rows(z).array().log().matrix()) < 1e-14);
  }
}

TEST_CASE("batchnorm forward") {
  Tape t;
  SUBCASE("zero-variance column maps to zero") {
    Matrix x(4, 2);
    x << 3, 1, 3, 2, 3, 5, 3, -1;
    BatchNormState st(2);
    const Matrix y = batchnorm_forward(t.constant(x), t.constant(Matrix::Ones(1, 2)), t.constant(Matrix::Zero(1, 2)),
                                       BnMode::train, st)
                         .value();
    for (Index i = 0; i < 4; ++i) CHECK(y(i, 0) == 0.0);
    CHECK(y.allFinite());
  }
  SUBCASE("gamma = 0 gives beta") {
    Rng rng(1);
    BatchNormState st(3);
    const Matrix beta = mat(1, 3, {0.5, -1.0, 2.0});
    const Matrix y = batchnorm_forward(t.constant(random_matrix(5, 3, rng)), t.constant(Matrix::Zero(1, 3)),
                                       t.constant(beta), BnMode::train, st)
                         .value();
    for (Index i = 0; i < 5; ++i) CHECK(y.row(i) == beta);
  }
  SUBCASE("output moments match beta and gamma") {
    // eps biases the std by about eps / (2 var); an input std of 5 keeps that below 1e-6.
    Rng rng(2);
    const Index B = 64, d = 6;
    const Matrix x = random_matrix(B, d, rng, 5.0);
    const Matrix gamma = mat(1, d, {1.0, 2.0, 0.5, 3.0, 1.5, 0.25});
    const Matrix beta = mat(1, d, {0.0, -1.0, 2.0, 0.5, -3.0, 1.0});
    BatchNormState st(d);
    const Matrix y =
        batchnorm_forward(t.constant(x), t.constant(gamma), t.constant(beta), BnMode::train, st).value();
    for (Index j = 0; j < d; ++j) {
      const Scalar mean = y.col(j).mean();
      const Scalar var = (y.col(j).array() - mean).square().mean();
      CHECK(std::abs(mean - beta(0, j)) <= 1e-6);
      CHECK(std::abs(std::sqrt(var) - gamma(0, j)) <= 1e-6);
    }
  }
  SUBCASE("running statistics") {
    Matrix x(3, 1);
    x << 1, 2, 6;
    BatchNormState st(1);
    batchnorm_forward(t.constant(x), t.constant(Matrix::Ones(1, 1)), t.constant(Matrix::Zero(1, 1)),
                      BnMode::train, st);
    // mean 3, unbiased variance 7
    CHECK(st.running_mean(0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(st.running_var(0) == doctest::Approx(0.9 + 0.7).epsilon(1e-15));
    BatchNormState frozen(1);
    batchnorm_forward(t.constant(x), t.constant(Matrix::Ones(1, 1)), t.constant(Matrix::Zero(1, 1)),
                      BnMode::train, frozen, false);
    CHECK(frozen.running_mean(0) == 0.0);
    CHECK(frozen.running_var(0) == 1.0);
  }
  SUBCASE("eval mode uses running statistics") {
    BatchNormState st(1);
    st.running_mean(0) = 2.0;
    st.running_var(0) = 4.0 - st.eps;
    const Matrix y = batchnorm_forward(t.constant(mat(1, 1, {6.0})), t.constant(Matrix::Ones(1, 1)),
                                       t.constant(Matrix::Zero(1, 1)), BnMode::eval, st)
                         .value();
    CHECK(y(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("single row in train mode is degenerate") {
    BatchNormState st(2);
    CHECK_THROWS_AS(batchnorm_forward(t.constant(Matrix::Ones(1, 2)), t.constant(Matrix::Ones(1, 2)),
                                      t.constant(Matrix::Zero(1, 2)), BnMode::train, st),
                    DegenerateBatchError);
  }
}

TEST_CASE("gradient_check on a quadratic") {
  Parameter w("w", mat(1, 3, {1, 2, 3}), LrGroup::head);
  Parameter* ps[] = {&w};
  const GradCheckReport r = gradient_check([&](Tape& t) {
    Var v = t.param(w);
    return sum(mul(v, v));
  }, ps);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-9);
  CHECK(r.entries_checked == 3);
  CHECK(w.grad == mat(1, 3, {2, 4, 6}));
}

TEST_CASE("gradient_check aborts on a non-finite loss") {
  Parameter w("w", mat(1, 1, {0.0}), LrGroup::head);
  Parameter* ps[] = {&w};
  CHECK_THROWS_AS(gradient_check([&](Tape& t) { return scale(exp(t.param(w)), std::nan("")); }, ps),
                  GradCheckAborted);
}

TEST_CASE("relative_error") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
  // Below the floor the difference is measured against the floor.
  CHECK(relative_error(0.0, 1e-11) == doctest::Approx(1e-7));
}

TEST_CASE("every op passes a finite-difference check") {
  Rng rng(21);
  Parameter a("a", random_matrix(4, 3, rng), LrGroup::head);
  Parameter b("b", random_matrix(3, 5, rng), LrGroup::head);
  Parameter bias("bias", random_matrix(1, 5, rng), LrGroup::head);
  Parameter gamma("gamma", random_matrix(1, 5, rng), LrGroup::head);
  Parameter beta("beta", random_matrix(1, 5, rng), LrGroup::head);
  Parameter* ps[] = {&a, &b, &bias, &gamma, &beta};
  const Matrix c = random_matrix(4, 5, rng);
  const std::vector<Index> rows{3, 1, 1};
  const std::vector<int> cols{4, 0, 2};

  auto check = [&](auto build) {
    const GradCheckReport r = gradient_check(build, ps);
    CHECK_MESSAGE(r.passed, r.worst_entry, " rel err ", r.max_rel_error);
  };
  check([&](Tape& t) {
    Var z = add_bias(matmul(t.param(a), t.param(b)), t.param(bias));
    BatchNormState st(5);
    Var y = batchnorm_forward(z, t.param(gamma), t.param(beta), BnMode::train, st);
    return sum(mul_const(y, c));
  });
  check([&](Tape& t) {
    Var z = matmul(t.param(a), t.param(b));
    return sum(mul_const(softmax(relu(z)), c));
  });
  check([&](Tape& t) {
    Var z = add(matmul(t.param(a), t.param(b)), t.constant(c));
    return sum(pick(select_rows(log_softmax(z), rows), cols));
  });
  check([&](Tape& t) {
    Var z = matmul(t.param(a), t.param(b));
    return sum(scale(exp(scale(z, 0.3)), -0.7));
  });
  check([&](Tape& t) {
    Var z = matmul(t.param(a), t.param(b));
    BatchNormState st(5);
    st.running_mean = RowVector::Constant(5, 0.2);
    st.running_var = RowVector::Constant(5, 1.7);
    return sum(mul_const(batchnorm_forward(z, t.param(gamma), t.param(beta), BnMode::eval, st), c));
  });
}

TEST_CASE("detach blocks gradient") {
  Tape t;
  Var x = t.input(Matrix::Ones(2, 2));
  t.backward(sum(mul(detach(x), t.constant(Matrix::Constant(2, 2, 3.0)))));
  CHECK(x.grad().isZero(0.0));
}

TEST_CASE("backward twice doubles parameter gradients exactly") {
  Rng rng(8);
  Parameter w("w", random_matrix(3, 4, rng), LrGroup::head);
  const Matrix x = random_matrix(5, 3, rng);
  Tape t;
  Var loss = sum(log_softmax(matmul(t.constant(x), t.param(w))));
  t.backward(loss);
  const Matrix once = w.grad;
  t.backward(loss);
  CHECK(sfda::testing::same_bits(w.grad, Matrix(2.0 * once)));
  w.zero_grad();
  CHECK(w.grad.isZero(0.0));
}

TEST_CASE("frozen parameters enter the tape as constants") {
  Parameter w("w", Matrix::Ones(2, 2), LrGroup::head);
  w.frozen = true;
  Tape t;
  t.backward(sum(t.param(w)));
  CHECK(w.grad.isZero(0.0));
}

TEST_CASE("finite-difference checks of the toy-model losses") {
  const Architecture arch{.input_dim = 3, .hidden = {6}, .feature_dim = 8, .num_classes = 3};
  Model model = sfda::testing::toy_model(arch, 4);
  Rng rng(9);
  const Matrix x = random_matrix(4, 3, rng);
  const std::vector<int> y{0, 2, 1, 2};
  const auto params = model.parameters();

  SUBCASE("smoothed cross-entropy") {
    const GradCheckReport r = gradient_check([&](Tape& t) {
      return smoothed_ce(model.forward(t, x, BnMode::train, false).logits, y, 0.1);
    }, params);
    CHECK_MESSAGE(r.max_rel_error <= 1e-5, r.worst_entry);
  }
  SUBCASE("known CE plus entropy maximization") {
    const std::vector<Index> known{0, 1}, unknown{2, 3};
    const std::vector<int> pseudo{1, 0};
    const GradCheckReport r = gradient_check([&](Tape& t) {
      Var z = model.forward(t, x, BnMode::train, false).logits;
      return add(pseudo_ce(select_rows(z, known), pseudo), scale(entropy_max_loss(select_rows(z, unknown)), 0.3));
    }, params);
    CHECK_MESSAGE(r.max_rel_error <= 1e-5, r.worst_entry);
  }
}
