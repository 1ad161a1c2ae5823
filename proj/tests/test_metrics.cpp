#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "sfda/losses.hpp"
#include "sfda/metrics.hpp"
#include "test_util.hpp"

using namespace sfda;
using sfda::testing::random_labels;
using sfda::testing::random_matrix;

namespace {

/// Top-k by stable descending sort of the row.
Scalar topk_oracle(const Matrix& z, const std::vector<int>& y, int k) {
  std::size_t hits = 0;
  for (Index i = 0; i < z.rows(); ++i) {
    std::vector<int> order(static_cast<std::size_t>(z.cols()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return z(i, a) > z(i, b); });
    const auto end = order.begin() + k;
    hits += std::find(order.begin(), end, y[static_cast<std::size_t>(i)]) != end;
  }
  return static_cast<Scalar>(hits) / static_cast<Scalar>(z.rows());
}

/// Row with a confident prediction for `cls`, or a flat row when cls < 0.
RowVector confident(int cls, Index k) {
  RowVector r = RowVector::Zero(k);
  if (cls >= 0) r(cls) = 10.0;
  return r;
}

}  // namespace

TEST_CASE("h_score") {
  CHECK(h_score(1.0, 1.0) == 1.0);
  CHECK(h_score(0.0, 0.0) == 0.0);
  CHECK(h_score(1.0, 0.0) == 0.0);
  CHECK(h_score(0.5, 0.5) == 0.5);
  CHECK(h_score(0.8, 0.4) == doctest::Approx(0.64 / 1.2).epsilon(1e-15));
  CHECK_THROWS_AS(h_score(1.2, 0.5), ContractError);
  CHECK_THROWS_AS(h_score(0.5, -0.1), ContractError);

  Rng rng(41);
  for (int i = 0; i < 1000; ++i) {
    const Scalar a = rng.uniform(), b = rng.uniform();
    const Scalar h = h_score(a, b);
    CHECK(h >= std::min(a, b) - 1e-15);
    CHECK(h <= (a + b) / 2.0 + 1e-15);
    CHECK(h == h_score(b, a));
  }
}

TEST_CASE("topk_accuracy examples") {
  Matrix z(3, 4);
  z << 0.1, 0.5, 0.3, 0.2,
       1.0, 1.0, 0.0, 0.0,
       0.0, 0.0, 0.0, 0.0;
  const std::vector<int> y{2, 1, 3};
  CHECK(topk_accuracy(z, y, 1) == 0.0);
  CHECK(topk_accuracy(z, y, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(topk_accuracy(z, y, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(topk_accuracy(z, y, 4) == 1.0);
  CHECK_THROWS_AS(topk_accuracy(z, y, 0), ContractError);
  CHECK_THROWS_AS(topk_accuracy(z, y, 5), ContractError);
}

TEST_CASE("topk_accuracy agrees with a sort oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix z = random_matrix(64, 6, rng);
    if (trial % 2) z = (z * 2.0).array().round();  // plenty of ties
    const std::vector<int> y = random_labels(64, 6, rng);
    Scalar prev = 0.0;
    for (int k = 1; k <= 6; ++k) {
      const Scalar acc = topk_accuracy(z, y, k);
      CHECK(acc == topk_oracle(z, y, k));
      CHECK(acc >= prev);
      prev = acc;
    }
    CHECK(prev == 1.0);

    const std::vector<std::size_t> perm = rng.permutation(64);
    Matrix zp(64, 6);
    std::vector<int> yp(64);
    for (std::size_t i = 0; i < 64; ++i) {
      zp.row(static_cast<Index>(i)) = z.row(static_cast<Index>(perm[i]));
      yp[i] = y[perm[i]];
    }
    CHECK(topk_accuracy(zp, yp, 3) == topk_accuracy(z, y, 3));
  }
}

TEST_CASE("open-set evaluation on a hand-enumerated batch") {
  // Six known rows (labels 0 1 2 0 1 2) then four private rows.
  const int pred[] = {0, 1, 0, -1, 1, 2, -1, -1, 0, -1};
  LabeledDataset eval;
  eval.num_classes = 3;
  eval.labels = {0, 1, 2, 0, 1, 2, 3, 3, 4, 4};
  eval.is_private = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1};
  Matrix z(10, 3);
  for (Index i = 0; i < 10; ++i) z.row(i) = confident(pred[i], 3);

  const EvalOutcome o = evaluate_open_set(z, eval, UnknownRule{});
  CHECK(o.n_known == 6);
  CHECK(o.n_unknown == 4);
  CHECK(o.known_acc == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
  CHECK(o.unknown_acc == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(o.h_score == doctest::Approx(12.0 / 17.0).epsilon(1e-15));
  CHECK_FALSE(o.degenerate);
  CHECK(predict_open_set(z, UnknownRule{}) == std::vector<int>(std::begin(pred), std::end(pred)));
}

TEST_CASE("open-set evaluation agrees with an independent count") {
  Rng rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = random_matrix(64, 5, rng, 2.0);
    LabeledDataset eval;
    eval.num_classes = 5;
    for (int i = 0; i < 64; ++i) {
      const bool priv = rng.uniform() < 0.3;
      eval.is_private.push_back(priv ? 1 : 0);
      eval.labels.push_back(priv ? 5 : static_cast<int>(rng.uniform_int(5)));
    }
    const UnknownRule rule{.entropy_threshold = rng.uniform(0.3, 0.9)};
    const std::vector<int> am = argmax_rows(z);
    const std::vector<Scalar> h = normalized_entropy_rows(z);
    Scalar kh = 0, kn = 0, uh = 0, un = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      const bool flagged = h[i] >= rule.entropy_threshold;
      if (eval.is_private[i]) {
        un += 1;
        uh += flagged;
      } else {
        kn += 1;
        kh += !flagged && am[i] == eval.labels[i];
      }
    }
    const EvalOutcome o = evaluate_open_set(z, eval, rule);
    CHECK(o.known_acc == kh / kn);
    CHECK(o.unknown_acc == uh / un);
    const Scalar ka = kh / kn, ua = uh / un;
    CHECK(std::abs(o.h_score - (ka + ua > 0 ? 2 * ka * ua / (ka + ua) : 0.0)) <= 1e-15);
  }
}

TEST_CASE("without private rows the result is degenerate") {
  LabeledDataset eval;
  eval.num_classes = 3;
  eval.labels = {0, 1, 2};
  eval.is_private = {0, 0, 0};
  Matrix z(3, 3);
  for (Index i = 0; i < 3; ++i) z.row(i) = confident(static_cast<int>(i), 3);
  const EvalOutcome o = evaluate_open_set(z, eval, UnknownRule{});
  CHECK(o.degenerate);
  CHECK(o.known_acc == 1.0);
  CHECK(o.h_score == 0.0);
  CHECK(o.n_unknown == 0);
}

TEST_CASE("closed-set evaluation skips private rows") {
  const Model m(Architecture{.input_dim = 2, .hidden = {8}, .feature_dim = 4, .num_classes = 3}, 1);
  Rng rng(44);
  LabeledDataset eval;
  eval.num_classes = 3;
  eval.features = random_matrix(20, 2, rng);
  eval.labels = random_labels(20, 3, rng);
  eval.is_private.assign(20, 0);
  for (std::size_t i = 0; i < 20; i += 4) {
    eval.is_private[i] = 1;
    eval.labels[i] = 3;
  }
  const EvalOutcome o = evaluate_closed_set(m, eval);
  CHECK(o.n_known == 15);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < 20; ++i) {
    if (!eval.is_private[i]) rows.push_back(i);
  }
  const LabeledDataset known = eval.subset(rows);
  const Matrix z = m.predict(known.features).logits;
  CHECK(o.topk_acc.at(1) == topk_oracle(z, known.labels, 1));
  CHECK(o.topk_acc.at(3) == 1.0);
}
