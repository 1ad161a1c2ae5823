#include "sfda/losses.hpp"

#include <cmath>

namespace sfda {

namespace {

void check_labels(std::span<const int> labels, const Matrix& logits, const char* what) {
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(logits.rows()) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= logits.cols()) {
      throw ContractError(std::string(what) + ": label " + std::to_string(y) +
                          " outside [0, " + std::to_string(logits.cols()) + ")");
    }
  }
}

Scalar inv_rows(const Matrix& m) {
  if (m.rows() < 1) throw DimensionError("loss over an empty batch");
  return 1.0 / static_cast<Scalar>(m.rows());
}

}  // namespace

RowVector smoothed_label(int label, Index num_classes, Scalar alpha) {
  RowVector q = RowVector::Constant(num_classes, alpha / static_cast<Scalar>(num_classes));
  q(label) += 1.0 - alpha;
  return q;
}

Var smoothed_ce(const Var& logits, std::span<const int> labels, Scalar alpha) {
  const Matrix& z = logits.value();
  check_labels(labels, z, "smoothed_ce");
  Matrix target(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    target.row(i) = smoothed_label(labels[static_cast<std::size_t>(i)], z.cols(), alpha);
  }
  return scale(sum(mul_const(log_softmax(logits), target)), -inv_rows(z));
}

Var ema_consistency_ce(const Var& logits_live, const Var& logits_ema) {
  if (logits_live.rows() != logits_ema.rows() || logits_live.cols() != logits_ema.cols()) {
    throw DimensionError("ema_consistency_ce: shape mismatch " + shape_str(logits_live.value()) +
                         " vs " + shape_str(logits_ema.value()));
  }
  const Matrix target = softmax_rows(logits_ema.value());
  return scale(sum(mul_const(log_softmax(logits_live), target)), -inv_rows(target));
}

Var pseudo_ce(const Var& logits, std::span<const int> pseudo) {
  check_labels(pseudo, logits.value(), "pseudo_ce");
  return scale(sum(pick(log_softmax(logits), pseudo)), -inv_rows(logits.value()));
}

Var entropy_max_loss(const Var& logits) {
  const Scalar inv = inv_rows(logits.value());
  Var lp = log_softmax(logits);
  return scale(sum(mul(exp(lp), lp)), inv);
}

Var double_pseudo_ce(const Var& logits, std::span<const int> y1, std::span<const int> y2,
                     Scalar beta, Scalar gamma) {
  if (y1.size() != y2.size()) throw DimensionError("double_pseudo_ce: label vectors differ in length");
  for (std::size_t i = 0; i < y1.size(); ++i) {
    if (y1[i] == y2[i]) {
      throw ContractError("double_pseudo_ce: row " + std::to_string(i) +
                          " has identical first and second pseudo labels");
    }
  }
  if (gamma == 0.0) return scale(pseudo_ce(logits, y1), beta);
  if (beta == 0.0) return scale(pseudo_ce(logits, y2), gamma);
  return add(scale(pseudo_ce(logits, y1), beta), scale(pseudo_ce(logits, y2), gamma));
}

Scalar entropy(std::span<const Scalar> probs, bool normalized) {
  Scalar h = 0.0;
  for (Scalar p : probs) {
    if (p < 0.0) throw ContractError("entropy: negative probability");
    if (p > 0.0) h -= p * std::log(p);
  }
  if (normalized) {
    if (probs.size() < 2) return 0.0;
    h /= std::log(static_cast<Scalar>(probs.size()));
  }
  return h;
}

std::vector<Scalar> normalized_entropy_rows(const Matrix& logits) {
  const Matrix p = softmax_rows(logits);
  std::vector<Scalar> out(static_cast<std::size_t>(p.rows()));
  for (Index i = 0; i < p.rows(); ++i) {
    out[static_cast<std::size_t>(i)] =
        entropy(std::span<const Scalar>(p.row(i).data(), static_cast<std::size_t>(p.cols())), true);
  }
  return out;
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < m.cols(); ++k) {
      if (m(i, k) > m(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace sfda
