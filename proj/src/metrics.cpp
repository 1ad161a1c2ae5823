#include "sfda/metrics.hpp"

#include <algorithm>

#include "sfda/losses.hpp"

namespace sfda {

Scalar h_score(Scalar known_acc, Scalar unknown_acc) {
  if (!(known_acc >= 0.0 && known_acc <= 1.0 && unknown_acc >= 0.0 && unknown_acc <= 1.0)) {
    throw ContractError("h_score: accuracies must lie in [0, 1]");
  }
  const Scalar s = known_acc + unknown_acc;
  return s > 0.0 ? 2.0 * known_acc * unknown_acc / s : 0.0;
}

Scalar topk_accuracy(const Matrix& logits, std::span<const int> labels, int k) {
  if (k < 1 || k > logits.cols()) throw ContractError("topk_accuracy: k outside [1, K]");
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw DimensionError("topk_accuracy: label count does not match rows");
  }
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) continue;
    const Scalar zy = logits(i, y);
    int rank = 0;
    for (Index j = 0; j < logits.cols(); ++j) {
      if (logits(i, j) > zy || (logits(i, j) == zy && j < y)) ++rank;
    }
    if (rank < k) ++hits;
  }
  return static_cast<Scalar>(hits) / static_cast<Scalar>(labels.size());
}

std::vector<int> predict_open_set(const Matrix& logits, const UnknownRule& rule) {
  std::vector<int> pred = argmax_rows(logits);
  const std::vector<Scalar> h = normalized_entropy_rows(logits);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (h[i] >= rule.entropy_threshold) pred[i] = kUnknown;
  }
  return pred;
}

EvalOutcome evaluate_open_set(const Matrix& logits, const LabeledDataset& eval, const UnknownRule& rule) {
  const std::vector<int> pred = predict_open_set(logits, rule);
  EvalOutcome out;
  std::size_t known_hits = 0, unknown_hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool priv = !eval.is_private.empty() && eval.is_private[i];
    if (priv) {
      ++out.n_unknown;
      if (pred[i] == kUnknown) ++unknown_hits;
    } else {
      ++out.n_known;
      if (pred[i] == eval.labels[i]) ++known_hits;
    }
  }
  out.degenerate = out.n_known == 0 || out.n_unknown == 0;
  if (out.n_known) out.known_acc = static_cast<Scalar>(known_hits) / static_cast<Scalar>(out.n_known);
  if (out.n_unknown) out.unknown_acc = static_cast<Scalar>(unknown_hits) / static_cast<Scalar>(out.n_unknown);
  out.h_score = out.degenerate ? 0.0 : h_score(out.known_acc, out.unknown_acc);
  return out;
}

EvalOutcome evaluate_unida(const Model& model, const LabeledDataset& eval, const UnknownRule& rule) {
  return evaluate_open_set(model.predict(eval.features).logits, eval, rule);
}

EvalOutcome evaluate_closed_set(const Model& model, const LabeledDataset& eval) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    if (eval.is_private.empty() || !eval.is_private[i]) rows.push_back(i);
  }
  const LabeledDataset known = eval.subset(rows);
  const Matrix logits = model.predict(known.features).logits;
  EvalOutcome out;
  out.n_known = known.size();
  const int K = static_cast<int>(logits.cols());
  for (int k : {1, 3}) out.topk_acc[k] = topk_accuracy(logits, known.labels, std::min(k, K));
  out.known_acc = out.topk_acc[1];
  return out;
}

}  // namespace sfda
