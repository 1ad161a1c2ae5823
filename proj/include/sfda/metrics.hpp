#pragma once

#include <map>
#include <span>

#include "sfda/data.hpp"
#include "sfda/model.hpp"

namespace sfda {

/// Harmonic mean of known and unknown accuracy; 0 when both are 0.
Scalar h_score(Scalar known_acc, Scalar unknown_acc);

/// Fraction of rows whose label ranks within the top k logits. Ties rank the
/// lower class index first.
Scalar topk_accuracy(const Matrix& logits, std::span<const int> labels, int k);

/// Test-time open-set rule: "unknown" when normalized prediction entropy is
/// at least `entropy_threshold`, otherwise the argmax class.
struct UnknownRule {
  Scalar entropy_threshold = 0.5;
};

inline constexpr int kUnknown = -1;

/// Predicted class per row or kUnknown.
std::vector<int> predict_open_set(const Matrix& logits, const UnknownRule& rule);

struct EvalOutcome {
  Scalar known_acc = 0.0;
  Scalar unknown_acc = 0.0;
  Scalar h_score = 0.0;
  std::map<int, Scalar> topk_acc;
  std::size_t n_known = 0;
  std::size_t n_unknown = 0;
  /// Set when the known or unknown subset is empty; h_score is then 0.
  bool degenerate = false;
};

/// Known accuracy over non-private rows (correct class and not flagged
/// unknown), one-sided unknown accuracy over private rows, and their H-score.
EvalOutcome evaluate_open_set(const Matrix& logits, const LabeledDataset& eval, const UnknownRule& rule);
EvalOutcome evaluate_unida(const Model& model, const LabeledDataset& eval, const UnknownRule& rule = {});

/// Closed-set top-1/top-3 (k clipped to K) over non-private rows.
EvalOutcome evaluate_closed_set(const Model& model, const LabeledDataset& eval);

}  // namespace sfda
