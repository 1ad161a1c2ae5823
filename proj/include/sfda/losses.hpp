#pragma once

// Scalar objectives over logits. Every loss reduces over the batch with an
// arithmetic mean and returns a 1x1 node on the logits' tape.

#include <span>

#include "sfda/diffcore.hpp"

namespace sfda {

/// (1 - alpha) * onehot(label) + alpha / K.
RowVector smoothed_label(int label, Index num_classes, Scalar alpha);

/// Mean over rows of -sum_k q_ls[k] * log softmax(logits)[k].
Var smoothed_ce(const Var& logits, std::span<const int> labels, Scalar alpha);

/// Mean over rows of -sum_k softmax(ema)[k] * log softmax(live)[k]. The EMA
/// side is treated as a constant.
Var ema_consistency_ce(const Var& logits_live, const Var& logits_ema);

/// Mean over rows of -log softmax(logits)[pseudo[i]].
Var pseudo_ce(const Var& logits, std::span<const int> pseudo);

/// Negative mean (unnormalized) prediction entropy. Minimizing it pushes
/// rows toward uniform; the minimum is -ln K.
Var entropy_max_loss(const Var& logits);

/// beta * pseudo_ce(y1) + gamma * pseudo_ce(y2). A zero weight drops its term.
/// Throws ContractError if y1[i] == y2[i] for some row.
Var double_pseudo_ce(const Var& logits, std::span<const int> y1, std::span<const int> y2,
                     Scalar beta, Scalar gamma);

/// -sum p log p with 0 log 0 = 0; divided by ln K when `normalized`.
Scalar entropy(std::span<const Scalar> probs, bool normalized);

/// Per-row normalized entropy of softmax(logits).
std::vector<Scalar> normalized_entropy_rows(const Matrix& logits);

/// Per-row argmax with lowest-index tie-break.
std::vector<int> argmax_rows(const Matrix& m);

}  // namespace sfda
