#pragma once

// Target-adaptation strategies. Each starts from a source model, freezes the
// classifier and trains the feature extractor on unlabeled target data.

#include <optional>

#include "sfda/metrics.hpp"
#include "sfda/schedule.hpp"
#include "sfda/self_training.hpp"

namespace sfda {

// ---------------------------------------------------------------------------
// Universal DA: entropy partition into known / unknown / ambiguous.

struct Partition {
  std::vector<Index> known;
  std::vector<Index> unknown;
  std::vector<Index> ambiguous;
};

/// Normalized entropy <= tau_low is known, >= tau_high is unknown, the band
/// in between is ambiguous. A row meeting both tests (only possible when the
/// thresholds coincide) is known.
Partition partition_batch(const Matrix& logits, const ThresholdSchedule& sched);

struct UnidaConfig {
  AdaptConfig base{.epochs = 5};
  /// Weight of the entropy-maximization term on unknowns.
  Scalar alpha = 0.3;
  UnknownRule eval_rule;

  std::vector<std::string> validate() const;
};

struct UnidaLoss {
  BatchLoss loss;
  Partition partition;
  std::vector<int> pseudo;  // argmax of the given logits, all rows
};

/// L_k + alpha * L_u on one batch of logits. Pseudo labels are the argmax of
/// `logits` itself; empty subsets contribute no term.
UnidaLoss unida_batch_loss(const Var& logits, const ThresholdSchedule& sched, Scalar alpha);

struct UnidaHooks {
  std::function<void(const StepContext&, const UnidaLoss&, const Matrix& logits)> on_step;
};

AdaptResult adapt_unida(const Model& source, const UnlabeledDataset& target, const UnidaConfig& cfg,
                        const LabeledDataset* eval = nullptr, const UnidaHooks& hooks = {});

// ---------------------------------------------------------------------------
// Closed-set, double pseudo labels fixed from the source model.

struct DoublePseudoLabels {
  std::vector<int> first;
  std::vector<int> second;
};

/// Top-1 and top-2 classes of each probability row, lowest index first on ties.
DoublePseudoLabels top2_labels(const Matrix& probs);
/// Top-2 of the source model's eval-mode softmax. Throws for K < 2.
DoublePseudoLabels double_pseudo(const Model& source, const Matrix& features);

struct PlacesConfig {
  AdaptConfig base{.epochs = 1};
  Scalar beta = 0.3;
  Scalar gamma = 0.1;

  std::vector<std::string> validate() const;
};

struct PlacesResult {
  AdaptResult adapt;
  DoublePseudoLabels labels;
};

PlacesResult adapt_places(const Model& source, const UnlabeledDataset& target, const PlacesConfig& cfg,
                          const LabeledDataset* eval = nullptr);

/// Self-training with a fixed label vector and loss weight * pseudo_ce.
AdaptResult adapt_fixed_labels(const Model& source, const UnlabeledDataset& target, const AdaptConfig& cfg,
                               const std::string& stage, const std::vector<int>& labels, Scalar weight,
                               const LabeledDataset* eval = nullptr);

// ---------------------------------------------------------------------------
// Closed-set, centroid / cosine pseudo labels.

struct Centroids {
  Matrix c;                  // K x d
  std::vector<bool> valid;   // false when the class carries (almost) no mass
};

/// Soft-weighted class means: c_k = sum_i w_ik f_i / sum_i w_ik. Rows with
/// total weight below 1e-12 are invalid.
Centroids weighted_centroids(const Matrix& features, const Matrix& weights);
/// Centroids from the source model's eval-mode features and softmax.
Centroids compute_centroids(const Model& source, const Matrix& inputs);

/// Argmax over valid centroids of cosine similarity; lowest index on ties.
/// Throws ContractError for a zero-norm feature or centroid.
std::vector<int> cosine_pseudo_labels(const Matrix& features, const Centroids& centroids);

struct ImnetConfig {
  AdaptConfig base{.epochs = 1};
  Scalar eta = 0.3;
  /// Extra rounds recompute centroids from one-hot labels of the previous round.
  int centroid_rounds = 1;

  std::vector<std::string> validate() const;
};

struct ImnetResult {
  AdaptResult adapt;
  std::vector<int> labels;
  Centroids centroids;
};

/// Pseudo labels for `inputs` from the source model and `rounds` passes.
std::pair<std::vector<int>, Centroids> centroid_pseudo_labels(const Model& source, const Matrix& inputs,
                                                              int rounds);

ImnetResult adapt_imnet(const Model& source, const UnlabeledDataset& target, const ImnetConfig& cfg,
                        const LabeledDataset* eval = nullptr);

}  // namespace sfda
