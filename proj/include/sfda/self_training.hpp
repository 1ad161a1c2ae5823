#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sfda/data.hpp"
#include "sfda/model.hpp"
#include "sfda/optimizer.hpp"
#include "sfda/run_record.hpp"
#include "sfda/sampler.hpp"

namespace sfda {

/// Settings shared by every target-adaptation strategy.
struct AdaptConfig {
  int epochs = 1;
  int batch_size = 64;
  Scalar lr_trunk = 1e-3;
  Scalar lr_head = 1e-2;
  Scalar lr_power = 1.0;
  SgdConfig sgd;
  std::uint64_t seed = 0;
  /// Train-mode BN during adaptation always normalizes with batch statistics;
  /// this decides whether the running statistics follow them.
  bool bn_update_during_adapt = true;
  /// Instrumentation: throw if a batch contains a sample flagged private.
  bool assert_closed_set = false;

  std::vector<std::string> validate() const;
  Json to_json() const;
};

struct StepContext {
  std::int64_t step = 0;
  std::int64_t total_steps = 0;
  int epoch = 0;
  const IndexBatch& batch;
};

/// Loss for one batch. `total` is empty (default Var) when no term applies,
/// in which case the step is skipped. `terms` are logged as running means.
struct BatchLoss {
  Var total;
  bool active = false;
  std::vector<std::pair<std::string, Scalar>> terms;
};

using BatchLossFn = std::function<BatchLoss(Tape&, const ForwardResult&, const StepContext&)>;
/// Extra per-epoch columns (typically evaluation metrics of the current model).
using EpochReportFn = std::function<Json(const Model&, int epoch)>;

struct AdaptResult {
  Model model;
  RunRecord record;
  std::int64_t steps_taken = 0;
  std::int64_t steps_skipped = 0;
};

/// Shuffled mini-batch SGD on g with h frozen. The learning rate of each
/// group decays with global progress step / total_steps.
AdaptResult self_train(const Model& source, const UnlabeledDataset& target, const AdaptConfig& cfg,
                       const std::string& stage, const BatchLossFn& batch_loss,
                       const EpochReportFn& report = {});

}  // namespace sfda
