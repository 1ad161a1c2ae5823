#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfda/data.hpp"
#include "sfda/model.hpp"
#include "sfda/optimizer.hpp"
#include "sfda/run_record.hpp"
#include "sfda/sampler.hpp"

namespace sfda {

struct SourceConfig {
  int epochs = 10;
  int batch_size = 64;
  Scalar lr_trunk = 1e-3;
  Scalar lr_head = 1e-2;
  Scalar lr_power = 1.0;
  Scalar alpha_smooth = 0.1;
  Scalar ema_coeff = 0.95;
  Scalar lambda_switch_fraction = 0.4;
  /// Share of the source set held out to pick the best checkpoint.
  Scalar holdout_fraction = 0.1;
  SgdConfig sgd;
  std::uint64_t seed = 0;

  std::vector<std::string> validate() const;
  Json to_json() const;
};

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded random split; validation takes floor(n * fraction) rows.
HoldoutSplit split_holdout(std::size_t n, Scalar fraction, std::uint64_t seed);

/// Per-iteration record of the source objective.
struct SourceStep {
  std::int64_t iter = 0;
  Scalar lr_trunk = 0.0;
  Scalar lr_head = 0.0;
  Scalar lambda = 0.0;
  Scalar loss_ce = 0.0;
  /// 0 while the EMA model does not exist yet.
  Scalar loss_ema = 0.0;
  Scalar loss_total = 0.0;
  bool ema_available = false;
};

struct SourceStepView {
  const SourceStep& step;
  const IndexBatch& batch;
  const Matrix& logits;
  /// Empty when no EMA model exists yet.
  const Matrix& ema_logits;
};

struct SourceHooks {
  std::function<void(const SourceStepView&)> on_step;
};

struct SourceResult {
  Model last;
  Model best;
  int best_epoch = 0;
  Scalar best_val_acc = 0.0;
  Scalar last_val_acc = 0.0;
  std::vector<SourceStep> steps;
  RunRecord record;
};

/// Stage-1 training: smoothed CE plus lambda_ema-gated EMA consistency,
/// class-balanced re-sampling, SGD with the polynomial LR decay applied per
/// parameter group. The EMA model is created from the live model at the end
/// of epoch 1 and updated at the end of every later epoch.
SourceResult train_source(const LabeledDataset& data, const Architecture& arch, const SourceConfig& cfg,
                          const SourceHooks& hooks = {});

/// Rows of `x` at `rows`.
Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows);

}  // namespace sfda
