#include "sfda/source_trainer.hpp"

#include <cmath>
#include <optional>

#include "sfda/losses.hpp"
#include "sfda/metrics.hpp"
#include "sfda/schedule.hpp"

namespace sfda {

std::vector<std::string> SourceConfig::validate() const {
  std::vector<std::string> e;
  if (epochs < 1) e.emplace_back("source.epochs must be >= 1");
  if (batch_size < 2) e.emplace_back("source.batch_size must be >= 2 (batch norm)");
  if (!(lr_trunk > 0.0)) e.emplace_back("source.lr_trunk must be > 0");
  if (!(lr_head > 0.0)) e.emplace_back("source.lr_head must be > 0");
  if (!(alpha_smooth >= 0.0 && alpha_smooth <= 1.0)) e.emplace_back("source.alpha_smooth must be in [0, 1]");
  if (!(ema_coeff >= 0.0 && ema_coeff <= 1.0)) e.emplace_back("source.ema_coeff must be in [0, 1]");
  if (!(lambda_switch_fraction >= 0.0 && lambda_switch_fraction <= 1.0)) {
    e.emplace_back("source.lambda_switch_fraction must be in [0, 1]");
  }
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) e.emplace_back("source.holdout_fraction must be in [0, 1)");
  if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0)) e.emplace_back("source.momentum must be in [0, 1)");
  if (!(sgd.weight_decay >= 0.0)) e.emplace_back("source.weight_decay must be >= 0");
  return e;
}

Json SourceConfig::to_json() const {
  return Json{{"epochs", epochs},
              {"batch_size", batch_size},
              {"lr_trunk", lr_trunk},
              {"lr_head", lr_head},
              {"lr_power", lr_power},
              {"alpha_smooth", alpha_smooth},
              {"ema_coeff", ema_coeff},
              {"lambda_switch_fraction", lambda_switch_fraction},
              {"holdout_fraction", holdout_fraction},
              {"momentum", sgd.momentum},
              {"weight_decay", sgd.weight_decay},
              {"seed", seed}};
}

HoldoutSplit split_holdout(std::size_t n, Scalar fraction, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, stream::kSplit));
  const std::vector<std::size_t> perm = rng.permutation(n);
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<Scalar>(n) * fraction));
  HoldoutSplit s;
  s.validation.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  return s;
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(static_cast<Index>(rows[r]));
  return out;
}

namespace {

Scalar top1(const Model& model, const LabeledDataset& data) {
  if (data.size() == 0) return 0.0;
  return topk_accuracy(model.predict(data.features).logits, data.labels, 1);
}

}  // namespace

SourceResult train_source(const LabeledDataset& data, const Architecture& arch, const SourceConfig& cfg,
                          const SourceHooks& hooks) {
  if (auto errors = cfg.validate(); !errors.empty()) {
    std::string msg = "invalid source config:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ContractError(msg);
  }
  if (data.size() == 0) throw ContractError("train_source: empty dataset");
  if (arch.num_classes != data.num_classes) {
    throw ContractError("train_source: architecture has " + std::to_string(arch.num_classes) +
                        " classes, dataset has " + std::to_string(data.num_classes));
  }
  for (int y : data.labels) {
    if (y < 0 || y >= data.num_classes) throw ContractError("train_source: label out of range");
  }

  const HoldoutSplit split = split_holdout(data.size(), cfg.holdout_fraction, cfg.seed);
  const LabeledDataset train = data.subset(split.train);
  const LabeledDataset val = data.subset(split.validation);

  Model model(arch, cfg.seed);
  Sgd opt(model.parameters(), cfg.sgd);
  WeightedBatchSampler sampler(train.labels, class_weights(train.labels, train.num_classes),
                               static_cast<std::size_t>(cfg.batch_size),
                               Rng::derive(cfg.seed, stream::kSourceBatches));
  const auto per_epoch = static_cast<std::int64_t>(sampler.batches_per_epoch());
  const std::int64_t total = per_epoch * cfg.epochs;

  SourceResult result;
  result.record.seed = cfg.seed;
  result.record.config = cfg.to_json();
  result.steps.reserve(static_cast<std::size_t>(total));

  std::optional<EmaModel> ema;
  bool have_best = false;
  std::int64_t iter = 0;
  const Matrix no_logits;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Scalar sum_ce = 0.0, sum_ema = 0.0, sum_total = 0.0;
    SourceStep step;
    for (std::int64_t b = 0; b < per_epoch; ++b, ++iter) {
      const IndexBatch batch = sampler.next_batch();
      const Matrix xb = gather_rows(train.features, batch);
      Labels yb(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) yb[i] = train.labels[batch[i]];

      const Scalar progress = static_cast<Scalar>(iter) / static_cast<Scalar>(total);
      step = SourceStep{};
      step.iter = iter;
      step.lr_trunk = lr_at(cfg.lr_trunk, progress, cfg.lr_power);
      step.lr_head = lr_at(cfg.lr_head, progress, cfg.lr_power);
      step.lambda = lambda_ema(iter, total, cfg.lambda_switch_fraction);
      step.ema_available = ema.has_value();

      Tape tape;
      const ForwardResult fr = model.forward(tape, xb, BnMode::train);
      Var loss = smoothed_ce(fr.logits, yb, cfg.alpha_smooth);
      step.loss_ce = loss.item();

      Matrix ema_logits;
      if (ema) {
        ema_logits = ema->shadow.predict(xb).logits;
        if (step.lambda != 0.0) {
          Var ema_term = ema_consistency_ce(fr.logits, tape.constant(ema_logits));
          step.loss_ema = ema_term.item();
          loss = add(loss, scale(ema_term, step.lambda));
        } else {
          // Logged only; kept off the training tape.
          Tape side;
          step.loss_ema =
              ema_consistency_ce(side.constant(fr.logits.value()), side.constant(ema_logits)).item();
        }
      }
      step.loss_total = loss.item();
      if (!std::isfinite(step.loss_total)) {
        throw DivergenceError("source training diverged at iteration " + std::to_string(iter) +
                              " (epoch " + std::to_string(epoch) + "): loss = " +
                              std::to_string(step.loss_total));
      }
      if (hooks.on_step) hooks.on_step(SourceStepView{step, batch, fr.logits.value(), ema ? ema_logits : no_logits});

      opt.zero_grad();
      tape.backward(loss);
      opt.step(step.lr_trunk, step.lr_head);

      sum_ce += step.loss_ce;
      sum_ema += step.loss_ema;
      sum_total += step.loss_total;
      result.steps.push_back(step);
    }

    if (!ema) {
      ema.emplace(model, cfg.ema_coeff);
    } else {
      ema_update(*ema, model);
    }

    const Scalar train_acc = top1(model, train);
    const Scalar val_acc = val.size() ? top1(model, val) : train_acc;
    if (!have_best || val_acc > result.best_val_acc) {
      result.best = model;
      result.best_val_acc = val_acc;
      result.best_epoch = epoch;
      have_best = true;
    }
    result.last_val_acc = val_acc;

    const auto n = static_cast<Scalar>(per_epoch);
    result.record.rows.push_back(Json{{"stage", "source"},
                                      {"epoch", epoch},
                                      {"loss_ce", sum_ce / n},
                                      {"loss_ema", sum_ema / n},
                                      {"loss_total", sum_total / n},
                                      {"lambda_ema", step.lambda},
                                      {"lr_trunk", step.lr_trunk},
                                      {"lr_head", step.lr_head},
                                      {"train_acc", train_acc},
                                      {"val_acc", val_acc}});
  }
  result.last = model;
  return result;
}

}  // namespace sfda
