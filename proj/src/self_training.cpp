#include "sfda/self_training.hpp"

#include <cmath>
#include <map>

#include "sfda/schedule.hpp"
#include "sfda/source_trainer.hpp"

namespace sfda {

std::vector<std::string> AdaptConfig::validate() const {
  std::vector<std::string> e;
  if (epochs < 1) e.emplace_back("epochs must be >= 1");
  if (batch_size < 2) e.emplace_back("batch_size must be >= 2 (batch norm)");
  if (!(lr_trunk > 0.0)) e.emplace_back("lr_trunk must be > 0");
  if (!(lr_head > 0.0)) e.emplace_back("lr_head must be > 0");
  if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0)) e.emplace_back("momentum must be in [0, 1)");
  if (!(sgd.weight_decay >= 0.0)) e.emplace_back("weight_decay must be >= 0");
  return e;
}

Json AdaptConfig::to_json() const {
  return Json{{"epochs", epochs},
              {"batch_size", batch_size},
              {"lr_trunk", lr_trunk},
              {"lr_head", lr_head},
              {"lr_power", lr_power},
              {"momentum", sgd.momentum},
              {"weight_decay", sgd.weight_decay},
              {"bn_update_during_adapt", bn_update_during_adapt},
              {"seed", seed}};
}

AdaptResult self_train(const Model& source, const UnlabeledDataset& target, const AdaptConfig& cfg,
                       const std::string& stage, const BatchLossFn& batch_loss,
                       const EpochReportFn& report) {
  if (auto errors = cfg.validate(); !errors.empty()) {
    std::string msg = "invalid adaptation config:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ContractError(msg);
  }
  if (target.size() < 2) throw ContractError(stage + ": target set needs at least 2 samples");

  AdaptResult result;
  result.model = source;
  Model& model = result.model;
  model.freeze_classifier();
  Sgd opt(model.feature_parameters(), cfg.sgd);
  Rng rng(Rng::derive(cfg.seed, stream::kAdaptBatches));

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::size_t per_epoch = (target.size() + bs - 1) / bs;
  if (per_epoch >= 2 && target.size() % bs == 1) --per_epoch;
  const auto total = static_cast<std::int64_t>(per_epoch) * cfg.epochs;

  result.record.seed = cfg.seed;
  result.record.config = cfg.to_json();

  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::pair<std::string, Scalar>> sums;
    std::int64_t active = 0;
    Scalar lr_trunk = 0.0, lr_head = 0.0;
    for (const IndexBatch& batch : shuffled_batches(target.size(), bs, rng)) {
      if (cfg.assert_closed_set && !target.private_flags.empty()) {
        for (std::size_t i : batch) {
          if (target.private_flags[i]) {
            throw ContractError(stage + ": private sample " + std::to_string(i) +
                                " reached a closed-set training loss");
          }
        }
      }
      const Scalar progress = static_cast<Scalar>(step) / static_cast<Scalar>(total);
      lr_trunk = lr_at(cfg.lr_trunk, progress, cfg.lr_power);
      lr_head = lr_at(cfg.lr_head, progress, cfg.lr_power);

      Tape tape;
      const ForwardResult fr =
          model.forward(tape, gather_rows(target.features, batch), BnMode::train, cfg.bn_update_during_adapt);
      const BatchLoss loss = batch_loss(tape, fr, StepContext{step, total, epoch, batch});

      if (sums.empty()) {
        for (const auto& [name, v] : loss.terms) sums.emplace_back(name, 0.0);
      }
      for (std::size_t t = 0; t < loss.terms.size() && t < sums.size(); ++t) sums[t].second += loss.terms[t].second;

      if (loss.active) {
        const Scalar value = loss.total.item();
        if (!std::isfinite(value)) {
          throw DivergenceError(stage + " diverged at step " + std::to_string(step) + ": loss = " +
                                std::to_string(value));
        }
        opt.zero_grad();
        tape.backward(loss.total);
        opt.step(lr_trunk, lr_head);
        ++active;
        ++result.steps_taken;
      } else {
        ++result.steps_skipped;
      }
      ++step;
    }

    Json row{{"stage", stage}, {"epoch", epoch}};
    const auto n = static_cast<Scalar>(per_epoch);
    for (const auto& [name, v] : sums) row[name] = v / n;
    row["lr_trunk"] = lr_trunk;
    row["lr_head"] = lr_head;
    row["active_steps"] = active;
    if (report) {
      const Json extra = report(model, epoch);
      for (const auto& item : extra.items()) row[item.key()] = item.value();
    }
    result.record.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace sfda
