#include <cmath>

#include "sfda/adapt.hpp"
#include "sfda/losses.hpp"

namespace sfda {

Partition partition_batch(const Matrix& logits, const ThresholdSchedule& sched) {
  const std::vector<Scalar> h = normalized_entropy_rows(logits);
  Partition p;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto row = static_cast<Index>(i);
    if (h[i] <= sched.tau_low) {
      p.known.push_back(row);
    } else if (h[i] >= sched.tau_high) {
      p.unknown.push_back(row);
    } else {
      p.ambiguous.push_back(row);
    }
  }
  return p;
}

std::vector<std::string> UnidaConfig::validate() const {
  std::vector<std::string> e = base.validate();
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) e.emplace_back("alpha must be finite and >= 0");
  return e;
}

UnidaLoss unida_batch_loss(const Var& logits, const ThresholdSchedule& sched, Scalar alpha) {
  UnidaLoss out;
  out.partition = partition_batch(logits.value(), sched);
  out.pseudo = argmax_rows(logits.value());

  Scalar lk = 0.0, lu = 0.0;
  if (!out.partition.known.empty()) {
    std::vector<int> labels;
    labels.reserve(out.partition.known.size());
    for (Index r : out.partition.known) labels.push_back(out.pseudo[static_cast<std::size_t>(r)]);
    Var term = pseudo_ce(select_rows(logits, out.partition.known), labels);
    lk = term.item();
    out.loss.total = term;
    out.loss.active = true;
  }
  if (!out.partition.unknown.empty()) {
    Var term = entropy_max_loss(select_rows(logits, out.partition.unknown));
    lu = term.item();
    Var weighted = scale(term, alpha);
    out.loss.total = out.loss.active ? add(out.loss.total, weighted) : weighted;
    out.loss.active = true;
  }
  out.loss.terms = {{"loss_known", lk},
                    {"loss_unknown", lu},
                    {"loss_total", out.loss.active ? out.loss.total.item() : 0.0},
                    {"n_known", static_cast<Scalar>(out.partition.known.size())},
                    {"n_unknown", static_cast<Scalar>(out.partition.unknown.size())},
                    {"n_ambiguous", static_cast<Scalar>(out.partition.ambiguous.size())}};
  return out;
}

AdaptResult adapt_unida(const Model& source, const UnlabeledDataset& target, const UnidaConfig& cfg,
                        const LabeledDataset* eval, const UnidaHooks& hooks) {
  if (auto errors = cfg.validate(); !errors.empty()) {
    std::string msg = "invalid unida config:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ContractError(msg);
  }
  Scalar last_tau_high = 0.5, last_tau_low = 0.5;
  auto loss_fn = [&](Tape&, const ForwardResult& fr, const StepContext& ctx) {
    const ThresholdSchedule sched = thresholds_at(ctx.step, ctx.total_steps);
    last_tau_high = sched.tau_high;
    last_tau_low = sched.tau_low;
    UnidaLoss l = unida_batch_loss(fr.logits, sched, cfg.alpha);
    if (hooks.on_step) hooks.on_step(ctx, l, fr.logits.value());
    return l.loss;
  };
  auto report = [&](const Model& m, int) {
    Json j{{"alpha", cfg.alpha}, {"tau_high", last_tau_high}, {"tau_low", last_tau_low}};
    if (eval) {
      const EvalOutcome o = evaluate_unida(m, *eval, cfg.eval_rule);
      j["known_acc"] = o.known_acc;
      j["unknown_acc"] = o.unknown_acc;
      j["h_score"] = o.h_score;
      j["h_score_degenerate"] = o.degenerate;
    }
    return j;
  };
  AdaptResult r = self_train(source, target, cfg.base, "adapt_unida", loss_fn, report);
  Json c = cfg.base.to_json();
  c["alpha"] = cfg.alpha;
  c["unknown_entropy_threshold"] = cfg.eval_rule.entropy_threshold;
  r.record.config = c;
  return r;
}

}  // namespace sfda
