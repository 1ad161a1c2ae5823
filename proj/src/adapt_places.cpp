#include <cmath>

#include "sfda/adapt.hpp"
#include "sfda/losses.hpp"

namespace sfda {

DoublePseudoLabels top2_labels(const Matrix& probs) {
  if (probs.cols() < 2) throw ContractError("double pseudo labels need K >= 2");
  DoublePseudoLabels out;
  out.first.reserve(static_cast<std::size_t>(probs.rows()));
  out.second.reserve(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < probs.cols(); ++k) {
      if (probs(i, k) > probs(i, best)) best = k;
    }
    Index second = best == 0 ? 1 : 0;
    for (Index k = 0; k < probs.cols(); ++k) {
      if (k != best && probs(i, k) > probs(i, second)) second = k;
    }
    out.first.push_back(static_cast<int>(best));
    out.second.push_back(static_cast<int>(second));
  }
  return out;
}

DoublePseudoLabels double_pseudo(const Model& source, const Matrix& features) {
  return top2_labels(softmax_rows(source.predict(features).logits));
}

std::vector<std::string> PlacesConfig::validate() const {
  std::vector<std::string> e = base.validate();
  if (!(beta >= 0.0) || !std::isfinite(beta)) e.emplace_back("beta must be finite and >= 0");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) e.emplace_back("gamma must be finite and >= 0");
  return e;
}

namespace {

Json closed_set_report(const Model& m, const LabeledDataset* eval) {
  Json j = Json::object();
  if (eval) {
    const EvalOutcome o = evaluate_closed_set(m, *eval);
    j["top1_acc"] = o.topk_acc.at(1);
    j["top3_acc"] = o.topk_acc.at(3);
  }
  return j;
}

std::vector<int> gather(const std::vector<int>& v, const IndexBatch& batch) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (std::size_t i : batch) out.push_back(v[i]);
  return out;
}

Scalar agreement(const std::vector<int>& pred, const LabeledDataset& eval) {
  std::size_t hits = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!eval.is_private.empty() && eval.is_private[i]) continue;
    ++n;
    if (pred[i] == eval.labels[i]) ++hits;
  }
  return n ? static_cast<Scalar>(hits) / static_cast<Scalar>(n) : 0.0;
}

}  // namespace

PlacesResult adapt_places(const Model& source, const UnlabeledDataset& target, const PlacesConfig& cfg,
                          const LabeledDataset* eval) {
  if (auto errors = cfg.validate(); !errors.empty()) {
    std::string msg = "invalid places config:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ContractError(msg);
  }
  PlacesResult out;
  out.labels = double_pseudo(source, target.features);
  const DoublePseudoLabels& labels = out.labels;

  auto loss_fn = [&](Tape&, const ForwardResult& fr, const StepContext& ctx) {
    const std::vector<int> y1 = gather(labels.first, ctx.batch);
    const std::vector<int> y2 = gather(labels.second, ctx.batch);
    BatchLoss l;
    l.total = double_pseudo_ce(fr.logits, y1, y2, cfg.beta, cfg.gamma);
    l.active = true;
    l.terms = {{"loss_total", l.total.item()}};
    return l;
  };
  auto report = [&](const Model& m, int) {
    Json j = closed_set_report(m, eval);
    j["beta"] = cfg.beta;
    j["gamma"] = cfg.gamma;
    return j;
  };
  out.adapt = self_train(source, target, cfg.base, "adapt_places", loss_fn, report);

  Json c = cfg.base.to_json();
  c["beta"] = cfg.beta;
  c["gamma"] = cfg.gamma;
  out.adapt.record.config = c;
  if (eval) {
    // Diagnostics: how often the source model's top-1 / top-2 match ground truth.
    const DoublePseudoLabels on_eval = double_pseudo(source, eval->features);
    Json diag{{"stage", "adapt_places_pseudo_labels"},
              {"top1_pseudo_acc", agreement(on_eval.first, *eval)},
              {"top2_pseudo_acc", agreement(on_eval.second, *eval)}};
    out.adapt.record.rows.insert(out.adapt.record.rows.begin(), diag);
  }
  return out;
}

AdaptResult adapt_fixed_labels(const Model& source, const UnlabeledDataset& target, const AdaptConfig& cfg,
                               const std::string& stage, const std::vector<int>& labels, Scalar weight,
                               const LabeledDataset* eval) {
  if (labels.size() != target.size()) throw DimensionError(stage + ": one pseudo label per target sample required");
  auto loss_fn = [&](Tape&, const ForwardResult& fr, const StepContext& ctx) {
    BatchLoss l;
    l.total = scale(pseudo_ce(fr.logits, gather(labels, ctx.batch)), weight);
    l.active = true;
    l.terms = {{"loss_total", l.total.item()}};
    return l;
  };
  auto report = [&](const Model& m, int) { return closed_set_report(m, eval); };
  return self_train(source, target, cfg, stage, loss_fn, report);
}

}  // namespace sfda
