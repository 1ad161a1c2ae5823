#include "sfda/gradcheck_suite.hpp"

#include "sfda/adapt.hpp"
#include "sfda/losses.hpp"
#include "sfda/model.hpp"

namespace sfda {

namespace {

constexpr Index kBatch = 4;
constexpr Index kInputDim = 3;
constexpr Index kFeatureDim = 8;
constexpr Index kClasses = 5;

Matrix random_matrix(Index r, Index c, Rng& rng) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

std::vector<NamedGradCheck> run_gradcheck_suite(std::uint64_t seed, Scalar step, Scalar tol) {
  Rng rng(Rng::derive(seed, stream::kToy));
  const Architecture arch{kInputDim, {6}, kFeatureDim, kClasses};
  Model model(arch, seed);
  // Perturb the affine BN parameters and biases away from their initial
  // values so every parameter entry has a generic gradient.
  for (Parameter* p : model.parameters()) {
    for (Index e = 0; e < p->value.size(); ++e) p->value.data()[e] += 0.3 * rng.normal();
  }
  const Matrix x = random_matrix(kBatch, kInputDim, rng);
  const Labels y{0, 3, 1, 4};
  const Labels y2{2, 0, 4, 1};
  const Matrix ema_logits = random_matrix(kBatch, kClasses, rng);

  // Labels that depend on the model are frozen at the base point.
  const Outputs base = [&] {
    Model copy = model;
    Tape t;
    ForwardResult fr = copy.forward(t, x, BnMode::train, false);
    return Outputs{fr.features.value(), fr.logits.value()};
  }();
  const std::vector<int> argmax = argmax_rows(base.logits);
  const std::vector<int> centroid_labels =
      cosine_pseudo_labels(base.features, weighted_centroids(base.features, softmax_rows(base.logits)));
  const std::vector<Index> known{0, 1}, unknown{2, 3};
  const std::vector<int> known_labels{argmax[0], argmax[1]};

  auto logits_of = [&model, &x](Tape& t) {
    return model.forward(t, x, BnMode::train, false).logits;
  };

  struct Case {
    std::string name;
    std::function<Var(Tape&)> fn;
  };
  const std::vector<Case> cases{
      {"smoothed_ce", [&](Tape& t) { return smoothed_ce(logits_of(t), y, 0.1); }},
      {"ema_consistency_ce",
       [&](Tape& t) { return ema_consistency_ce(logits_of(t), t.constant(ema_logits)); }},
      {"source_objective",
       [&](Tape& t) {
         Var z = logits_of(t);
         return add(smoothed_ce(z, y, 0.1), scale(ema_consistency_ce(z, t.constant(ema_logits)), 1.0));
       }},
      {"pseudo_ce", [&](Tape& t) { return pseudo_ce(logits_of(t), argmax); }},
      {"entropy_max", [&](Tape& t) { return entropy_max_loss(logits_of(t)); }},
      {"unida_objective",
       [&](Tape& t) {
         Var z = logits_of(t);
         return add(pseudo_ce(select_rows(z, known), known_labels),
                    scale(entropy_max_loss(select_rows(z, unknown)), 0.3));
       }},
      {"double_pseudo_ce", [&](Tape& t) { return double_pseudo_ce(logits_of(t), y, y2, 0.3, 0.1); }},
      {"centroid_pseudo_ce", [&](Tape& t) { return scale(pseudo_ce(logits_of(t), centroid_labels), 0.3); }},
  };

  std::vector<Parameter*> params = model.parameters();
  std::vector<NamedGradCheck> out;
  for (const Case& c : cases) {
    out.push_back({c.name, gradient_check(c.fn, params, step, tol)});
  }
  return out;
}

}  // namespace sfda
