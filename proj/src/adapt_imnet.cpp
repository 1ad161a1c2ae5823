#include <cmath>

#include "sfda/adapt.hpp"
#include "sfda/losses.hpp"

namespace sfda {

Centroids weighted_centroids(const Matrix& features, const Matrix& weights) {
  if (features.rows() != weights.rows()) throw DimensionError("centroids: feature/weight row counts differ");
  const Index n = features.rows(), d = features.cols(), K = weights.cols();
  Centroids out;
  out.c = Matrix::Zero(K, d);
  out.valid.assign(static_cast<std::size_t>(K), false);
  for (Index k = 0; k < K; ++k) {
    Scalar mass = 0.0;
    for (Index i = 0; i < n; ++i) {
      const Scalar w = weights(i, k);
      mass += w;
      for (Index j = 0; j < d; ++j) out.c(k, j) += w * features(i, j);
    }
    if (mass >= 1e-12) {
      for (Index j = 0; j < d; ++j) out.c(k, j) /= mass;
      out.valid[static_cast<std::size_t>(k)] = true;
    } else {
      out.c.row(k).setZero();
    }
  }
  return out;
}

Centroids compute_centroids(const Model& source, const Matrix& inputs) {
  const Outputs o = source.predict(inputs);
  return weighted_centroids(o.features, softmax_rows(o.logits));
}

std::vector<int> cosine_pseudo_labels(const Matrix& features, const Centroids& centroids) {
  if (features.cols() != centroids.c.cols()) throw DimensionError("cosine labels: feature width mismatch");
  const Index K = centroids.c.rows();
  std::vector<Scalar> cnorm(static_cast<std::size_t>(K), 0.0);
  bool any_valid = false;
  for (Index k = 0; k < K; ++k) {
    if (!centroids.valid[static_cast<std::size_t>(k)]) continue;
    any_valid = true;
    cnorm[static_cast<std::size_t>(k)] = centroids.c.row(k).norm();
    if (!(cnorm[static_cast<std::size_t>(k)] > 0.0)) {
      throw ContractError("cosine labels: centroid " + std::to_string(k) + " has zero norm");
    }
  }
  if (!any_valid) throw ContractError("cosine labels: no valid centroid");
  std::vector<int> labels(static_cast<std::size_t>(features.rows()));
  for (Index i = 0; i < features.rows(); ++i) {
    const Scalar fnorm = features.row(i).norm();
    if (!(fnorm > 0.0)) throw ContractError("cosine labels: feature row " + std::to_string(i) + " has zero norm");
    int best = -1;
    Scalar best_cos = 0.0;
    for (Index k = 0; k < K; ++k) {
      if (!centroids.valid[static_cast<std::size_t>(k)]) continue;
      Scalar dot = 0.0;
      for (Index j = 0; j < features.cols(); ++j) dot += features(i, j) * centroids.c(k, j);
      const Scalar cos = dot / (fnorm * cnorm[static_cast<std::size_t>(k)]);
      if (best < 0 || cos > best_cos) {
        best = static_cast<int>(k);
        best_cos = cos;
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

std::vector<std::string> ImnetConfig::validate() const {
  std::vector<std::string> e = base.validate();
  if (!(eta >= 0.0) || !std::isfinite(eta)) e.emplace_back("eta must be finite and >= 0");
  if (centroid_rounds < 1) e.emplace_back("centroid_rounds must be >= 1");
  return e;
}

std::pair<std::vector<int>, Centroids> centroid_pseudo_labels(const Model& source, const Matrix& inputs,
                                                              int rounds) {
  const Outputs o = source.predict(inputs);
  Centroids c = weighted_centroids(o.features, softmax_rows(o.logits));
  std::vector<int> labels = cosine_pseudo_labels(o.features, c);
  for (int r = 1; r < rounds; ++r) {
    Matrix onehot = Matrix::Zero(o.logits.rows(), o.logits.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) onehot(static_cast<Index>(i), labels[i]) = 1.0;
    c = weighted_centroids(o.features, onehot);
    labels = cosine_pseudo_labels(o.features, c);
  }
  return {std::move(labels), std::move(c)};
}

ImnetResult adapt_imnet(const Model& source, const UnlabeledDataset& target, const ImnetConfig& cfg,
                        const LabeledDataset* eval) {
  if (auto errors = cfg.validate(); !errors.empty()) {
    std::string msg = "invalid imnet config:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ContractError(msg);
  }
  ImnetResult out;
  std::tie(out.labels, out.centroids) = centroid_pseudo_labels(source, target.features, cfg.centroid_rounds);
  out.adapt = adapt_fixed_labels(source, target, cfg.base, "adapt_imnet", out.labels, cfg.eta, eval);

  Json c = cfg.base.to_json();
  c["eta"] = cfg.eta;
  c["centroid_rounds"] = cfg.centroid_rounds;
  out.adapt.record.config = c;
  for (Json& row : out.adapt.record.rows) row["eta"] = cfg.eta;
  if (eval) {
    // Diagnostics on the labeled split: centroid labels (centroids from the
    // training split) against argmax-of-softmax labels.
    const Outputs o = source.predict(eval->features);
    const std::vector<int> centroid = cosine_pseudo_labels(o.features, out.centroids);
    const std::vector<int> argmax = argmax_rows(o.logits);
    std::size_t hit_c = 0, hit_a = 0, n = 0;
    for (std::size_t i = 0; i < eval->size(); ++i) {
      if (!eval->is_private.empty() && eval->is_private[i]) continue;
      ++n;
      hit_c += centroid[i] == eval->labels[i];
      hit_a += argmax[i] == eval->labels[i];
    }
    const auto denom = static_cast<Scalar>(std::max<std::size_t>(n, 1));
    Json diag{{"stage", "adapt_imnet_pseudo_labels"},
              {"centroid_pseudo_acc", static_cast<Scalar>(hit_c) / denom},
              {"argmax_pseudo_acc", static_cast<Scalar>(hit_a) / denom}};
    out.adapt.record.rows.insert(out.adapt.record.rows.begin(), diag);
  }
  return out;
}

}  // namespace sfda
