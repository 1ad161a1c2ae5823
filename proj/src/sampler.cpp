#include "sfda/sampler.hpp"

#include <algorithm>

namespace sfda {

ClassWeights class_weights(std::span<const int> labels, int num_classes) {
  ClassWeights cw;
  cw.counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ContractError("class_weights: label out of range");
    ++cw.counts[static_cast<std::size_t>(y)];
  }
  const auto total = static_cast<Scalar>(labels.size());
  cw.weights.resize(cw.counts.size());
  for (std::size_t c = 0; c < cw.counts.size(); ++c) {
    cw.weights[c] = cw.counts[c] > 0 ? total / static_cast<Scalar>(cw.counts[c]) : 0.0;
  }
  return cw;
}

WeightedBatchSampler::WeightedBatchSampler(std::span<const int> labels, const ClassWeights& weights,
                                           std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
  if (labels.empty()) throw ContractError("weighted sampler: empty dataset");
  if (batch_size == 0) throw ContractError("weighted sampler: batch_size must be >= 1");
  cumulative_.reserve(labels.size());
  Scalar acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= weights.weights.size()) throw ContractError("weighted sampler: label without weight");
    const Scalar w = weights.weights[y];
    if (w > 0.0) last_positive_ = i;
    acc += w;
    cumulative_.push_back(acc);
  }
  if (!(acc > 0.0)) throw ContractError("weighted sampler: all weights are zero");
  batches_per_epoch_ = (labels.size() + batch_size - 1) / batch_size;
}

IndexBatch WeightedBatchSampler::next_batch() {
  IndexBatch batch(batch_size_);
  const Scalar total = cumulative_.back();
  for (std::size_t& idx : batch) {
    const Scalar u = rng_.uniform() * total;
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    idx = it == cumulative_.end() ? last_positive_
                                  : static_cast<std::size_t>(it - cumulative_.begin());
  }
  return batch;
}

std::vector<IndexBatch> WeightedBatchSampler::epoch() {
  std::vector<IndexBatch> out;
  out.reserve(batches_per_epoch_);
  for (std::size_t b = 0; b < batches_per_epoch_; ++b) out.push_back(next_batch());
  return out;
}

std::vector<IndexBatch> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ContractError("shuffled_batches: batch_size must be >= 1");
  const std::vector<std::size_t> perm = rng.permutation(n);
  std::vector<IndexBatch> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  if (out.size() >= 2 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

}  // namespace sfda
