#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sfda/rng.hpp"
#include "sfda/types.hpp"

namespace sfda {

/// Re-sampling weights: weights[c] = (sum_i N_i) / N_c, 0 for empty classes.
struct ClassWeights {
  std::vector<Scalar> weights;
  std::vector<std::int64_t> counts;
};

ClassWeights class_weights(std::span<const int> labels, int num_classes);

using IndexBatch = std::vector<std::size_t>;

/// Draws batches with replacement; a sample's probability is proportional to
/// the weight of its class. One epoch is ceil(n / batch_size) full batches.
class WeightedBatchSampler {
 public:
  WeightedBatchSampler(std::span<const int> labels, const ClassWeights& weights,
                       std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  IndexBatch next_batch();
  std::vector<IndexBatch> epoch();

 private:
  std::vector<Scalar> cumulative_;
  std::size_t last_positive_ = 0;
  std::size_t batch_size_;
  std::size_t batches_per_epoch_;
  Rng rng_;
};

/// Plain shuffled batching over [0, n). A trailing batch with a single
/// sample is merged into the previous one so every batch has >= 2 rows
/// whenever n >= 2.
std::vector<IndexBatch> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng);

}  // namespace sfda
