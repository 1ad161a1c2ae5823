#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfda/diffcore.hpp"
#include "sfda/rng.hpp"

namespace sfda {

/// Shape of f(x) = h(g(x)): ReLU trunk, Linear bottleneck to the feature
/// width, BN, then a linear classifier.
struct Architecture {
  Index input_dim = 2;
  std::vector<Index> hidden{64, 64};
  Index feature_dim = 256;
  Index num_classes = 2;

  bool operator==(const Architecture&) const = default;
};

/// y = x W + b with W stored [in x out].
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, Index in, Index out, LrGroup group, Rng& rng);

  Var forward(Tape& tape, const Var& x);
};

struct BatchNorm {
  Parameter gamma;
  Parameter beta;
  BatchNormState state;

  BatchNorm() = default;
  BatchNorm(const std::string& name, Index d);

  Var forward(Tape& tape, const Var& x, BnMode mode, bool update_running);
};

struct ForwardResult {
  Var features;
  Var logits;
};

struct Outputs {
  Matrix features;
  Matrix logits;
};

class Model {
 public:
  Model() = default;
  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, BN affine
  /// identity. Fully determined by `seed`.
  Model(const Architecture& arch, std::uint64_t seed);

  /// Records g and h on `tape`. Train-mode BN needs at least 2 rows.
  ForwardResult forward(Tape& tape, const Matrix& x, BnMode mode, bool update_running = true);

  /// Eval-mode values without touching any state.
  Outputs predict(const Matrix& x) const;

  const Architecture& arch() const { return arch_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  /// Parameters of g: trunk, bottleneck, BN affine.
  std::vector<Parameter*> feature_parameters();
  /// Parameters of h.
  std::vector<Parameter*> classifier_parameters();

  void freeze_classifier();
  bool classifier_frozen() const;

  std::vector<Linear> trunk;
  Linear bottleneck;
  BatchNorm bn;
  Linear classifier;

 private:
  Architecture arch_;
};

/// Slow-moving shadow copy: shadow <- c * shadow + (1 - c) * live.
struct EmaModel {
  Model shadow;
  Scalar coefficient = 0.95;

  EmaModel() = default;
  EmaModel(const Model& live, Scalar c) : shadow(live), coefficient(c) {}
};

/// Elementwise EMA step over every parameter. BN running statistics are
/// copied from `live`. Throws ContractError when shapes drifted.
void ema_update(EmaModel& ema, const Model& live);

/// The single-entry form used by ema_update, clamped to [min, max] of its
/// inputs so the shadow never leaves the envelope.
Scalar ema_step(Scalar shadow, Scalar live, Scalar coefficient);

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary, see checkpoint.cpp for the layout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bitwise equality of every parameter value and BN statistic.
bool bit_identical(const Model& a, const Model& b);

}  // namespace sfda
