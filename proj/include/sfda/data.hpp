#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sfda/types.hpp"

namespace sfda {

enum class Domain { source, target };

/// Features with class labels. `is_private` marks samples whose class is
/// private to this domain; it is evaluation metadata.
struct LabeledDataset {
  Matrix features;
  Labels labels;
  std::vector<std::uint8_t> is_private;
  Domain domain = Domain::source;
  /// Width of the label space the classifier predicts over.
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  LabeledDataset subset(std::span<const std::size_t> rows) const;
};

/// Unlabeled target features. `private_flags` is instrumentation only, used
/// to assert that closed-set runs never touch private samples; no training
/// code reads labels from it.
struct UnlabeledDataset {
  Matrix features;
  std::vector<std::uint8_t> private_flags;
  Domain domain = Domain::target;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

/// Class counts and geometry of a synthetic source/target pair.
///
/// Class means sit on a circle of radius 3 in the first two input
/// coordinates at seeded, jittered angles; target-private classes use an
/// inner ring of radius 1.5 instead. Target means of every class are
/// rotated by `rotation` radians about the origin and translated by `shift`
/// along a seeded direction. Samples add isotropic Gaussian noise.
struct DomainSpec {
  int n_shared = 10;
  int n_source_private = 0;
  int n_target_private = 0;
  int samples_per_class = 60;
  int input_dim = 2;
  Scalar shift = 1.5;
  Scalar rotation = 0.3;
  Scalar noise_sigma = 0.35;
  std::uint64_t seed = 0;

  /// All violated constraints, empty when valid.
  std::vector<std::string> validate() const;
  bool is_universal() const { return n_target_private > 0 || n_source_private > 0; }
};

struct GeneratedDomains {
  LabeledDataset source;
  UnlabeledDataset target_train;
  LabeledDataset target_eval;
};

/// Source labels: shared 0..S-1 then source-private S..S+Ps-1. Target-eval
/// private samples get ids S+Ps.. with is_private set; they lie outside the
/// classifier's label space. num_classes is S+Ps for all outputs.
GeneratedDomains generate(const DomainSpec& spec);

// ---------------------------------------------------------------------------
// CSV: header `f0,...,f{d-1}[,label][,is_private]`.

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CsvSchema {
  /// Expected feature count; 0 infers it from the header.
  int feature_dim = 0;
  bool require_labels = false;
};

struct CsvTable {
  Matrix features;
  std::vector<int> labels;  // empty when the file has no label column
  std::vector<std::uint8_t> is_private;
  bool has_labels = false;
  bool has_private = false;
};

CsvTable read_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

/// num_classes = max label + 1 unless `num_classes` > 0.
LabeledDataset load_labeled_csv(const std::filesystem::path& path, int num_classes = 0);
UnlabeledDataset load_unlabeled_csv(const std::filesystem::path& path);

void save_csv(const std::filesystem::path& path, const LabeledDataset& data);
void save_csv(const std::filesystem::path& path, const UnlabeledDataset& data);

}  // namespace sfda
