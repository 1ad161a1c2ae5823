#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sfda/config.hpp"

namespace sfda {

/// Target metric of one track: H-score for unida, top-3 accuracy otherwise.
std::string track_metric(const std::string& track);
Scalar evaluate_track_metric(const LabConfig& cfg, const std::string& track, const Model& model,
                             const LabeledDataset& eval);

/// Runs the adaptation strategy of `track` ("unida", "places" or "imnet").
AdaptResult run_adaptation(const LabConfig& cfg, const std::string& track, const Model& source,
                           const UnlabeledDataset& target, const LabeledDataset* eval);

/// One track and seed: "old" is the last source checkpoint, "new" the best.
struct TrackRow {
  std::string track;
  std::uint64_t seed = 0;
  std::string metric;
  Scalar old_source = 0.0;
  Scalar old_adapt = 0.0;
  Scalar new_source = 0.0;
  Scalar new_adapt = 0.0;
  bool classifier_unchanged = true;
};

/// No-shift sanity check: source-model accuracy on source vs target data.
struct ControlRow {
  std::uint64_t seed = 0;
  Scalar source_acc = 0.0;
  Scalar target_acc = 0.0;
};

struct StudyResult {
  std::vector<TrackRow> tracks;
  std::vector<ControlRow> control;
  RunRecord record;
  std::string summary_csv;
  Json summary_json;
};

/// Trains and adapts every track for every seed. When `out_dir` is
/// non-empty, checkpoints, JSONL metrics, summary.csv, summary.json and
/// manifest.json are written below it.
StudyResult run_study(const LabConfig& cfg, std::span<const std::uint64_t> seeds,
                      const std::filesystem::path& out_dir);

std::string summary_csv(const std::vector<TrackRow>& tracks, const std::vector<ControlRow>& control);

}  // namespace sfda
