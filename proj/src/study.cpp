#include "sfda/study.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <tuple>

namespace sfda {

namespace fs = std::filesystem;

std::string track_metric(const std::string& track) {
  if (track == "unida") return "h_score";
  if (track == "places" || track == "imnet") return "top3_acc";
  if (track == "control") return "top1_acc";
  throw ContractError("unknown track '" + track + "'");
}

Scalar evaluate_track_metric(const LabConfig& cfg, const std::string& track, const Model& model,
                             const LabeledDataset& eval) {
  if (track == "unida") return evaluate_unida(model, eval, cfg.unida.eval_rule).h_score;
  const EvalOutcome o = evaluate_closed_set(model, eval);
  return track == "control" ? o.topk_acc.at(1) : o.topk_acc.at(3);
}

AdaptResult run_adaptation(const LabConfig& cfg, const std::string& track, const Model& source,
                           const UnlabeledDataset& target, const LabeledDataset* eval) {
  if (track == "unida") return adapt_unida(source, target, cfg.unida, eval);
  if (track == "places") {
    PlacesConfig pc = cfg.places;
    pc.base.assert_closed_set = true;
    return adapt_places(source, target, pc, eval).adapt;
  }
  if (track == "imnet") {
    ImnetConfig ic = cfg.imnet;
    ic.base.assert_closed_set = true;
    return adapt_imnet(source, target, ic, eval).adapt;
  }
  throw ContractError("no adaptation strategy for track '" + track + "'");
}

namespace {

struct Writer {
  fs::path root;
  RunRecord* record;

  bool enabled() const { return !root.empty(); }

  fs::path prepare(const fs::path& rel) const {
    const fs::path full = root / rel;
    fs::create_directories(full.parent_path());
    return full;
  }
  void checkpoint(const fs::path& rel, const Model& m) {
    if (!enabled()) return;
    save_checkpoint(prepare(rel), m);
    record->artifacts.push_back(rel.generic_string());
  }
  void jsonl(const fs::path& rel, const std::vector<Json>& rows) {
    if (!enabled()) return;
    write_jsonl(prepare(rel), rows);
    record->artifacts.push_back(rel.generic_string());
  }
  void text(const fs::path& rel, const std::string& body) {
    if (!enabled()) return;
    write_text(prepare(rel), body);
    record->artifacts.push_back(rel.generic_string());
  }
};

bool same_classifier(const Model& a, const Model& b) {
  auto eq = [](const Matrix& x, const Matrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           std::memcmp(x.data(), y.data(), sizeof(Scalar) * static_cast<std::size_t>(x.size())) == 0;
  };
  return eq(a.classifier.weight.value, b.classifier.weight.value) &&
         eq(a.classifier.bias.value, b.classifier.bias.value);
}

std::string fmt4(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string summary_csv(const std::vector<TrackRow>& tracks, const std::vector<ControlRow>& control) {
  std::string out = "track,seed,row,metric,value\n";
  for (const TrackRow& r : tracks) {
    const std::pair<const char*, Scalar> cells[] = {
        {"old-source", r.old_source}, {"old-adapt", r.old_adapt}, {"new-source", r.new_source}, {"new-adapt", r.new_adapt}};
    for (const auto& [kind, v] : cells) {
      out += r.track + "," + std::to_string(r.seed) + "," + kind + "," + r.metric + "," + fmt4(v) + "\n";
    }
  }
  for (const ControlRow& c : control) {
    out += "control," + std::to_string(c.seed) + ",source,top1_acc," + fmt4(c.source_acc) + "\n";
    out += "control," + std::to_string(c.seed) + ",target,top1_acc," + fmt4(c.target_acc) + "\n";
  }
  return out;
}

StudyResult run_study(const LabConfig& base_cfg, std::span<const std::uint64_t> seeds, const fs::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  StudyResult result;
  result.record.run_id = "reproduce-all";
  result.record.seed = seeds.empty() ? 0 : seeds.front();
  result.record.config = base_cfg.to_json();
  result.record.config["seeds"] = std::vector<std::uint64_t>(seeds.begin(), seeds.end());
  Writer w{out_dir, &result.record};

  for (std::uint64_t seed : seeds) {
    LabConfig cfg = base_cfg;
    cfg.set_seed(seed);
    for (const std::string track : {"unida", "places", "imnet"}) {
      const fs::path dir = fs::path(track) / ("seed_" + std::to_string(seed));
      const GeneratedDomains data = generate(cfg.domain(track));
      const Architecture arch = cfg.architecture(data.source.features.cols(), data.source.num_classes);
      const SourceResult src = train_source(data.source, arch, cfg.source);
      w.checkpoint(dir / "source_last.ckpt", src.last);
      w.checkpoint(dir / "source_best.ckpt", src.best);
      w.jsonl(dir / "source_metrics.jsonl", src.record.rows);

      TrackRow row;
      row.track = track;
      row.seed = seed;
      row.metric = track_metric(track);
      for (const auto& [tag, model, src_slot, adapt_slot] :
           {std::tuple{"old", &src.last, &row.old_source, &row.old_adapt},
            std::tuple{"new", &src.best, &row.new_source, &row.new_adapt}}) {
        *src_slot = evaluate_track_metric(cfg, track, *model, data.target_eval);
        const AdaptResult ad = run_adaptation(cfg, track, *model, data.target_train, &data.target_eval);
        *adapt_slot = evaluate_track_metric(cfg, track, ad.model, data.target_eval);
        row.classifier_unchanged = row.classifier_unchanged && same_classifier(*model, ad.model);
        w.checkpoint(dir / (std::string("adapt_") + tag + ".ckpt"), ad.model);
        w.jsonl(dir / (std::string("adapt_") + tag + "_metrics.jsonl"), ad.record.rows);
      }
      result.tracks.push_back(row);
    }

    const GeneratedDomains control = generate(cfg.data_control);
    const Architecture arch = cfg.architecture(control.source.features.cols(), control.source.num_classes);
    const SourceResult src = train_source(control.source, arch, cfg.source);
    const fs::path dir = fs::path("control") / ("seed_" + std::to_string(seed));
    w.checkpoint(dir / "source_last.ckpt", src.last);
    w.jsonl(dir / "source_metrics.jsonl", src.record.rows);
    result.control.push_back(ControlRow{seed, evaluate_track_metric(cfg, "control", src.last, control.source),
                                        evaluate_track_metric(cfg, "control", src.last, control.target_eval)});
  }

  result.summary_csv = summary_csv(result.tracks, result.control);

  Json summary;
  summary["seeds"] = std::vector<std::uint64_t>(seeds.begin(), seeds.end());
  Json tracks = Json::object();
  for (const std::string track : {"unida", "places", "imnet"}) {
    Json t;
    t["metric"] = track_metric(track);
    Json per_seed = Json::array();
    int old_ok = 0, new_ok = 0;
    Scalar sums[4] = {0, 0, 0, 0};
    int n = 0;
    for (const TrackRow& r : result.tracks) {
      if (r.track != track) continue;
      per_seed.push_back(Json{{"seed", r.seed},
                              {"old-source", round4(r.old_source)},
                              {"old-adapt", round4(r.old_adapt)},
                              {"new-source", round4(r.new_source)},
                              {"new-adapt", round4(r.new_adapt)}});
      old_ok += r.old_adapt >= r.old_source;
      new_ok += r.new_adapt >= r.new_source;
      sums[0] += r.old_source;
      sums[1] += r.old_adapt;
      sums[2] += r.new_source;
      sums[3] += r.new_adapt;
      ++n;
    }
    t["per_seed"] = per_seed;
    if (n > 0) {
      t["mean"] = Json{{"old-source", round4(sums[0] / n)},
                       {"old-adapt", round4(sums[1] / n)},
                       {"new-source", round4(sums[2] / n)},
                       {"new-adapt", round4(sums[3] / n)}};
    }
    t["seeds_adapt_ge_source"] = Json{{"old", old_ok}, {"new", new_ok}};
    tracks[track] = t;
  }
  summary["tracks"] = tracks;
  Json ctrl = Json::array();
  for (const ControlRow& c : result.control) {
    ctrl.push_back(Json{{"seed", c.seed}, {"source_acc", round4(c.source_acc)}, {"target_acc", round4(c.target_acc)}});
  }
  summary["control"] = ctrl;
  result.summary_json = summary;

  w.text("summary.csv", result.summary_csv);
  w.text("summary.json", summary.dump(2) + "\n");
  result.record.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (w.enabled()) write_text(out_dir / "manifest.json", result.record.manifest().dump(2) + "\n");
  return result;
}

}  // namespace sfda
