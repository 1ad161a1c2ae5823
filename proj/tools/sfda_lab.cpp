// Command-line front end: data generation, source training, adaptation,
// evaluation, gradient checks and the full synthetic study.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sfda/config.hpp"
#include "sfda/gradcheck_suite.hpp"
#include "sfda/metrics.hpp"
#include "sfda/study.hpp"

namespace fs = std::filesystem;
using namespace sfda;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "YAML config file");
  sub->add_option("--seed", c.seed, "Seed override for every stage");
  sub->add_option("--out-dir", c.out_dir, "Output directory (default: $SFDA_LAB_OUT or ./runs)");
}

LabConfig resolve_config(const Common& c) {
  LabConfig cfg = c.config_path.empty() ? LabConfig{} : load_config(c.config_path);
  if (c.seed) cfg.set_seed(*c.seed);
  if (auto errors = cfg.validate(); !errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

fs::path resolve_out(const Common& c) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv("SFDA_LAB_OUT"); env && *env) return env;
  return "runs";
}

void require_track(const std::string& track, bool allow_control) {
  for (const auto& t : track_names()) {
    if (t == track && (allow_control || t != "control")) return;
  }
  throw CLI::ValidationError("--track", "unknown track '" + track + "'");
}


/// Generated data for the track, or CSV files from `data_dir` when given.
GeneratedDomains track_data(const LabConfig& cfg, const std::string& track, const std::string& data_dir) {
  if (data_dir.empty()) return generate(cfg.domain(track));
  const fs::path d = data_dir;
  GeneratedDomains g;
  g.source = load_labeled_csv(d / "source.csv");
  g.target_eval = load_labeled_csv(d / "target_eval.csv", g.source.num_classes);
  g.target_train = load_unlabeled_csv(d / "target_train.csv");
  return g;
}

void write_manifest(const fs::path& out, RunRecord& rec, std::chrono::steady_clock::time_point t0) {
  rec.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(out / "manifest.json", rec.manifest().dump(2) + "\n");
}

Json outcome_json(const std::string& track, const EvalOutcome& o) {
  Json j{{"track", track}, {"metric", track_metric(track)}};
  if (track == "unida") {
    j["known_acc"] = round4(o.known_acc);
    j["unknown_acc"] = round4(o.unknown_acc);
    j["h_score"] = round4(o.h_score);
  }
  for (const auto& [k, v] : o.topk_acc) j["top" + std::to_string(k) + "_acc"] = round4(v);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-free domain adaptation lab"};
  app.require_subcommand(1);

  Common common;
  std::string track = "unida";
  std::string data_dir;
  std::string checkpoint;
  std::string strategy;
  int num_seeds = 5;
  double step = 1e-5, tol = 1e-5;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic source/target pair as CSV");
  add_common(gen, common);
  gen->add_option("--track", track, "unida | places | imnet | control");

  auto* train = app.add_subcommand("train-source", "Train a source model (last and best checkpoints)");
  add_common(train, common);
  train->add_option("--track", track, "unida | places | imnet | control");
  train->add_option("--data-dir", data_dir, "Directory holding source.csv etc. instead of generated data");

  auto* adapt = app.add_subcommand("adapt", "Adapt a source checkpoint to unlabeled target data");
  add_common(adapt, common);
  adapt->add_option("strategy", strategy, "unida | places | imnet")
      ->required()
      ->check(CLI::IsMember({"unida", "places", "imnet"}));
  adapt->add_option("--source-checkpoint", checkpoint, "Source model checkpoint")->required();
  adapt->add_option("--data-dir", data_dir, "Directory holding target_train.csv and target_eval.csv");

  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on target evaluation data");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  eval->add_option("--track", track, "unida | places | imnet | control");
  eval->add_option("--data-dir", data_dir, "Directory holding target_eval.csv");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  add_common(grad, common);
  grad->add_option("--step", step, "Central-difference step");
  grad->add_option("--tol", tol, "Maximum relative error");

  auto* repro = app.add_subcommand("reproduce-all", "Run all tracks and the control for several seeds");
  add_common(repro, common);
  repro->add_option("--num-seeds", num_seeds, "Seeds seed..seed+n-1")->check(CLI::PositiveNumber);

  auto* defcfg = app.add_subcommand("default-config", "Print the default config as YAML");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (defcfg->parsed()) {
      std::cout << default_config_yaml();
      return kOk;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const LabConfig cfg = resolve_config(common);
    const fs::path out = resolve_out(common);

    if (gen->parsed()) {
      require_track(track, true);
      const GeneratedDomains g = generate(cfg.domain(track));
      fs::create_directories(out);
      save_csv(out / "source.csv", g.source);
      save_csv(out / "target_train.csv", g.target_train);
      save_csv(out / "target_eval.csv", g.target_eval);
      RunRecord rec{.run_id = "gen-data", .seed = cfg.seed};
      rec.config = cfg.to_json();
      rec.config["track"] = track;
      rec.artifacts = {"source.csv", "target_train.csv", "target_eval.csv"};
      write_manifest(out, rec, t0);
      std::cout << "wrote " << g.source.size() << " source, " << g.target_train.size() << " target rows to "
                << out.string() << "\n";
      return kOk;
    }

    if (train->parsed()) {
      require_track(track, true);
      const GeneratedDomains g = track_data(cfg, track, data_dir);
      const SourceResult r =
          train_source(g.source, cfg.architecture(g.source.features.cols(), g.source.num_classes), cfg.source);
      fs::create_directories(out);
      save_checkpoint(out / "source_last.ckpt", r.last);
      save_checkpoint(out / "source_best.ckpt", r.best);
      write_jsonl(out / "source_metrics.jsonl", r.record.rows);
      RunRecord rec{.run_id = "train-source", .seed = cfg.seed};
      rec.config = cfg.to_json();
      rec.config["track"] = track;
      rec.rows = r.record.rows;
      rec.artifacts = {"source_last.ckpt", "source_best.ckpt", "source_metrics.jsonl"};
      write_manifest(out, rec, t0);
      std::printf("best epoch %d (val acc %.4f), last val acc %.4f\n", r.best_epoch, r.best_val_acc,
                  r.last_val_acc);
      return kOk;
    }

    if (adapt->parsed()) {
      const Model source = load_checkpoint(checkpoint);
      const GeneratedDomains g = track_data(cfg, strategy, data_dir);
      const Scalar before = evaluate_track_metric(cfg, strategy, source, g.target_eval);
      const AdaptResult r = run_adaptation(cfg, strategy, source, g.target_train, &g.target_eval);
      const Scalar after = evaluate_track_metric(cfg, strategy, r.model, g.target_eval);
      fs::create_directories(out);
      save_checkpoint(out / "adapted.ckpt", r.model);
      write_jsonl(out / "adapt_metrics.jsonl", r.record.rows);
      RunRecord rec{.run_id = "adapt-" + strategy, .seed = cfg.seed};
      rec.config = cfg.to_json();
      rec.config["source_checkpoint"] = checkpoint;
      rec.rows = r.record.rows;
      rec.artifacts = {"adapted.ckpt", "adapt_metrics.jsonl"};
      write_manifest(out, rec, t0);
      std::printf("%s: source %.4f -> adapted %.4f\n", track_metric(strategy).c_str(), before, after);
      return kOk;
    }

    if (eval->parsed()) {
      require_track(track, true);
      const Model model = load_checkpoint(checkpoint);
      LabeledDataset target_eval = data_dir.empty()
                                       ? generate(cfg.domain(track)).target_eval
                                       : load_labeled_csv(fs::path(data_dir) / "target_eval.csv",
                                                          static_cast<int>(model.arch().num_classes));
      const EvalOutcome o = track == "unida" ? evaluate_unida(model, target_eval, cfg.unida.eval_rule)
                                             : evaluate_closed_set(model, target_eval);
      std::cout << outcome_json(track, o).dump(2) << "\n";
      return kOk;
    }

    if (grad->parsed()) {
      bool ok = true;
      std::printf("%-22s %12s %8s\n", "loss", "max_rel_err", "status");
      for (const NamedGradCheck& c : run_gradcheck_suite(cfg.seed, step, tol)) {
        std::printf("%-22s %12.3e %8s\n", c.loss.c_str(), c.report.max_rel_error,
                    c.report.passed ? "ok" : "FAIL");
        if (!c.report.passed) std::printf("    worst: %s\n", c.report.worst_entry.c_str());
        ok = ok && c.report.passed;
      }
      return ok ? kOk : kRuntime;
    }

    if (repro->parsed()) {
      std::vector<std::uint64_t> seeds;
      for (int i = 0; i < num_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
      const StudyResult r = run_study(cfg, seeds, out);
      std::cout << r.summary_csv;
      std::printf("wrote %zu artifacts to %s in %.1f s\n", r.record.artifacts.size() + 1, out.string().c_str(),
                  r.record.wall_clock_seconds);
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error:\n";
    for (const auto& msg : e.errors) std::cerr << "  - " << msg << "\n";
    return kUsage;
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
