// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes. Tolerances are fixed here, not configurable.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>

#include "sfda/adapt.hpp"
#include "sfda/gradcheck_suite.hpp"
#include "sfda/losses.hpp"
#include "sfda/run_record.hpp"
#include "sfda/sampler.hpp"
#include "sfda/schedule.hpp"

using namespace sfda;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

void fail(Verdict& v, const std::string& why) {
  if (v.pass) v.detail = why;
  v.pass = false;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

int run_cli(const std::string& args) {
  const std::string cmd = "\"" SFDA_LAB_CLI "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Matrix random_matrix(Index r, Index c, Rng& rng, Scalar scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data(),
                    [](double x, double y) { return std::memcmp(&x, &y, sizeof(double)) == 0; });
}

// ---------------------------------------------------------------------------

Verdict gradients() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    for (const NamedGradCheck& c : run_gradcheck_suite(seed, 1e-5, 1e-5)) {
      ++checked;
      worst = std::max(worst, c.report.max_rel_error);
      if (!c.report.passed) fail(v, c.loss + " seed " + std::to_string(seed) + ": " + c.report.worst_entry);
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 10.0) fail(v, fmt("took %.2f s", secs));
  if (v.pass) {
    v.detail = std::to_string(checked) + " loss/seed checks, max rel err " + fmt("%.2e", worst) +
               " (tol 1e-5), " + fmt("%.2f s", secs);
  }
  return v;
}

Verdict identities() {
  Verdict v;
  double worst = 0.0;
  for (Index k : {2, 5, 10}) {
    for (Index b : {1, 4, 16}) {
      const Scalar lnk = std::log(static_cast<Scalar>(k));
      std::vector<int> y(static_cast<std::size_t>(b));
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % static_cast<std::size_t>(k));
      const Matrix zero = Matrix::Zero(b, k);
      auto check = [&](const char* what, Scalar got) {
        worst = std::max(worst, std::abs(got - lnk));
        if (std::abs(got - lnk) > 1e-9) fail(v, std::string(what) + fmt(" = %.17g", got));
      };
      for (Scalar alpha : {0.0, 0.1, 0.5, 1.0}) {
        Tape t;
        check("smoothed_ce", smoothed_ce(t.constant(zero), y, alpha).item());
      }
      {
        Tape t;
        check("pseudo_ce", pseudo_ce(t.constant(zero), y).item());
        check("ema_consistency_ce", ema_consistency_ce(t.constant(zero), t.constant(zero)).item());
      }
      Tape t;
      Var z = t.input(zero);
      Var loss = entropy_max_loss(z);
      if (std::abs(loss.item() + lnk) > 1e-10) fail(v, fmt("entropy_max_loss at uniform = %.17g", loss.item()));
      t.backward(loss);
      const Scalar g = z.grad().cwiseAbs().maxCoeff();
      if (g > 1e-10) fail(v, fmt("entropy_max_loss gradient at uniform %.3e", g));
      // Uniform is the minimum: random logits never go below it.
      Rng rng(static_cast<std::uint64_t>(k * 100 + b));
      for (int trial = 0; trial < 20; ++trial) {
        Tape t2;
        if (entropy_max_loss(t2.constant(random_matrix(b, k, rng, 2.0))).item() < -lnk) {
          fail(v, "entropy_max_loss below -ln K");
        }
      }
    }
  }
  if (v.pass) v.detail = "max |loss - ln K| " + fmt("%.2e", worst) + " (tol 1e-9), entropy-max gradient <= 1e-10";
  return v;
}

Verdict oracles() {
  Verdict v;
  const Index n = 64;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    const Index k = 6, d = 8;
    const Matrix f = random_matrix(n, d, rng);
    const Matrix z = random_matrix(n, k, rng, 1.0 + 0.2 * static_cast<Scalar>(seed));
    const Matrix p = softmax_rows(z);
    const std::string at = " (seed " + std::to_string(seed) + ")";

    // Centroids: sum_i p_ik f_i / sum_i p_ik.
    const Centroids c = weighted_centroids(f, p);
    Matrix c_ref(k, d);
    for (Index kk = 0; kk < k; ++kk) {
      Scalar mass = 0.0;
      for (Index i = 0; i < n; ++i) mass += p(i, kk);
      for (Index j = 0; j < d; ++j) {
        Scalar s = 0.0;
        for (Index i = 0; i < n; ++i) s += p(i, kk) * f(i, j);
        c_ref(kk, j) = s / mass;
      }
    }
    if (!same_bits(c.c, c_ref)) fail(v, "centroids" + at);

    // Cosine labels: argmax over normalized dot products, first on ties.
    std::vector<int> cos_ref;
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      Scalar best_cos = -2.0;
      for (Index kk = 0; kk < k; ++kk) {
        const Scalar cs = f.row(i).dot(c_ref.row(kk)) / (f.row(i).norm() * c_ref.row(kk).norm());
        if (cs > best_cos) {
          best_cos = cs;
          best = static_cast<int>(kk);
        }
      }
      cos_ref.push_back(best);
    }
    if (cosine_pseudo_labels(f, c) != cos_ref) fail(v, "cosine labels" + at);

    // Double pseudo labels: first two entries of a stable descending sort.
    const DoublePseudoLabels top2 = top2_labels(p);
    for (Index i = 0; i < n; ++i) {
      std::vector<int> order(static_cast<std::size_t>(k));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p(i, a) > p(i, b); });
      if (top2.first[static_cast<std::size_t>(i)] != order[0] || top2.second[static_cast<std::size_t>(i)] != order[1]) {
        fail(v, "double pseudo labels" + at);
      }
    }

    // Partition: normalized entropy against the thresholds.
    const ThresholdSchedule th = thresholds_for_zeta(0.05 * static_cast<Scalar>(seed + 1));
    const Partition part = partition_batch(z, th);
    Partition ref;
    for (Index i = 0; i < n; ++i) {
      Scalar h = 0.0;
      for (Index kk = 0; kk < k; ++kk) h -= p(i, kk) > 0.0 ? p(i, kk) * std::log(p(i, kk)) : 0.0;
      h /= std::log(static_cast<Scalar>(k));
      (h <= th.tau_low ? ref.known : h >= th.tau_high ? ref.unknown : ref.ambiguous).push_back(i);
    }
    if (part.known != ref.known || part.unknown != ref.unknown || part.ambiguous != ref.ambiguous) {
      fail(v, "partition" + at);
    }

    // Top-k: label position in the stable descending order.
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int& yy : y) yy = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k)));
    const Matrix zq = (z * 2.0).array().round();  // integer logits, many ties
    for (int kk = 1; kk <= k; ++kk) {
      std::size_t hits = 0;
      for (Index i = 0; i < n; ++i) {
        std::vector<int> order(static_cast<std::size_t>(k));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return zq(i, a) > zq(i, b); });
        hits += std::find(order.begin(), order.begin() + kk, y[static_cast<std::size_t>(i)]) != order.begin() + kk;
      }
      if (topk_accuracy(zq, y, kk) != static_cast<Scalar>(hits) / static_cast<Scalar>(n)) fail(v, "top-k" + at);
    }
  }
  if (v.pass) v.detail = "centroids, cosine labels, top-2 labels, partition, top-k: exact on 20 seeds x 64 samples";
  return v;
}

Verdict schedules() {
  Verdict v;
  for (std::int64_t total = 1; total <= 10000; ++total) {
    const std::int64_t first_on = (2 * total + 4) / 5;  // ceil(0.4 * total)
    if (first_on > 0 && lambda_ema(first_on - 1, total, 0.4) != 0.0) fail(v, "lambda on early, total " + std::to_string(total));
    if (first_on < total && lambda_ema(first_on, total, 0.4) != 1.0) fail(v, "lambda off late, total " + std::to_string(total));
  }
  const ThresholdSchedule start = thresholds_for_zeta(0.0);
  if (start.tau_high != 0.5 || start.tau_low != 0.5) fail(v, "threshold start point");
  for (std::int64_t total : {1, 10, 333, 1000}) {
    for (std::int64_t s = 0; s < total; ++s) {
      const ThresholdSchedule th = thresholds_at(s, total);
      if (th.tau_high + th.tau_low != 1.0) fail(v, "tau sum at step " + std::to_string(s));
      if (th.tau_high <= 0.5 || th.tau_high > 0.7) fail(v, "tau_high out of range");
    }
    const ThresholdSchedule end = thresholds_at(total - 1, total);
    if (end.tau_high != 0.7) fail(v, fmt("tau_high end %.17g", end.tau_high));
    // 0.3 itself is not a double; 1 - 0.7 lands one ulp above the nearest one.
    if (std::abs(end.tau_low - 0.3) > std::nextafter(0.3, 1.0) - 0.3) fail(v, fmt("tau_low end %.17g", end.tau_low));
  }
  for (Scalar eta0 : {1e-3, 1e-2, 0.05}) {
    if (lr_at(eta0, 0.0) != eta0) fail(v, "lr_at(eta0, 0)");
    if (lr_at(eta0, 1.0) != eta0 / 11.0) fail(v, "lr_at(eta0, 1)");
  }
  if (v.pass) v.detail = "lambda switch exact for totals 1..10000, tau endpoints and sum, lr_at endpoints exact";
  return v;
}

Verdict resampling() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<int> y;
  for (int c = 0; c < 3; ++c) y.insert(y.end(), static_cast<std::size_t>(c == 0 ? 10 : c == 1 ? 30 : 60), c);
  WeightedBatchSampler sampler(y, class_weights(y, 3), 100, 12345);
  std::vector<double> hits(3, 0.0);
  for (int b = 0; b < 1000; ++b) {
    for (std::size_t i : sampler.next_batch()) hits[static_cast<std::size_t>(y[i])] += 1.0;
  }
  double worst = 0.0;
  for (double h : hits) worst = std::max(worst, std::abs(h / 1e5 - 1.0 / 3.0));
  const double secs = seconds_since(t0);
  if (worst > 0.01) fail(v, fmt("max deviation %.4f", worst));
  if (secs >= 5.0) fail(v, fmt("took %.2f s", secs));
  if (v.pass) {
    v.detail = fmt("frequencies %.4f", hits[0] / 1e5) + fmt(" %.4f", hits[1] / 1e5) + fmt(" %.4f", hits[2] / 1e5) +
               fmt(" (max dev %.4f, tol 0.01), ", worst) + fmt("%.2f s", secs);
  }
  return v;
}

const fs::path kStudyDir = fs::current_path() / "acceptance_runs" / "study";

Verdict study() {
  Verdict v;
  fs::remove_all(kStudyDir);
  const auto t0 = std::chrono::steady_clock::now();
  const int code = run_cli("reproduce-all --num-seeds 5 --seed 0 --out-dir \"" + kStudyDir.string() + "\"");
  const double secs = seconds_since(t0);
  if (code != 0) {
    fail(v, "reproduce-all exited with " + std::to_string(code));
    return v;
  }
  if (secs > 60.0) fail(v, fmt("took %.1f s", secs));
  const Json s = Json::parse(read_text(kStudyDir / "summary.json"));
  std::string counts;
  for (const std::string track : {"unida", "places", "imnet"}) {
    const Json& ge = s["tracks"][track]["seeds_adapt_ge_source"];
    const int o = ge["old"].get<int>(), n = ge["new"].get<int>();
    counts += track + " " + std::to_string(o) + "/5 old " + std::to_string(n) + "/5 new, ";
    if (o < 4 || n < 4) fail(v, track + ": adapted >= source in " + std::to_string(o) + "/5 (old), " +
                                    std::to_string(n) + "/5 (new), need 4");
  }
  double worst_gap = 0.0;
  for (const Json& c : s["control"]) {
    worst_gap = std::max(worst_gap, std::abs(c["source_acc"].get<double>() - c["target_acc"].get<double>()));
  }
  if (worst_gap > 0.05) fail(v, fmt("control gap %.4f", worst_gap));
  if (v.pass) v.detail = counts + fmt("control gap %.4f (tol 0.05), ", worst_gap) + fmt("%.1f s", secs);
  return v;
}

Verdict determinism() {
  Verdict v;
  const fs::path root = fs::current_path() / "acceptance_runs" / "determinism";
  fs::remove_all(root);
  std::size_t compared = 0;
  for (const std::string track : {"unida", "places", "imnet"}) {
    for (const char* rep : {"a", "b"}) {
      const fs::path d = root / rep / track;
      const std::string common = " --seed 7 --out-dir \"";
      if (run_cli("train-source --track " + track + common + (d / "src").string() + "\"") != 0 ||
          run_cli("adapt " + track + " --source-checkpoint \"" + (d / "src" / "source_last.ckpt").string() + "\"" +
                  common + (d / "adapt").string() + "\"") != 0) {
        fail(v, track + ": CLI run failed");
        return v;
      }
    }
    for (const char* file : {"src/source_last.ckpt", "src/source_best.ckpt", "src/source_metrics.jsonl",
                             "adapt/adapted.ckpt", "adapt/adapt_metrics.jsonl"}) {
      ++compared;
      if (read_text(root / "a" / track / file) != read_text(root / "b" / track / file)) {
        fail(v, track + "/" + file + " differs");
      }
    }
  }
  if (v.pass) v.detail = std::to_string(compared) + " checkpoint and metric files byte-identical across two invocations";
  return v;
}

Verdict frozen_classifier() {
  Verdict v;
  std::size_t runs = 0;
  if (!fs::exists(kStudyDir / "summary.json")) {
    fail(v, "study outputs missing");
    return v;
  }
  for (const std::string track : {"unida", "places", "imnet"}) {
    for (int seed = 0; seed < 5; ++seed) {
      const fs::path d = kStudyDir / track / ("seed_" + std::to_string(seed));
      for (auto [src, adapted] : {std::pair{"source_last.ckpt", "adapt_old.ckpt"},
                                  std::pair{"source_best.ckpt", "adapt_new.ckpt"}}) {
        const Model a = load_checkpoint(d / src), b = load_checkpoint(d / adapted);
        ++runs;
        if (!same_bits(a.classifier.weight.value, b.classifier.weight.value) ||
            !same_bits(a.classifier.bias.value, b.classifier.bias.value)) {
          fail(v, (d / adapted).string() + ": classifier changed");
        }
        if (same_bits(a.bottleneck.weight.value, b.bottleneck.weight.value)) {
          fail(v, (d / adapted).string() + ": feature extractor did not train");
        }
      }
    }
  }
  if (v.pass) v.detail = "h bit-identical in " + std::to_string(runs) + " adaptation runs (3 strategies x 5 seeds x old/new)";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient verification", gradients},
      {"analytic identities", identities},
      {"oracle equivalence", oracles},
      {"schedule exactness", schedules},
      {"re-sampling", resampling},
      {"end-to-end synthetic study", study},
      {"determinism", determinism},
      {"frozen classifier", frozen_classifier},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = Verdict{false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("[%s] %zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
