/**
 * Copyright 2026 The FLIP Labels Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails. Criterion 8 runs only when FLIP_CIFAR10_DIR is set.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flip/pipeline.hpp"
#include "flip/verify.hpp"
#include "tiny_experiment.hpp"

namespace fs = std::filesystem;
using namespace flip;

namespace {

// Tolerances and thresholds.
constexpr int kOracleInstances = 20;
constexpr double kFdTolerance = 1e-3;
constexpr double kLogisticTolerance = 1e-8;
constexpr double kOracleSeconds = 60.0;
constexpr double kLParamZeroTolerance = 1e-12;
constexpr double kDegenerateNorm = 1e-12;
constexpr double kRowSumTolerance = 1e-6;
constexpr double kAffinityTolerance = 1e-12;
constexpr double kBudgetFraction = 0.02;
constexpr double kRandomRatio = 3.0;
constexpr double kInnerProductRatio = 1.5;
constexpr double kCtaDrop = 3.0;
constexpr double kDeskSeconds = 30.0 * 60.0;
constexpr double kFullScaleCta = 90.68;
constexpr double kFullScalePta = 99.4;
constexpr double kFullScaleCtaTolerance = 1.5;
constexpr double kFullScalePtaTolerance = 3.0;
constexpr std::size_t kFullScaleBudget = 1000;

struct Outcome {
  enum Kind { pass, fail, skip } kind = fail;
  std::string detail;
};

Outcome check(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Data rows of a CSV written by the pipeline, split on commas.
std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

/// point -> (cta, pta) from an eval CSV.
std::map<double, std::pair<double, double>> read_curve(const fs::path& path) {
  std::map<double, std::pair<double, double>> out;
  for (const auto& r : read_csv(path)) out[std::stod(r.at(0))] = {std::stod(r.at(1)), std::stod(r.at(3))};
  return out;
}

LogitTable random_table(std::size_t n, int k, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 2.0);
  LogitTable t;
  t.logits = Matrix(static_cast<Eigen::Index>(n), k);
  for (Eigen::Index i = 0; i < t.logits.size(); ++i) t.logits.data()[i] = g(rng);
  return t;
}

std::vector<int> random_labels(std::size_t n, int k, std::mt19937_64& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
  return y;
}

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = verify::run_oracle_suite(20260101, kOracleInstances);
  const double elapsed = seconds_since(t0);
  double fd = -1, logistic = -1;
  for (const auto& r : reports) {
    if (r.name.find("central differences") != std::string::npos) fd = r.worst;
    if (r.name.find("logistic") != std::string::npos) logistic = r.worst;
  }
  const bool ok = fd >= 0 && logistic >= 0 && fd < kFdTolerance && logistic < kLogisticTolerance &&
                  elapsed < kOracleSeconds;
  return check(ok, "fd rel err " + fmt(fd) + " (< " + fmt(kFdTolerance) + "), logistic " + fmt(logistic) + " (< " +
                       fmt(kLogisticTolerance) + "), " + fmt(elapsed) + " s");
}

Outcome l_param_points() {
  const verify::TinyInstance t = verify::make_tiny_instance(11);
  const Matrix targets = student_targets(t.table, t.batch);
  const PairedSteps steps = paired_steps(t.net, t.theta, t.batch, targets, 0.1);
  const double atNext = l_param(t.theta, steps.expertNext, steps.expertNext);
  const double atStart = l_param(t.theta, steps.expertNext, t.theta);
  ParamVector tiny = t.theta;
  tiny.values[0] += 0.5 * kDegenerateNorm;
  bool fired = false;
  try {
    (void)l_param(t.theta, tiny, steps.studentNext);
  } catch (const DegenerateStepError&) {
    fired = true;
  }
  ParamVector above = t.theta;
  above.values[0] += 100.0 * kDegenerateNorm;
  bool quiet = true;
  try {
    (void)l_param(t.theta, above, steps.studentNext);
  } catch (const DegenerateStepError&) {
    quiet = false;
  }
  const bool ok = std::abs(atNext) < kLParamZeroTolerance && atStart == 1.0 && fired && quiet;
  return check(ok, "L(next)=" + fmt(atNext) + ", L(start)=" + fmt(atStart, 17) + ", degenerate detection " +
                       (fired && quiet ? "ok" : "wrong"));
}

Outcome trigger_bytes() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const ImageShape shape{3, 32, 32};
  Image img(shape);
  for (auto& p : img.pixels) p = u(rng);
  const Image px = apply_trigger(img, TriggerSpec::pixel_default());
  const struct {
    int row, col;
    std::uint8_t rgb[3];
  } want[] = {{11, 16, {0x65, 0x00, 0x19}}, {5, 27, {0x65, 0x7B, 0x79}}, {30, 7, {0x00, 0x24, 0x36}}};
  bool pixelOk = true;
  for (const auto& w : want) {
    for (int c = 0; c < 3; ++c) pixelOk = pixelOk && to_byte(px.at(c, w.row, w.col)) == w.rgb[c];
  }
  std::size_t changed = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) changed += img.pixels[i] != px.pixels[i];
  pixelOk = pixelOk && changed <= 9;
  TriggerSpec zero = TriggerSpec::sinusoidal_default();
  zero.amplitude = 0.0;
  const bool sinOk = apply_trigger(img, zero) == img;
  const Image patched = apply_trigger(img, TriggerSpec::patch_default());
  const bool patchOk = apply_trigger(patched, TriggerSpec::patch_default()) == patched && patched != img;
  return check(pixelOk && sinOk && patchOk, std::string("pixel bytes ") + (pixelOk ? "ok" : "wrong") +
                                                ", sinusoidal identity " + (sinOk ? "ok" : "wrong") +
                                                ", patch idempotence " + (patchOk ? "ok" : "wrong"));
}

Outcome selection_oracle() {
  std::mt19937_64 rng(4);
  const std::size_t n = 1000;
  const auto y = random_labels(n, 10, rng);
  std::vector<LogitTable> runs;
  for (int r = 0; r < 5; ++r) runs.push_back(random_table(n, 10, rng));
  const ScoreTable scores = aggregate_runs(runs, y);
  std::vector<double> raw;
  for (const auto& s : scores) raw.push_back(s.score);
  bool match = true, nested = true;
  std::set<std::size_t> prev;
  for (std::size_t m : {0u, 1u, 150u, 999u, 1000u}) {
    const FlipSet f = select_flips(scores, m, SelectionStrategy::high);
    std::vector<std::size_t> idx;
    for (const auto& e : f.entries) idx.push_back(e.index);
    match = match && idx == verify::brute_select(raw, m);
    const std::set<std::size_t> cur(idx.begin(), idx.end());
    nested = nested && std::includes(cur.begin(), cur.end(), prev.begin(), prev.end());
    prev = cur;
  }
  return check(match && nested, std::string("brute-force match ") + (match ? "ok" : "wrong") + ", nesting " +
                                    (nested ? "ok" : "wrong"));
}

Outcome soft_algebra() {
  std::mt19937_64 rng(5);
  const std::size_t n = 1000;
  const auto y = random_labels(n, 10, rng);
  std::vector<LogitTable> runs;
  for (int r = 0; r < 3; ++r) runs.push_back(random_table(n, 10, rng));
  const SoftLabelTable one = soft_flip(runs, y, 1.0);
  const SoftLabelTable zero = soft_flip(runs, y, 0.0);
  bool exact = true;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 10; ++c) exact = exact && one.rows(static_cast<Eigen::Index>(i), c) == (c == y[i] ? 1.0 : 0.0);
  }
  double sumErr = 0.0, affErr = 0.0;
  for (double a : {0.0, 0.25, 0.4, 0.6, 0.8, 0.9, 1.0}) {
    const SoftLabelTable s = soft_flip(runs, y, a);
    sumErr = std::max(sumErr, (s.rows.rowwise().sum().array() - 1.0).abs().maxCoeff());
    affErr = std::max(affErr, (s.rows - (a * one.rows + (1.0 - a) * zero.rows)).lpNorm<Eigen::Infinity>());
  }
  return check(exact && sumErr < kRowSumTolerance && affErr < kAffinityTolerance,
               std::string("one-hot ") + (exact ? "exact" : "inexact") + ", row sum err " + fmt(sumErr) +
                   ", affinity err " + fmt(affErr));
}

struct DeskRun {
  ExperimentConfig cfg;
  double seconds = 0.0;
  std::string error;
};

DeskRun run_desk(const fs::path& root) {
  DeskRun d;
  d.cfg = ExperimentConfig::desk();
  d.cfg.outputDir = (root / "desk").string();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    testing::run_all_stages(d.cfg, true);
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  d.seconds = seconds_since(t0);
  return d;
}

Outcome desk_efficacy(const DeskRun& d) {
  if (!d.error.empty()) return check(false, "desk pipeline failed: " + d.error);
  const auto m = static_cast<double>(std::llround(kBudgetFraction * static_cast<double>(d.cfg.dataset.trainSize)));
  const fs::path eval = fs::path(d.cfg.outputDir) / "eval";
  const auto flipCurve = read_curve(eval / "flip.csv");
  const auto randCurve = read_curve(eval / "baseline_random.csv");
  const auto ipCurve = read_curve(eval / "baseline_inner_product.csv");
  if (!flipCurve.count(0.0) || !flipCurve.count(m) || !randCurve.count(m) || !ipCurve.count(m)) {
    return check(false, "budget " + fmt(m) + " or clean point missing from the eval outputs");
  }
  const auto [cleanCta, cleanPta] = flipCurve.at(0.0);
  const auto [flipCta, flipPta] = flipCurve.at(m);
  const double randPta = randCurve.at(m).second;
  const double ipPta = ipCurve.at(m).second;
  // A zero-PTA baseline makes the ratio vacuous, so FLIP must also beat it outright.
  const bool vsRandom = flipPta >= kRandomRatio * randPta && flipPta > randPta;
  const bool vsInner = flipPta >= kInnerProductRatio * ipPta && flipPta > ipPta;
  const bool stealthy = flipCta >= cleanCta - kCtaDrop;
  const bool inTime = d.seconds < kDeskSeconds;
  std::ostringstream os;
  os << "m=" << m << ": FLIP CTA/PTA " << fmt(flipCta) << "/" << fmt(flipPta) << ", clean CTA " << fmt(cleanCta)
     << ", random PTA " << fmt(randPta) << ", inner-product PTA " << fmt(ipPta) << "; need PTA >= " << kRandomRatio
     << "x random and >= " << kInnerProductRatio << "x inner-product, CTA drop <= " << kCtaDrop << "; "
     << fmt(d.seconds, 4) << " s (< " << kDeskSeconds << ")";
  return check(vsRandom && vsInner && stealthy && inTime, os.str());
}

Outcome optimization_sanity(const DeskRun& d) {
  if (!d.error.empty()) return check(false, "desk pipeline failed: " + d.error);
  std::map<int, std::vector<double>> byRun;
  for (const auto& r : read_csv(fs::path(d.cfg.outputDir) / "logits" / "l_param.csv")) {
    byRun[std::stoi(r.at(0))].push_back(std::stod(r.at(2)));
  }
  if (byRun.empty()) return check(false, "no L_param log");
  bool ok = true;
  std::ostringstream os;
  os << "first -> final pass mean L_param:";
  for (const auto& [run, passes] : byRun) {
    ok = ok && passes.size() >= 2 && passes.back() < passes.front();
    os << " run " << run << " " << fmt(passes.front()) << " -> " << fmt(passes.back()) << ";";
  }
  return check(ok, os.str());
}

Outcome full_scale_reproduction(const fs::path& root) {
  const char* dir = std::getenv("FLIP_CIFAR10_DIR");
  if (dir == nullptr || *dir == '\0') return {Outcome::skip, "set FLIP_CIFAR10_DIR to run the full-scale reproduction"};
  ExperimentConfig c = ExperimentConfig::paper();
  c.dataset.cifarDir = dir;
  c.outputDir = (root / "full").string();
  testing::run_all_stages(c, true);
  const auto curve = read_curve(fs::path(c.outputDir) / "eval" / "flip.csv");
  const double m = static_cast<double>(kFullScaleBudget);
  if (!curve.count(m)) return check(false, "budget 1000 missing from the eval outputs");
  const auto [ctaV, ptaV] = curve.at(m);
  return check(std::abs(ctaV - kFullScaleCta) <= kFullScaleCtaTolerance && std::abs(ptaV - kFullScalePta) <= kFullScalePtaTolerance,
               "CTA/PTA " + fmt(ctaV, 4) + "/" + fmt(ptaV, 4) + " against " + fmt(kFullScaleCta, 4) + "/" +
                   fmt(kFullScalePta, 4));
}

Outcome determinism(const fs::path& root, const DeskRun& d) {
  const ExperimentConfig a = testing::tiny_experiment((root / "tiny_a").string());
  const ExperimentConfig b = testing::tiny_experiment((root / "tiny_b").string());
  testing::run_all_stages(a, true);
  testing::run_all_stages(b, true);
  const bool pipelineStable = scan_manifest(a.outputDir) == scan_manifest(b.outputDir);

  // Rerun every stage in place and compare the manifest with the first run.
  const auto before = scan_manifest(a.outputDir);
  testing::run_all_stages(a, true);
  const bool rerunStable = scan_manifest(a.outputDir) == before;

  bool deskStable = d.error.empty();
  if (deskStable) {
    const auto deskBefore = scan_manifest(d.cfg.outputDir);
    RunOptions force;
    force.force = true;
    run_train_expert(d.cfg, force);
    run_select_flips(d.cfg, force);
    deskStable = scan_manifest(d.cfg.outputDir) == deskBefore;
  }
  return check(pipelineStable && rerunStable && deskStable,
               std::string("two tiny pipelines ") + (pipelineStable ? "identical" : "differ") + ", stage reruns " +
                   (rerunStable ? "identical" : "differ") + ", desk expert/select reruns " +
                   (deskStable ? "identical" : "differ"));
}

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IONBF, 0);
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "flip-acceptance";
  fs::create_directories(root);

  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Outcome::fail, std::string("error: ") + e.what()};
    }
    const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::skip ? "SKIP" : "FAIL";
    if (o.kind == Outcome::fail) ++failures;
    std::printf("%s %d %s: %s [%.1f s]\n", tag, id, name.c_str(), o.detail.c_str(), seconds_since(t0));
  };

  report(1, "gradient oracle", gradient_oracle);
  report(2, "L_param analytic points", l_param_points);
  report(3, "trigger bit-exactness", trigger_bytes);
  report(4, "selection oracle", selection_oracle);
  report(5, "softFLIP algebra", soft_algebra);
  std::printf("running the desk-scale pipeline in %s\n", root.string().c_str());
  const DeskRun desk = run_desk(root);
  report(6, "desk-scale efficacy", [&] { return desk_efficacy(desk); });
  report(7, "optimization sanity", [&] { return optimization_sanity(desk); });
  report(8, "full-scale reproduction", [&] { return full_scale_reproduction(root); });
  report(9, "determinism", [&] { return determinism(root, desk); });
  return failures == 0 ? 0 : 1;
}
