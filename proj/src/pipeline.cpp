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

#include "flip/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "flip/json_io.hpp"

namespace flip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

json train_json(const TrainConfig& t) {
  json j = t;
  j.erase("seed");  // stage seeds come from the global seed
  return j;
}

std::ostream& log(const RunOptions& opts) {
  static std::ostream null(nullptr);
  return opts.log ? *opts.log : null;
}

fs::path out_dir(const ExperimentConfig& cfg) { return fs::path(cfg.outputDir); }

std::string expert_path(const ExperimentConfig& cfg, int i) {
  return (out_dir(cfg) / "experts" / ("expert_" + std::to_string(i) + ".traj")).string();
}

std::string run_path(const ExperimentConfig& cfg, int r) {
  return (out_dir(cfg) / "logits" / ("run_" + std::to_string(r) + ".logits")).string();
}

std::string hash_comment(std::uint64_t h) { return "# config_hash=" + hex64(h) + "\n"; }

/// Clears the stage directory, or refuses when it already holds outputs.
void prepare_stage_dir(const ExperimentConfig& cfg, const std::string& sub, const RunOptions& opts) {
  const fs::path dir = out_dir(cfg) / sub;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!opts.force) throw Error(dir.string() + " already holds outputs; rerun with --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  write_file_atomic((out_dir(cfg) / "config.json").string(), [&] {
    json j = cfg;
    j.erase("output_dir");
    return j.dump(2) + "\n";
  }());
}

void require_experts(const ExperimentConfig& cfg) {
  const std::uint64_t want = stage_hash(cfg, Stage::train_expert);
  for (int i = 0; i < cfg.experts; ++i) {
    const std::string p = expert_path(cfg, i);
    if (!fs::exists(p)) throw StageError("missing expert trajectories for config " + hex64(want));
    const std::uint64_t got = peek_trajectory_config_hash(p);
    if (got != want) {
      throw StageError("hash mismatch: " + p + " was produced by config " + hex64(got) + ", expected " + hex64(want));
    }
  }
}

std::vector<LogitTable> require_logits(const ExperimentConfig& cfg, std::size_t cleanRows) {
  const std::uint64_t want = stage_hash(cfg, Stage::optimize_labels);
  std::vector<LogitTable> tables;
  for (int r = 0; r < cfg.flip.runs; ++r) {
    const std::string p = run_path(cfg, r);
    if (!fs::exists(p)) throw StageError("missing logit tables for config " + hex64(want));
    LogitFileHeader h;
    LogitTable t = load_logits(p, &h);
    if (h.configHash != want) {
      throw StageError("hash mismatch: " + p + " was produced by config " + hex64(h.configHash) + ", expected " +
                       hex64(want));
    }
    if (t.rows() < cleanRows) throw StageError(p + " has fewer rows than the clean dataset");
    t.logits.conservativeResize(static_cast<Eigen::Index>(cleanRows), t.logits.cols());
    tables.push_back(std::move(t));
  }
  return tables;
}

std::vector<ExpertTrajectory> load_experts(const ExperimentConfig& cfg, const LabeledDataset& poisoned,
                                           const RunOptions& opts) {
  require_experts(cfg);
  std::vector<ExpertTrajectory> out;
  TrajectoryLoadOptions lo;
  lo.expectedSpec = &cfg.model;
  lo.expectedFingerprint = poisoned.fingerprint();
  for (int i = 0; i < cfg.experts; ++i) {
    LoadedTrajectory lt = load_trajectory(expert_path(cfg, i), lo);
    for (const auto& w : lt.warnings) log(opts) << "warning: " << w << "\n";
    out.push_back(std::move(lt.trajectory));
  }
  return out;
}

void write_eval(const fs::path& dir, const std::string& name, const EvalResult& res, std::uint64_t hash) {
  write_file_atomic((dir / (name + ".csv")).string(), hash_comment(hash) + eval_csv(res));
}

}  // namespace

std::string to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

Profile profile_from_string(const std::string& s) {
  if (s == "desk") return Profile::desk;
  if (s == "paper") return Profile::paper;
  throw ConfigError("unknown profile '" + s + "' (expected desk or paper)");
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::train_expert: return "train-expert";
    case Stage::optimize_labels: return "optimize-labels";
    case Stage::select_flips: return "select-flips";
    case Stage::evaluate: return "evaluate";
  }
  return "unknown";
}

void DatasetConfig::validate() const {
  if (kind != "synthetic" && kind != "cifar10") throw ConfigError("dataset kind must be synthetic or cifar10");
  if (kind == "cifar10" && cifarDir.empty()) throw ConfigError("cifar10 dataset needs cifar_dir");
  if (kind == "synthetic" && (trainSize == 0 || testSize == 0)) {
    throw ConfigError("synthetic dataset sizes must be positive");
  }
  if (numClasses < 2) throw ConfigError("need at least two classes");
  if (side < 4) throw ConfigError("image side must be at least 4");
  if (!(noiseStd >= 0.0)) throw ConfigError("noise_std must be non-negative");
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.model.arch = Architecture::small_cnn;
  c.model.input = {3, 32, 32};
  c.model.widths = {8, 16};
  c.model.numClasses = 10;
  c.experts = 1;
  c.expert.epochs = 2;
  c.expert.batchSize = 64;
  c.expert.optimizer.lr = 0.05;
  c.expert.lrMilestones = {};
  c.expert.checkpointStride = 10;
  c.flip.passes = 25;
  c.flip.studentLr = 0.05;
  c.flip.labelLr = 10.0;
  c.flip.batchSize = 64;
  c.flip.runs = 3;
  c.selection.budgets = {0, 160};
  c.softAlphas = {};
  c.eval.repeats = 1;
  c.eval.train = c.expert;
  c.eval.train.epochs = 20;
  c.eval.train.lrMilestones = {15};
  c.eval.train.optimizer.lr = 0.02;
  return c;
}

ExperimentConfig ExperimentConfig::paper() {
  ExperimentConfig c;
  c.dataset.kind = "cifar10";
  c.dataset.cifarDir = "cifar-10-batches-bin";
  c.dataset.trainSize = 0;
  c.dataset.testSize = 0;
  c.model.arch = Architecture::resnet_like;
  c.model.input = {3, 32, 32};
  c.model.widths = {16, 32, 64};
  c.model.blocksPerStage = 5;
  c.model.numClasses = 10;
  c.experts = 50;
  c.expert.epochs = 20;
  c.expert.batchSize = 256;
  c.expert.optimizer.lr = 0.1;
  c.expert.lrMilestones = {75, 150};
  c.expert.checkpointStride = 50;
  c.flip.passes = 25;
  c.flip.studentLr = 0.1;
  c.flip.labelLr = 10.0;
  c.flip.batchSize = 256;
  c.flip.runs = 1;
  c.selection.budgets = {0, 150, 300, 500, 1000, 1500};
  c.softAlphas = {0.4, 0.6, 0.8, 0.9, 1.0};
  c.eval.repeats = 10;
  c.eval.train = c.expert;
  c.eval.train.epochs = 200;
  return c;
}

ExperimentConfig ExperimentConfig::for_profile(Profile p) { return p == Profile::desk ? desk() : paper(); }

void ExperimentConfig::validate() const {
  dataset.validate();
  trigger.validate(model.input);
  model.validate();
  if (model.numClasses != dataset.numClasses) throw ConfigError("model and dataset disagree on the class count");
  if (dataset.kind == "synthetic" && !(model.input == ImageShape{3, dataset.side, dataset.side})) {
    throw ConfigError("model input shape does not match the synthetic image shape");
  }
  if (ySource < 0 || ySource >= model.numClasses || yTarget < 0 || yTarget >= model.numClasses) {
    throw ConfigError("y_source and y_target must be valid class indices");
  }
  if (ySource == yTarget) throw ConfigError("y_source and y_target must differ");
  if (experts < 1) throw ConfigError("need at least one expert");
  expert.validate();
  flip.validate();
  for (double a : softAlphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("soft_alphas must lie in [0, 1]");
  }
  eval.validate();
  if (outputDir.empty()) throw ConfigError("output_dir must not be empty");
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"dataset",
            {{"kind", c.dataset.kind},
             {"cifar_dir", c.dataset.cifarDir},
             {"train_size", c.dataset.trainSize},
             {"test_size", c.dataset.testSize},
             {"num_classes", c.dataset.numClasses},
             {"side", c.dataset.side},
             {"noise_std", c.dataset.noiseStd}}},
           {"trigger", c.trigger},
           {"y_source", c.ySource},
           {"y_target", c.yTarget},
           {"model", c.model},
           {"expert", {{"count", c.experts}, {"train", train_json(c.expert)}}},
           {"flip",
            {{"passes", c.flip.passes},
             {"student_lr", c.flip.studentLr},
             {"label_lr", c.flip.labelLr},
             {"temperature", c.flip.temperature},
             {"l1_weight", c.flip.l1Weight},
             {"batch_size", c.flip.batchSize},
             {"runs", c.flip.runs}}},
           {"selection", {{"strategy", to_string(c.selection.strategy)}, {"budgets", c.selection.budgets}}},
           {"soft_alphas", c.softAlphas},
           {"eval",
            {{"repeats", c.eval.repeats}, {"pta_subset", to_string(c.eval.ptaSubset)}, {"train", train_json(c.eval.train)}}},
           {"baselines_from_source", c.baselinesFromSource},
           {"seed", c.seed},
           {"output_dir", c.outputDir}};
}

void from_json(const json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    read_opt(d, "kind", c.dataset.kind);
    read_opt(d, "cifar_dir", c.dataset.cifarDir);
    read_opt(d, "train_size", c.dataset.trainSize);
    read_opt(d, "test_size", c.dataset.testSize);
    read_opt(d, "num_classes", c.dataset.numClasses);
    read_opt(d, "side", c.dataset.side);
    read_opt(d, "noise_std", c.dataset.noiseStd);
  }
  read_opt(j, "trigger", c.trigger);
  read_opt(j, "y_source", c.ySource);
  read_opt(j, "y_target", c.yTarget);
  read_opt(j, "model", c.model);
  if (j.contains("expert")) {
    read_opt(j.at("expert"), "count", c.experts);
    read_opt(j.at("expert"), "train", c.expert);
  }
  if (j.contains("flip")) {
    const json& f = j.at("flip");
    read_opt(f, "passes", c.flip.passes);
    read_opt(f, "student_lr", c.flip.studentLr);
    read_opt(f, "label_lr", c.flip.labelLr);
    read_opt(f, "temperature", c.flip.temperature);
    read_opt(f, "l1_weight", c.flip.l1Weight);
    read_opt(f, "batch_size", c.flip.batchSize);
    read_opt(f, "runs", c.flip.runs);
  }
  if (j.contains("selection")) {
    const json& s = j.at("selection");
    if (s.contains("strategy")) c.selection.strategy = selection_from_string(s.at("strategy").get<std::string>());
    read_opt(s, "budgets", c.selection.budgets);
  }
  read_opt(j, "soft_alphas", c.softAlphas);
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    read_opt(e, "repeats", c.eval.repeats);
    if (e.contains("pta_subset")) c.eval.ptaSubset = pta_subset_from_string(e.at("pta_subset").get<std::string>());
    read_opt(e, "train", c.eval.train);
  }
  read_opt(j, "baselines_from_source", c.baselinesFromSource);
  read_opt(j, "seed", c.seed);
  read_opt(j, "output_dir", c.outputDir);
}

ExperimentConfig load_experiment_config(const std::string& path, Profile profile) {
  ExperimentConfig cfg = ExperimentConfig::for_profile(profile);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    const json j = json::parse(in);
    from_json(j, cfg);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

std::uint64_t stage_hash(const ExperimentConfig& cfg, Stage stage) {
  const json full = cfg;
  std::vector<const char*> keys{"dataset", "trigger", "y_source", "y_target", "model", "expert", "seed"};
  if (stage >= Stage::optimize_labels) keys.push_back("flip");
  if (stage >= Stage::select_flips) {
    keys.push_back("selection");
    keys.push_back("soft_alphas");
  }
  if (stage >= Stage::evaluate) {
    keys.push_back("eval");
    keys.push_back("baselines_from_source");
  }
  json part = json::object();
  for (const char* k : keys) part[k] = full.at(k);
  return fnv1a64(part.dump());
}

std::uint64_t stage_seed(const ExperimentConfig& cfg, std::string_view name, std::uint64_t index) {
  return derive_seed(cfg.seed, name, index);
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  if (cfg.dataset.kind == "synthetic") {
    SyntheticSpec s;
    s.numClasses = cfg.dataset.numClasses;
    s.side = cfg.dataset.side;
    s.noiseStd = cfg.dataset.noiseStd;
    s.prototypeSeed = stage_seed(cfg, "dataset-prototypes");
    s.seed = stage_seed(cfg, "dataset-train");
    s.n = cfg.dataset.trainSize;
    d.train = make_synthetic(s);
    s.seed = stage_seed(cfg, "dataset-test");
    s.n = cfg.dataset.testSize;
    d.test = make_synthetic(s);
  } else {
    auto prefix = [](const LabeledDataset& full, std::size_t n) {
      if (n == 0 || n >= full.size()) return full;
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      return full.subset(idx);
    };
    d.train = prefix(load_cifar10(cfg.dataset.cifarDir, CifarSplit::train), cfg.dataset.trainSize);
    d.test = prefix(load_cifar10(cfg.dataset.cifarDir, CifarSplit::test), cfg.dataset.testSize);
  }
  if (!(d.train.shape() == cfg.model.input)) throw ConfigError("model input shape does not match the dataset");
  d.poisoned = build_poisoned_dataset(d.train, cfg.ySource, cfg.yTarget, cfg.trigger);
  return d;
}

std::string flipset_name(std::size_t m) { return "flips_m" + std::to_string(m) + ".csv"; }

std::string soft_name(double alpha) {
  std::ostringstream os;
  os << "soft_a" << std::fixed << std::setprecision(2) << alpha << ".logits";
  return os.str();
}

void run_train_expert(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  prepare_stage_dir(cfg, "experts", opts);
  const ExperimentData data = load_experiment_data(cfg);
  TrainConfig tc = cfg.expert;
  tc.seed = stage_seed(cfg, "train-expert");
  log(opts) << "training " << cfg.experts << " expert(s) on " << data.poisoned.size() << " images ("
            << data.poisoned.poison_count() << " poisoned)\n";
  auto experts = train_experts(data.poisoned, cfg.model, tc, cfg.experts, opts.jobs);
  const std::uint64_t h = stage_hash(cfg, Stage::train_expert);
  for (std::size_t i = 0; i < experts.size(); ++i) {
    experts[i].configHash = h;
    save_trajectory(experts[i], expert_path(cfg, static_cast<int>(i)));
  }
}

void run_optimize_labels(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const ExperimentData data = load_experiment_data(cfg);
  const auto experts = load_experts(cfg, data.poisoned, opts);
  prepare_stage_dir(cfg, "logits", opts);
  FlipOptConfig fc = cfg.flip;
  fc.seed = stage_seed(cfg, "optimize-labels");
  log(opts) << "optimizing labels: " << fc.runs << " run(s) x " << fc.passes << " pass(es)\n";
  const auto runs = run_flip_runs(experts, data.poisoned, fc, opts.jobs);
  const std::uint64_t h = stage_hash(cfg, Stage::optimize_labels);
  std::ostringstream csv;
  csv << hash_comment(h) << "run,pass,mean_l_param\n" << std::setprecision(17);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    LogitFileHeader header{h, run_seed(fc.seed, static_cast<int>(r))};
    save_logits(runs[r].logits, header, run_path(cfg, static_cast<int>(r)));
    for (std::size_t p = 0; p < runs[r].passMeanLParam.size(); ++p) {
      csv << r << ',' << p << ',' << runs[r].passMeanLParam[p] << '\n';
    }
    log(opts) << "run " << r << ": " << runs[r].steps << " steps, " << runs[r].skippedSteps
              << " degenerate steps skipped\n";
  }
  write_file_atomic((out_dir(cfg) / "logits" / "l_param.csv").string(), csv.str());
}

void run_select_flips(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  require_experts(cfg);
  const ExperimentData data = load_experiment_data(cfg);
  const auto tables = require_logits(cfg, data.train.size());
  prepare_stage_dir(cfg, "flips", opts);
  prepare_stage_dir(cfg, "soft", opts);
  const std::uint64_t h = stage_hash(cfg, Stage::select_flips);
  const ScoreTable scores = aggregate_runs(tables, data.train.labels());
  for (std::size_t m : cfg.selection.budgets) {
    const FlipSet fsel = select_flips(scores, m, cfg.selection.strategy, stage_seed(cfg, "select-flips", m));
    save_flipset(fsel, h, (out_dir(cfg) / "flips" / flipset_name(m)).string());
    log(opts) << "budget " << m << ": " << fsel.size() << " flips\n";
  }
  for (double a : cfg.softAlphas) {
    const SoftLabelTable soft = soft_flip(tables, data.train.labels(), a);
    save_logits(LogitTable{soft.rows}, LogitFileHeader{h, 0}, (out_dir(cfg) / "soft" / soft_name(a)).string());
  }
}

void run_evaluate(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  require_experts(cfg);
  const ExperimentData data = load_experiment_data(cfg);
  (void)require_logits(cfg, data.train.size());
  const std::uint64_t selHash = stage_hash(cfg, Stage::select_flips);
  const auto& labels = data.train.labels();

  std::vector<EvalPoint> flipPoints, softPoints, randomPoints, innerPoints;
  for (std::size_t m : cfg.selection.budgets) {
    const std::string p = (out_dir(cfg) / "flips" / flipset_name(m)).string();
    if (!fs::exists(p)) throw StageError("missing flip sets for config " + hex64(selHash));
    std::uint64_t got = 0;
    const FlipSet fsel = load_flipset(p, &got);
    if (got != selHash) {
      throw StageError("refusing mixed-hash inputs: " + p + " was produced by config " + hex64(got) +
                       ", expected " + hex64(selHash));
    }
    const auto md = static_cast<double>(m);
    flipPoints.push_back({md, apply_flips(labels, fsel)});
    if (m == 0) continue;
    randomPoints.push_back({md, apply_flips(labels, baseline_random(data.train, m, stage_seed(cfg, "baseline-random", m),
                                                                     cfg.baselinesFromSource, cfg.ySource, cfg.yTarget))});
    innerPoints.push_back({md, apply_flips(labels, baseline_inner_product(data.train, cfg.trigger, m,
                                                                          cfg.baselinesFromSource, cfg.ySource,
                                                                          cfg.yTarget))});
  }
  for (double a : cfg.softAlphas) {
    const std::string p = (out_dir(cfg) / "soft" / soft_name(a)).string();
    if (!fs::exists(p)) throw StageError("missing soft label tables for config " + hex64(selHash));
    LogitFileHeader header;
    LogitTable t = load_logits(p, &header);
    if (header.configHash != selHash) {
      throw StageError("refusing mixed-hash inputs: " + p + " was produced by config " + hex64(header.configHash) +
                       ", expected " + hex64(selHash));
    }
    // Stored in single precision; restore exact row sums.
    for (Eigen::Index r = 0; r < t.logits.rows(); ++r) t.logits.row(r) /= t.logits.row(r).sum();
    softPoints.push_back({a, SoftLabelTable{t.logits}});
  }

  prepare_stage_dir(cfg, "eval", opts);
  const std::uint64_t h = stage_hash(cfg, Stage::evaluate);
  const std::uint64_t base = stage_seed(cfg, "evaluate");
  const fs::path dir = out_dir(cfg) / "eval";
  std::vector<std::pair<std::string, EvalResult>> series;
  auto run = [&](const std::string& name, const std::vector<EvalPoint>& pts) {
    if (pts.empty()) return;
    log(opts) << "evaluating " << name << " (" << pts.size() << " point(s) x " << cfg.eval.repeats << " repeat(s))\n";
    EvalResult res = tradeoff_curve(pts, data.train, data.test, cfg.model, cfg.eval, cfg.trigger, cfg.ySource,
                                    cfg.yTarget, base, opts.jobs);
    write_eval(dir, name, res, h);
    series.emplace_back(name, std::move(res));
  };
  run("flip", flipPoints);
  run("softflip", softPoints);
  run("baseline_random", randomPoints);
  run("baseline_inner_product", innerPoints);
  std::string svg = tradeoff_svg(series);
  const auto nl = svg.find('\n');
  svg.insert(nl == std::string::npos ? svg.size() : nl + 1, "<!-- config_hash=" + hex64(h) + " -->\n");
  write_file_atomic((dir / "tradeoff.svg").string(), svg);
}

void run_stage(const ExperimentConfig& cfg, Stage stage, const RunOptions& opts) {
  switch (stage) {
    case Stage::train_expert: run_train_expert(cfg, opts); break;
    case Stage::optimize_labels: run_optimize_labels(cfg, opts); break;
    case Stage::select_flips: run_select_flips(cfg, opts); break;
    case Stage::evaluate: run_evaluate(cfg, opts); break;
  }
}

std::vector<ManifestEntry> scan_manifest(const fs::path& dir) {
  std::vector<ManifestEntry> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    const auto bytes = read_file(e.path().string());
    out.push_back({rel, bytes.size(), fnv1a64(std::string_view(bytes.data(), bytes.size()))});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

std::string manifest_json(const std::vector<ManifestEntry>& entries) {
  json files = json::array();
  for (const auto& e : entries) files.push_back({{"path", e.path}, {"size", e.size}, {"fnv1a64", hex64(e.hash)}});
  return json{{"files", files}}.dump(2) + "\n";
}

void write_manifest(const fs::path& dir) {
  write_file_atomic((dir / "manifest.json").string(), manifest_json(scan_manifest(dir)));
}

}  // namespace flip
