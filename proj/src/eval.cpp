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

#include "flip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace flip {

std::string to_string(PtaSubset s) { return s == PtaSubset::source_class ? "source-class" : "all-but-target"; }

PtaSubset pta_subset_from_string(const std::string& s) {
  if (s == "source-class") return PtaSubset::source_class;
  if (s == "all-but-target") return PtaSubset::all_but_target;
  throw ConfigError("unknown PTA subset rule '" + s + "'");
}

void EvalConfig::validate() const {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  train.validate();
}

ParamVector train_user(const LabeledDataset& clean, const LabelAssignment& labels, const ModelSpec& spec,
                       const TrainConfig& cfg) {
  if (clean.poison_count() != 0) throw ConfigError("user models train on clean images only");
  const Network net(spec);
  Matrix targets;
  if (const auto* hard = std::get_if<std::vector<int>>(&labels)) {
    if (hard->size() != clean.size()) throw ConfigError("label count does not match image count");
    targets = one_hot(*hard, spec.numClasses);
  } else {
    const auto& soft = std::get<SoftLabelTable>(labels);
    if (soft.rows.rows() != static_cast<Eigen::Index>(clean.size())) {
      throw ConfigError("soft label rows do not match image count");
    }
    targets = soft.rows;
  }
  return train_model(net, clean, targets, cfg, net.init_params(cfg.seed));
}

std::vector<int> predict(const Network& net, const ParamVector& params, const LabeledDataset& data,
                         const AugmentationConfig& norm) {
  std::vector<int> out(data.size());
  constexpr std::size_t kChunk = 512;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    idx.resize(std::min(kChunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Matrix logits = net.forward(params, assemble_batch(data, idx, norm));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c) {
        if (logits(r, c) > logits(r, best)) best = c;
      }
      out[start + static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
  }
  return out;
}

double cta(const Network& net, const ParamVector& params, const LabeledDataset& test, const AugmentationConfig& norm) {
  if (test.empty()) throw ConfigError("CTA needs a nonempty test set");
  const auto pred = predict(net, params, test, norm);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test.label(i) ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(test.size());
}

std::vector<std::size_t> pta_subset(const LabeledDataset& test, PtaSubset rule, int ySource, int yTarget) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int y = test.label(i);
    if (rule == PtaSubset::source_class ? y == ySource : y != yTarget) out.push_back(i);
  }
  return out;
}

double pta(const Network& net, const ParamVector& params, const LabeledDataset& test, const TriggerSpec& trigger,
           PtaSubset rule, int ySource, int yTarget, const AugmentationConfig& norm) {
  const auto subset = pta_subset(test, rule, ySource, yTarget);
  if (subset.empty()) throw ConfigError("PTA subset is empty");
  LabeledDataset triggered(test.shape(), test.num_classes());
  triggered.reserve(subset.size());
  for (std::size_t i : subset) triggered.add(apply_trigger(test.image(i), trigger), test.label(i));
  const auto pred = predict(net, params, triggered, norm);
  const auto hits = std::count(pred.begin(), pred.end(), yTarget);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(subset.size());
}

std::vector<double> trigger_pattern(const TriggerSpec& trigger, const ImageShape& shape) {
  const Image gray(shape, 0.5f);
  const Image t = apply_trigger(gray, trigger);
  std::vector<double> out(shape.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(t.pixels[i]) - 0.5;
  return out;
}

namespace {

std::vector<std::size_t> baseline_candidates(const LabeledDataset& clean, bool restrictToSource, int ySource,
                                             int yTarget) {
  if (yTarget < 0 || yTarget >= clean.num_classes()) throw ConfigError("target class outside class range");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const int y = clean.label(i);
    if (restrictToSource ? y == ySource : y != yTarget) out.push_back(i);
  }
  return out;
}

}  // namespace

FlipSet baseline_inner_product(const LabeledDataset& clean, const TriggerSpec& trigger, std::size_t m,
                               bool restrictToSource, int ySource, int yTarget) {
  const auto candidates = baseline_candidates(clean, restrictToSource, ySource, yTarget);
  const auto pattern = trigger_pattern(trigger, clean.shape());
  std::vector<double> score(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto px = clean.pixels(candidates[k]);
    double s = 0.0;
    for (std::size_t j = 0; j < px.size(); ++j) s += static_cast<double>(px[j]) * pattern[j];
    score[k] = s;
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(m, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) { return score[a] != score[b] ? score[a] > score[b] : a < b; });
  FlipSet out;
  out.budget = m;
  for (std::size_t k = 0; k < take; ++k) out.entries.push_back({candidates[order[k]], yTarget});
  return out;
}

FlipSet baseline_random(const LabeledDataset& clean, std::size_t m, std::uint64_t seed, bool restrictToSource,
                        int ySource, int yTarget) {
  auto candidates = baseline_candidates(clean, restrictToSource, ySource, yTarget);
  if (m > candidates.size()) {
    throw ConfigError("random baseline budget " + std::to_string(m) + " exceeds " +
                      std::to_string(candidates.size()) + " candidates");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(m);
  std::sort(candidates.begin(), candidates.end());
  FlipSet out;
  out.budget = m;
  for (std::size_t i : candidates) out.entries.push_back({i, yTarget});
  return out;
}

std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

std::uint64_t user_seed(std::uint64_t baseSeed, int repeat) {
  return derive_seed(baseSeed, "user", static_cast<std::uint64_t>(repeat));
}

EvalResult tradeoff_curve(const std::vector<EvalPoint>& points, const LabeledDataset& cleanTrain,
                          const LabeledDataset& test, const ModelSpec& spec, const EvalConfig& cfg,
                          const TriggerSpec& trigger, int ySource, int yTarget, std::uint64_t baseSeed, int jobs) {
  cfg.validate();
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a].value < points[b].value; });

  struct Job {
    std::size_t point;
    int repeat;
  };
  std::vector<Job> queue;
  for (std::size_t p : order) {
    for (int r = 0; r < cfg.repeats; ++r) queue.push_back({p, r});
  }
  std::vector<std::pair<double, double>> scores(queue.size());
  const Network net(spec);
  auto runJob = [&](const Job& job) {
    TrainConfig tc = cfg.train;
    tc.seed = user_seed(baseSeed, job.repeat);
    const ParamVector params = train_user(cleanTrain, points[job.point].labels, spec, tc);
    return std::make_pair(cta(net, params, test, tc.augmentation),
                          pta(net, params, test, trigger, cfg.ptaSubset, ySource, yTarget, tc.augmentation));
  };
  const std::size_t width = static_cast<std::size_t>(std::max(1, jobs));
  for (std::size_t start = 0; start < queue.size(); start += width) {
    std::vector<std::future<std::pair<double, double>>> running;
    for (std::size_t k = start; k < std::min(queue.size(), start + width); ++k) {
      running.push_back(std::async(width > 1 ? std::launch::async : std::launch::deferred,
                                   [&, k] { return runJob(queue[k]); }));
    }
    for (std::size_t k = 0; k < running.size(); ++k) scores[start + k] = running[k].get();
  }

  EvalResult result;
  std::size_t q = 0;
  for (std::size_t p : order) {
    std::vector<double> ctas, ptas;
    for (int r = 0; r < cfg.repeats; ++r, ++q) {
      ctas.push_back(scores[q].first);
      ptas.push_back(scores[q].second);
    }
    EvalRow row;
    row.point = points[p].value;
    std::tie(row.ctaMean, row.ctaStderr) = mean_stderr(ctas);
    std::tie(row.ptaMean, row.ptaStderr) = mean_stderr(ptas);
    row.repeats = cfg.repeats;
    row.seed0 = user_seed(baseSeed, 0);
    result.rows.push_back(row);
  }
  return result;
}

std::string eval_csv(const EvalResult& result) {
  std::ostringstream os;
  os << "point,cta_mean,cta_stderr,pta_mean,pta_stderr,repeats,seed0\n";
  os << std::fixed;
  for (const auto& r : result.rows) {
    os << std::setprecision(4) << r.point << ',' << r.ctaMean << ',' << r.ctaStderr << ',' << r.ptaMean << ','
       << r.ptaStderr << ',' << r.repeats << ',' << r.seed0 << '\n';
  }
  return os.str();
}

std::string tradeoff_svg(const std::vector<std::pair<std::string, EvalResult>>& series) {
  constexpr double kW = 640, kH = 480, kL = 70, kR = 160, kT = 30, kB = 60;
  double yMin = 100.0, yMax = 0.0;
  for (const auto& [name, res] : series) {
    for (const auto& r : res.rows) {
      yMin = std::min(yMin, r.ctaMean - r.ctaStderr);
      yMax = std::max(yMax, r.ctaMean + r.ctaStderr);
    }
  }
  if (yMin > yMax) {
    yMin = 0.0;
    yMax = 100.0;
  }
  yMin = std::floor(yMin - 1.0);
  yMax = std::ceil(yMax + 1.0);
  const auto px = [&](double pta) { return kL + (kW - kL - kR) * pta / 100.0; };
  const auto py = [&](double cta) { return kT + (kH - kT - kB) * (yMax - cta) / (yMax - yMin); };
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\"" << kH - kB
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 100; t += 20) {
    os << "<text x=\"" << px(t) << "\" y=\"" << kH - kB + 18 << "\" font-size=\"11\" text-anchor=\"middle\">" << t
       << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = yMin + (yMax - yMin) * t / 4.0;
    os << "<text x=\"" << kL - 6 << "\" y=\"" << py(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
       << "</text>\n";
  }
  os << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 15 << "\" font-size=\"13\" text-anchor=\"middle\">PTA (%)</text>\n";
  os << "<text x=\"18\" y=\"" << (kT + kH - kB) / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << (kT + kH - kB) / 2 << ")\">CTA (%)</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 6];
    const auto& rows = series[s].second.rows;
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto& r : rows) os << px(r.ptaMean) << ',' << py(r.ctaMean) << ' ';
    os << "\"/>\n";
    for (const auto& r : rows) {
      const double x = px(r.ptaMean), y = py(r.ctaMean);
      os << "<line x1=\"" << px(r.ptaMean - r.ptaStderr) << "\" y1=\"" << y << "\" x2=\"" << px(r.ptaMean + r.ptaStderr)
         << "\" y2=\"" << y << "\" stroke=\"" << color << "\"/>\n";
      os << "<line x1=\"" << x << "\" y1=\"" << py(r.ctaMean - r.ctaStderr) << "\" x2=\"" << x << "\" y2=\""
         << py(r.ctaMean + r.ctaStderr) << "\" stroke=\"" << color << "\"/>\n";
      os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    os << "<text x=\"" << kW - kR + 12 << "\" y=\"" << kT + 18 * (s + 1) << "\" font-size=\"12\" fill=\"" << color
       << "\">" << series[s].first << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace flip
