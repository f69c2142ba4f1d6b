// SPDX-License-Identifier: Apache-2.0
#include "xmlc/ensemble.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "xmlc/binary_io.hpp"
#include "xmlc/error.hpp"
#include "xmlc/featurize.hpp"
#include "xmlc/rng.hpp"
#include "xmlc/svm_solver.hpp"

namespace xmlc {

namespace {

constexpr std::string_view kMagic = "XENS";
constexpr std::uint32_t kVersion = 1;

bool contains_sorted(std::span<const LabelId> sorted, LabelId l) {
  return std::binary_search(sorted.begin(), sorted.end(), l);
}

}  // namespace

std::string to_string(BaseModel m) {
  switch (m) {
    case BaseModel::svm: return "svm";
    case BaseModel::knn: return "knn";
    case BaseModel::decoder: return "decoder";
  }
  return "?";
}

std::string to_string(Normalization n) { return n == Normalization::batch ? "batch" : "stored"; }

Normalization parse_normalization(std::string_view s) {
  if (s == "batch") return Normalization::batch;
  if (s == "stored") return Normalization::stored;
  throw Error("unknown normalization '" + std::string(s) + "' (expected batch or stored)");
}

double mean_predicted(std::span<const LabelScores> scores, double threshold) {
  if (scores.empty()) return 0.0;
  std::size_t count = 0;
  for (const auto &article : scores) {
    for (const auto &s : article) count += s.score > threshold ? 1 : 0;
  }
  return static_cast<double>(count) / static_cast<double>(scores.size());
}

ThresholdCalibration calibrate_threshold(std::span<const LabelScores> scores, double initial, double low,
                                         double high) {
  ThresholdCalibration out;
  out.threshold = initial;
  out.mean_predicted = mean_predicted(scores, initial);
  if (out.mean_predicted >= low && out.mean_predicted <= high) {
    out.reached = true;
    return out;
  }
  std::vector<double> all;
  for (const auto &article : scores) {
    for (const auto &s : article) all.push_back(s.score);
  }
  if (all.empty() || scores.empty()) return out;
  std::sort(all.begin(), all.end());
  std::vector<double> distinct = all;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  const double n = static_cast<double>(scores.size());
  // Candidate k = 0 sits just under the smallest score; k >= 1 is distinct[k - 1].
  auto threshold_at = [&](std::size_t k) {
    return k == 0 ? std::nextafter(distinct.front(), -std::numeric_limits<double>::infinity()) : distinct[k - 1];
  };
  auto mean_at = [&](std::size_t k) {
    const double t = threshold_at(k);
    const auto above = all.end() - std::upper_bound(all.begin(), all.end(), t);
    return static_cast<double>(above) / n;
  };

  if (mean_at(0) < low) {
    out.threshold = threshold_at(0);
    out.mean_predicted = mean_at(0);
    out.reached = false;
    return out;
  }
  // Largest k with mean_at(k) >= low; mean_at is non-increasing in k.
  std::size_t lo = 0, hi = distinct.size();
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    if (mean_at(mid) >= low) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  out.threshold = threshold_at(lo);
  out.mean_predicted = mean_at(lo);
  out.reached = out.mean_predicted <= high;
  return out;
}

CandidateCalibration calibrate_candidate_thresholds(std::span<const ModelScores> scores,
                                                    std::span<const std::vector<LabelId>> gold,
                                                    const ModelThresholds &initial, const EnsembleConfig &cfg) {
  if (scores.size() != gold.size()) throw Error("calibration: scores and gold differ in length");
  if (scores.empty()) throw Error("calibration needs at least one article");
  CandidateCalibration out;
  std::size_t gold_total = 0;
  for (const auto &g : gold) gold_total += g.size();
  out.mean_gold = static_cast<double>(gold_total) / static_cast<double>(gold.size());
  const double low = cfg.calibration_low * out.mean_gold;
  const double high = cfg.calibration_high * out.mean_gold;
  for (std::size_t m = 0; m < kNumBaseModels; ++m) {
    std::vector<LabelScores> per_model;
    per_model.reserve(scores.size());
    for (const auto &s : scores) per_model.push_back(s[m]);
    const auto cal = calibrate_threshold(per_model, initial[m], low, high);
    out.thresholds[m] = cal.threshold;
    out.mean_predicted[m] = cal.mean_predicted;
    out.reached[m] = cal.reached;
    if (!cal.reached) {
      spdlog::warn("{}: mean predicted labels {:.3f} outside the calibration window [{:.3f}, {:.3f}]",
                   to_string(static_cast<BaseModel>(m)), cal.mean_predicted, low, high);
    }
  }
  return out;
}

std::vector<LabelId> candidates(const ModelScores &scores, const ModelThresholds &thresholds) {
  std::vector<LabelId> out;
  for (std::size_t m = 0; m < kNumBaseModels; ++m) {
    for (const auto &s : scores[m]) {
      if (s.score > thresholds[m]) out.push_back(s.label);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::array<ScoreRange, kNumBaseModels> candidate_score_ranges(std::span<const ModelScores> scores,
                                                              const ModelThresholds &thresholds) {
  std::array<ScoreRange, kNumBaseModels> ranges{};
  std::array<bool, kNumBaseModels> seen{};
  for (const auto &article : scores) {
    for (std::size_t m = 0; m < kNumBaseModels; ++m) {
      for (const auto &s : article[m]) {
        if (!(s.score > thresholds[m])) continue;
        if (!seen[m]) {
          ranges[m] = {s.score, s.score};
          seen[m] = true;
        } else {
          ranges[m].min = std::min(ranges[m].min, s.score);
          ranges[m].max = std::max(ranges[m].max, s.score);
        }
      }
    }
  }
  return ranges;
}

double normalize_score(double raw, const ScoreRange &range) {
  if (!(range.max > range.min)) return 0.5;
  return std::clamp((raw - range.min) / (range.max - range.min), 0.0, 1.0);
}

LabelScores normalize_scores(const LabelScores &raw, const ScoreRange &range) {
  LabelScores out = raw;
  for (auto &s : out) s.score = normalize_score(s.score, range);
  return out;
}

RankFeatures build_features(double s_svm, double s_knn, double s_dec) {
  return {s_svm, s_knn, s_dec, s_svm * s_knn, s_svm * s_dec, s_knn * s_dec, s_svm * s_knn * s_dec};
}

std::vector<std::vector<Candidate>> build_candidate_features(std::span<const ModelScores> scores,
                                                             const ModelThresholds &thresholds,
                                                             const std::array<ScoreRange, kNumBaseModels> &ranges,
                                                             Execution exec) {
  std::vector<std::vector<Candidate>> out(scores.size());
  for_each_index(
      scores.size(),
      [&](std::size_t i) {
        for (LabelId l : candidates(scores[i], thresholds)) {
          std::array<double, kNumBaseModels> s{};
          for (std::size_t m = 0; m < kNumBaseModels; ++m) {
            const auto raw = find_score(scores[i][m], l);
            s[m] = raw && *raw > thresholds[m] ? normalize_score(*raw, ranges[m]) : 0.0;
          }
          out[i].push_back({l, build_features(s[0], s[1], s[2])});
        }
      },
      exec);
  return out;
}

double RankModel::score(const RankFeatures &f) const {
  double s = 0.0;
  for (std::size_t k = 0; k < kNumRankFeatures; ++k) s += weights[k] * (f[k] - center[k]);
  return s;
}

std::vector<std::vector<Candidate>> RankModel::features(std::span<const ModelScores> scores, Execution exec) const {
  const auto batch_ranges =
      normalization == Normalization::batch ? candidate_score_ranges(scores, candidate_thresholds) : ranges;
  return build_candidate_features(scores, candidate_thresholds, batch_ranges, exec);
}

RankModel train_rank(std::span<const std::vector<Candidate>> cands, std::span<const std::vector<LabelId>> gold,
                     const EnsembleConfig &cfg, RankTrainingStats *stats) {
  if (cands.size() != gold.size()) throw Error("train_rank: candidates and gold differ in length");
  if (!(cfg.C > 0.0)) throw Error("ensemble C must be positive");

  RankModel model;
  model.C = cfg.C;
  model.threshold = cfg.decision_threshold;
  model.normalization = cfg.normalization;

  std::size_t total = 0;
  for (const auto &article : cands) {
    for (const auto &c : article) {
      for (std::size_t k = 0; k < kNumRankFeatures; ++k) model.center[k] += c.features[k];
    }
    total += article.size();
  }
  if (cfg.center_features && total > 0) {
    for (auto &c : model.center) c /= static_cast<double>(total);
  } else {
    model.center.fill(0.0);
  }

  std::vector<SparseVector> rows;
  RankTrainingStats st;
  for (std::size_t a = 0; a < cands.size(); ++a) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t c = 0; c < cands[a].size(); ++c) {
      (contains_sorted(gold[a], cands[a][c].label) ? pos : neg).push_back(c);
    }
    const std::size_t n_pairs = pos.size() * neg.size();
    if (n_pairs == 0) continue;
    std::vector<std::size_t> picked(n_pairs);
    std::iota(picked.begin(), picked.end(), 0);
    if (n_pairs > cfg.max_pairs_per_article) {
      Rng rng(mix_seed(cfg.seed, a));
      rng.shuffle(std::span(picked));
      picked.resize(cfg.max_pairs_per_article);
      std::sort(picked.begin(), picked.end());
    }
    for (std::size_t p : picked) {
      const auto &fp = cands[a][pos[p / neg.size()]].features;
      const auto &fn = cands[a][neg[p % neg.size()]].features;
      std::vector<std::pair<std::uint32_t, double>> diff;
      for (std::uint32_t k = 0; k < kNumRankFeatures; ++k) diff.emplace_back(k, fp[k] - fn[k]);
      rows.push_back(SparseVector::from_pairs(std::move(diff)));
    }
    ++st.articles_with_pairs;
  }
  st.pairs = rows.size();
  if (!rows.empty()) {
    const std::vector<double> y(rows.size(), 1.0);
    DualCdOptions opt;
    opt.C = cfg.C;
    opt.fit_bias = false;
    opt.seed = cfg.seed;
    opt.max_iterations = cfg.max_iterations;
    opt.tolerance = cfg.tolerance;
    const auto res = solve_squared_hinge(rows, y, kNumRankFeatures, opt);
    std::copy(res.w.begin(), res.w.end(), model.weights.begin());
    st.epochs = res.epochs;
    st.converged = res.converged;
  } else {
    spdlog::warn("rank training found no (relevant, irrelevant) candidate pairs; weights stay zero");
  }
  for (double w : model.weights) {
    if (!std::isfinite(w)) throw Error("rank training produced a non-finite weight");
  }
  if (stats != nullptr) *stats = st;
  return model;
}

ThresholdSearch tune_threshold(std::span<const std::vector<LabelScore>> scored,
                               std::span<const std::vector<LabelId>> gold, double lo, double hi,
                               std::size_t steps) {
  if (scored.empty()) throw Error("threshold tuning needs a nonempty dev set");
  if (scored.size() != gold.size()) throw Error("threshold tuning: scores and gold differ in length");
  if (steps == 0 || !(hi >= lo)) throw Error("threshold tuning needs steps >= 1 and lo <= hi");

  std::vector<std::pair<double, bool>> items;
  std::size_t gold_total = 0;
  for (std::size_t a = 0; a < scored.size(); ++a) {
    gold_total += gold[a].size();
    for (const auto &s : scored[a]) items.emplace_back(s.score, contains_sorted(gold[a], s.label));
  }
  ThresholdSearch out;
  out.threshold = lo;
  out.micro_f1 = -1.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t =
        steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(steps - 1);
    std::size_t tp = 0, predicted = 0;
    for (const auto &[s, relevant] : items) {
      if (s > t) {
        ++predicted;
        tp += relevant ? 1 : 0;
      }
    }
    const double p = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    const double r = gold_total == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(gold_total);
    const double f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    out.grid_f1.push_back(f1);
    if (f1 > out.micro_f1) {
      out.micro_f1 = f1;
      out.threshold = t;
    }
  }
  return out;
}

std::vector<LabelScores> rank_scores(const RankModel &model, std::span<const std::vector<Candidate>> cands) {
  std::vector<LabelScores> out(cands.size());
  for (std::size_t a = 0; a < cands.size(); ++a) {
    for (const auto &c : cands[a]) out[a].push_back({c.label, model.score(c.features)});
  }
  return out;
}

std::vector<LabelId> predict_ensemble(const RankModel &model, std::span<const Candidate> cands) {
  std::vector<LabelId> out;
  for (const auto &c : cands) {
    if (model.score(c.features) > model.threshold) out.push_back(c.label);
  }
  return out;
}

void RankModel::save(const std::filesystem::path &path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  BinaryWriter w(out);
  w.header(kMagic, kVersion);
  w.f64s(weights);
  w.f64s(center);
  w.f64(threshold);
  w.f64(C);
  w.f64s(candidate_thresholds);
  for (const auto &r : ranges) {
    w.f64(r.min);
    w.f64(r.max);
  }
  w.u8(static_cast<std::uint8_t>(normalization));
  w.u64(vocab_fingerprint);
  if (!out) throw Error("write failed for " + path.string());
}

RankModel RankModel::load(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open ensemble model " + path.string());
  BinaryReader r(in, path.string());
  r.header(kMagic, kVersion);
  RankModel m;
  auto fixed = [&](auto &dst) {
    const auto v = r.f64s();
    if (v.size() != dst.size()) throw Error(path.string() + ": unexpected array length");
    std::copy(v.begin(), v.end(), dst.begin());
  };
  fixed(m.weights);
  fixed(m.center);
  m.threshold = r.f64();
  m.C = r.f64();
  fixed(m.candidate_thresholds);
  for (auto &range : m.ranges) {
    range.min = r.f64();
    range.max = r.f64();
  }
  const auto norm = r.u8();
  if (norm > 1) throw Error(path.string() + ": corrupt normalization tag");
  m.normalization = static_cast<Normalization>(norm);
  m.vocab_fingerprint = r.u64();
  r.expect_end();
  for (double w : m.weights) {
    if (!std::isfinite(w)) throw Error(path.string() + ": non-finite weight");
  }
  return m;
}

}  // namespace xmlc
