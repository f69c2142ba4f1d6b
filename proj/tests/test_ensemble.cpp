// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xmlc/ensemble.hpp"
#include "xmlc/error.hpp"

using namespace xmlc;
using xmlc::testing::TempDir;

namespace {

ModelScores random_model_scores(Rng &rng, std::uint32_t labels) {
  ModelScores out;
  for (auto &m : out) {
    for (LabelId l = 0; l < labels; ++l) {
      if (rng.bernoulli(0.6)) m.push_back({l, rng.uniform(-1.0, 1.0)});
    }
  }
  return out;
}

Candidate one_feature(LabelId label, double f0) {
  Candidate c{label, {}};
  c.features[0] = f0;
  return c;
}

EnsembleConfig precise() {
  EnsembleConfig cfg;
  cfg.tolerance = 1e-9;
  cfg.max_iterations = 100000;
  return cfg;
}

}  // namespace

TEST_CASE("min-max normalization") {
  const ScoreRange r{0.0, 10.0};
  CHECK(normalize_score(0.0, r) == 0.0);
  CHECK(normalize_score(5.0, r) == 0.5);
  CHECK(normalize_score(10.0, r) == 1.0);
  CHECK(normalize_score(-3.0, r) == 0.0);
  CHECK(normalize_score(12.0, r) == 1.0);
  CHECK(normalize_score(4.0, {4.0, 4.0}) == 0.5);
  const auto n = normalize_scores({{2, 0.0}, {7, 10.0}}, r);
  CHECK(n == LabelScores{{2, 0.0}, {7, 1.0}});
}

TEST_CASE("rank features are the triplet and its products") {
  CHECK(build_features(0.5, 0.0, 0.8) == RankFeatures{0.5, 0.0, 0.8, 0.0, 0.4, 0.0, 0.0});
  const auto f = build_features(0.5, 0.4, 0.2);
  CHECK(f[6] == doctest::Approx(0.04));
  CHECK(f[3] == doctest::Approx(0.2));
}

TEST_CASE("threshold calibration") {
  // 25 articles with 30 distinct scores each and 203 gold labels: mean gold 8.12.
  std::vector<LabelScores> scores(25);
  for (std::size_t a = 0; a < scores.size(); ++a) {
    for (LabelId l = 0; l < 30; ++l) scores[a].push_back({l, l + 0.001 * a});
  }
  const double low = 1.9 * 8.12, high = 2.1 * 8.12;
  const auto cal = calibrate_threshold(scores, 100.0, low, high);
  CHECK(cal.reached);
  CHECK(cal.mean_predicted >= low);
  CHECK(cal.mean_predicted <= high);
  CHECK(mean_predicted(scores, cal.threshold) == cal.mean_predicted);

  // A threshold already inside the window is kept as is.
  const auto kept = calibrate_threshold(scores, 13.5, low, high);
  CHECK(kept.threshold == 13.5);
  CHECK(kept.reached);

  // Too few scores to ever reach the window: everything is predicted.
  const auto short_of = calibrate_threshold(scores, 0.0, 40.0, 50.0);
  CHECK_FALSE(short_of.reached);
  CHECK(short_of.mean_predicted == 30.0);

  std::vector<ModelScores> ms(25);
  std::vector<std::vector<LabelId>> gold(25);
  for (std::size_t a = 0; a < 25; ++a) {
    for (auto &m : ms[a]) m = scores[a];
    for (LabelId l = 0; l < (a < 3 ? 9u : 8u); ++l) gold[a].push_back(l);
  }
  const auto cc = calibrate_candidate_thresholds(ms, gold, {0.0, 0.0, 0.0}, EnsembleConfig{});
  CHECK(cc.mean_gold == doctest::Approx(8.12));
  for (std::size_t m = 0; m < kNumBaseModels; ++m) {
    CHECK(cc.reached[m]);
    CHECK(cc.mean_predicted[m] / cc.mean_gold >= 1.9);
    CHECK(cc.mean_predicted[m] / cc.mean_gold <= 2.1);
  }
}

TEST_CASE("candidate sets grow as any threshold drops") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_model_scores(rng, 12);
    ModelThresholds t{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto base = candidates(s, t);
    CHECK(std::is_sorted(base.begin(), base.end()));
    for (std::size_t m = 0; m < kNumBaseModels; ++m) {
      ModelThresholds lower = t;
      lower[m] -= rng.uniform(0.0, 0.5);
      const auto more = candidates(s, lower);
      CHECK(std::includes(more.begin(), more.end(), base.begin(), base.end()));
    }
  }
}

TEST_CASE("features read each model only on its own candidates") {
  ModelScores s;
  s[0] = {{0, 2.0}, {1, 1.0}, {2, 0.5}};
  s[1] = {{0, 0.9}, {1, 0.1}};
  s[2] = {{2, 0.7}};
  const ModelThresholds t{0.6, 0.5, 0.5};
  const std::vector<ModelScores> batch{s};
  const auto ranges = candidate_score_ranges(batch, t);
  CHECK(ranges[0].min == 1.0);
  CHECK(ranges[0].max == 2.0);
  CHECK(ranges[1].min == 0.9);
  CHECK(ranges[1].max == 0.9);

  const auto cands = build_candidate_features(batch, t, ranges, Execution::serial);
  REQUIRE(cands[0].size() == 3);
  // Label 0: svm 1 (its max), knn constant range -> 0.5, no decoder score.
  CHECK(cands[0][0].features == build_features(1.0, 0.5, 0.0));
  // Label 1: knn scored it but below its threshold, so only svm counts.
  CHECK(cands[0][1].features == build_features(0.0, 0.0, 0.0));
  // Label 2: proposed by the decoder alone.
  CHECK(cands[0][2].features == build_features(0.0, 0.0, 0.5));

  Rng rng(5);
  std::vector<ModelScores> many;
  for (int i = 0; i < 40; ++i) many.push_back(random_model_scores(rng, 10));
  const auto r = candidate_score_ranges(many, {0, 0, 0});
  CHECK(build_candidate_features(many, {0, 0, 0}, r, Execution::parallel) ==
        build_candidate_features(many, {0, 0, 0}, r, Execution::serial));
}

TEST_CASE("pairwise ranking on one informative feature") {
  std::vector<std::vector<Candidate>> cands;
  std::vector<std::vector<LabelId>> gold;
  Rng rng(7);
  for (int a = 0; a < 30; ++a) {
    std::vector<Candidate> c;
    std::vector<LabelId> g;
    for (LabelId l = 0; l < 6; ++l) {
      const bool rel = rng.bernoulli(0.4);
      c.push_back(one_feature(l, rel ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.45)));
      if (rel) g.push_back(l);
    }
    cands.push_back(c);
    gold.push_back(g);
  }
  RankTrainingStats stats;
  const auto m = train_rank(cands, gold, precise(), &stats);
  CHECK(stats.pairs > 0);
  CHECK(m.weights[0] > 0.0);
  for (std::size_t k = 1; k < kNumRankFeatures; ++k) CHECK(m.weights[k] == 0.0);

  // Candidate order within an article does not matter.
  auto reversed = cands;
  for (auto &c : reversed) std::reverse(c.begin(), c.end());
  const auto r = train_rank(reversed, gold, precise());
  CHECK(r.weights[0] == doctest::Approx(m.weights[0]).epsilon(1e-6));

  // Identical features give no signal.
  auto flat = cands;
  for (auto &article : flat) {
    for (auto &c : article) c.features = build_features(0.3, 0.3, 0.3);
  }
  const auto z = train_rank(flat, gold, precise());
  for (double w : z.weights) CHECK(w == 0.0);

  // Pairs are capped per article.
  EnsembleConfig few = precise();
  few.max_pairs_per_article = 2;
  RankTrainingStats capped;
  train_rank(cands, gold, few, &capped);
  CHECK(capped.pairs <= 2 * capped.articles_with_pairs);
}

TEST_CASE("threshold search") {
  // Equal F1 on a plateau: the smallest threshold wins.
  const std::vector<std::vector<LabelScore>> flat{{{0, 0.3}, {1, 0.3}}};
  const std::vector<std::vector<LabelId>> gold_all{{0, 1}};
  const auto t = tune_threshold(flat, gold_all, -0.5, 0.5, 201);
  CHECK(t.threshold == -0.5);
  CHECK(t.micro_f1 == 1.0);
  CHECK(t.grid_f1.size() == 201);

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<LabelScore>> scored(15);
    std::vector<std::vector<LabelId>> gold(15);
    for (std::size_t a = 0; a < 15; ++a) {
      for (LabelId l = 0; l < 8; ++l) {
        if (rng.bernoulli(0.5)) scored[a].push_back({l, rng.uniform(-0.6, 0.6)});
        if (rng.bernoulli(0.3)) gold[a].push_back(l);
      }
    }
    const auto res = tune_threshold(scored, gold, -0.5, 0.5, 21);
    double best = -1.0, best_t = 0.0;
    for (int k = 0; k < 21; ++k) {
      const double th = -0.5 + 0.05 * k;
      std::vector<std::vector<std::uint32_t>> pred(15);
      for (std::size_t a = 0; a < 15; ++a) {
        for (const auto &s : scored[a]) {
          if (s.score > th) pred[a].push_back(s.label);
        }
      }
      const double f = xmlc::testing::brute_force_metrics(pred, gold, 8).micro_f;
      CHECK(res.grid_f1[k] == doctest::Approx(f).epsilon(1e-12));
      if (f > best + 1e-12) best = f, best_t = th;
    }
    CHECK(res.micro_f1 == doctest::Approx(best).epsilon(1e-12));
    CHECK(res.threshold == doctest::Approx(best_t).epsilon(1e-12));
  }
  CHECK_THROWS_AS(tune_threshold({}, {}, -0.5, 0.5, 3), Error);
}

TEST_CASE("ensemble predictions stay inside the candidates and shrink with the threshold") {
  RankModel m;
  m.weights = {1.0, 0.5, 0.2, 0, 0, 0, 0.3};
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Candidate> cands;
    for (LabelId l = 0; l < 10; ++l) {
      if (rng.bernoulli(0.5)) {
        cands.push_back({l, build_features(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1))});
      }
    }
    std::vector<LabelId> prev;
    bool first = true;
    for (double t : {-1.0, 0.0, 0.4, 0.9, 3.0}) {
      m.threshold = t;
      const auto p = predict_ensemble(m, cands);
      for (LabelId l : p) {
        CHECK(std::any_of(cands.begin(), cands.end(), [&](const Candidate &c) { return c.label == l; }));
      }
      if (!first) CHECK(std::includes(prev.begin(), prev.end(), p.begin(), p.end()));
      prev = p;
      first = false;
    }
    CHECK(prev.empty());
  }
}

TEST_CASE("rank models round-trip") {
  TempDir dir("ens");
  RankModel m;
  m.weights = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  m.center = {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07};
  m.threshold = -0.0233;
  m.C = 10.0;
  m.candidate_thresholds = {-0.3, 0.24, 0.1};
  m.ranges = {ScoreRange{-0.3, 2.0}, ScoreRange{0.24, 1.0}, ScoreRange{0.1, 0.99}};
  m.normalization = Normalization::stored;
  m.vocab_fingerprint = 42;
  m.save(dir / "ens.bin");
  const auto b = RankModel::load(dir / "ens.bin");
  CHECK(b.weights == m.weights);
  CHECK(b.center == m.center);
  CHECK(b.threshold == m.threshold);
  CHECK(b.C == m.C);
  CHECK(b.candidate_thresholds == m.candidate_thresholds);
  CHECK(b.ranges[0].max == 2.0);
  CHECK(b.normalization == Normalization::stored);
  CHECK(b.vocab_fingerprint == 42);
  CHECK_THROWS_AS(parse_normalization("zscore"), Error);
}
