// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xmlc/bm25.hpp"
#include "xmlc/error.hpp"

using namespace xmlc;
using xmlc::testing::Bm25Fixture;
using xmlc::testing::TempDir;

namespace {

using Tokens = std::vector<std::string>;

const FieldWeights kDefaultWeights{1.0, 1.0, 0.5};

/// Random corpus over a small word pool, every document distinct.
struct RandomCorpus {
  LabelVocabulary vocab = xmlc::testing::make_vocab(8);
  std::vector<Article> articles;

  explicit RandomCorpus(std::uint64_t seed, int n = 60) {
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
      std::string text = "uniq" + std::to_string(i);
      const auto len = 5 + rng.below(15);
      for (std::size_t k = 0; k < len; ++k) text += " w" + std::to_string(rng.below(40));
      std::vector<std::string> gold;
      for (int l = 0; l < 8; ++l) {
        if (rng.bernoulli(0.25)) gold.push_back("L" + std::to_string(l));
      }
      articles.push_back(xmlc::testing::make_article("d" + std::to_string(i), "t" + std::to_string(rng.below(9)),
                                                     text, gold));
    }
  }
};

}  // namespace

TEST_CASE("index fields, lengths and postings on the hand fixture") {
  Bm25Fixture fx;
  const auto index = Bm25Index::build(fx.articles, fx.vocab);
  CHECK(index.num_docs() == 3);
  for (std::uint32_t d = 0; d < 3; ++d) {
    for (std::size_t f = 0; f < kNumFields; ++f) {
      CHECK(index.field_length(static_cast<Field>(f), d) == fx.docs[d].fields[f].size());
    }
  }
  CHECK(index.average_length(Field::abstract_text) == doctest::Approx((6.0 + 7.0 + 3.0) / 3.0).epsilon(1e-12));
  CHECK(label_text_tokens(std::vector<LabelId>{0}, fx.vocab) == Tokens{"adulto", "adult"});
  CHECK(index.postings(Field::abstract_text, "zebra").empty());
  const auto heart = index.postings(Field::abstract_text, "heart");
  REQUIRE(heart.size() == 2);
  CHECK(heart[0].doc == 0);
  CHECK(heart[0].tf == 2);
  CHECK(heart[1].doc == 2);
}

TEST_CASE("bm25 scores match the formula on the hand fixture") {
  Bm25Fixture fx;
  const auto index = Bm25Index::build(fx.articles, fx.vocab);
  const std::vector<Tokens> queries{{"heart"}, {"child", "growth"}, {"adult", "heart", "the", "heart"}, {"zebra"}};
  for (const auto &q : queries) {
    for (std::uint32_t d = 0; d < 3; ++d) {
      const double want = xmlc::testing::bm25_formula(fx.docs, q, d, {1.0, 1.0, 0.5}, 1.2, 0.75);
      CHECK(std::fabs(index.score(q, d, kDefaultWeights) - want) < 1e-9);
    }
  }
}

TEST_CASE("single-document corpus") {
  LabelVocabulary vocab = xmlc::testing::make_vocab(1);
  std::vector<Article> one{xmlc::testing::make_article("x", "", "aa aa bb", {})};
  const auto index = Bm25Index::build(one, vocab);
  // N = 1, df = 1, tf = 2, len = avg = 3.
  const double idf = std::log(1.0 + 0.5 / 1.5);
  const double want = idf * 2.0 * 2.2 / (2.0 + 1.2);
  CHECK(index.score(Tokens{"aa"}, 0, {1.0, 0.0, 0.0}) == doctest::Approx(want).epsilon(1e-12));
  CHECK(index.score(Tokens{"cc"}, 0, {1.0, 0.0, 0.0}) == 0.0);
}

TEST_CASE("field weights scale their field linearly") {
  Bm25Fixture fx;
  const auto index = Bm25Index::build(fx.articles, fx.vocab);
  const Tokens q{"heart", "child"};
  const double title = index.score(q, 2, {0.0, 1.0, 0.0});
  const double rest = index.score(q, 2, {1.0, 0.0, 0.5});
  CHECK(index.score(q, 2, {1.0, 2.0, 0.5}) == doctest::Approx(rest + 2.0 * title).epsilon(1e-12));
}

TEST_CASE("top-k by heap equals top-k by full sort") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RandomCorpus rc(seed);
    const auto index = Bm25Index::build(rc.articles, rc.vocab);
    Rng rng(seed + 100);
    for (int trial = 0; trial < 20; ++trial) {
      Tokens q;
      for (int k = 0; k < 6; ++k) q.push_back("w" + std::to_string(rng.below(40)));
      std::vector<Neighbor> all;
      for (std::uint32_t d = 0; d < index.num_docs(); ++d) {
        const double s = index.score(q, d, kDefaultWeights);
        if (s > 0.0) all.push_back({d, s});
      }
      std::sort(all.begin(), all.end(), [](const Neighbor &a, const Neighbor &b) {
        return a.score != b.score ? a.score > b.score : a.doc < b.doc;
      });
      for (std::size_t k : {1, 5, 17, 100}) {
        const auto got = index.top_k(q, k, kDefaultWeights);
        REQUIRE(got.size() == std::min(k, all.size()));
        for (std::size_t i = 0; i < got.size(); ++i) {
          CHECK(got[i].doc == all[i].doc);
          CHECK(got[i].score == doctest::Approx(all[i].score).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("label scores aggregate normalized neighbour scores") {
  const std::vector<NeighborScore> nb{{0, 1.0, {1}}, {1, 0.5, {1}}};
  const auto s = aggregate_label_scores(nb);
  REQUIRE(s.size() == 1);
  CHECK(s[0].label == 1);
  CHECK(s[0].score == 1.0);

  const std::vector<NeighborScore> mixed{{0, 1.0, {0, 2}}, {1, 0.6, {2}}, {2, 0.2, {1}}};
  const auto m = aggregate_label_scores(mixed);
  REQUIRE(m.size() == 3);
  CHECK(m[0].score == doctest::Approx(1.0 / 1.8));
  CHECK(m[1].score == doctest::Approx(0.2 / 1.8));
  CHECK(m[2].score == doctest::Approx(1.6 / 1.8));
  CHECK(aggregate_label_scores({}).empty());
}

TEST_CASE("k-NN scores lie in [0, 1] and reach 1 only for unanimous labels") {
  RandomCorpus rc(9);
  const auto index = Bm25Index::build(rc.articles, rc.vocab);
  KnnConfig cfg;
  cfg.k = 5;
  for (const auto &a : rc.articles) {
    const auto nb = knn_neighbors(index, a, cfg);
    REQUIRE_FALSE(nb.empty());
    CHECK(nb.front().alpha == 1.0);
    for (const auto &s : knn_labels(index, a, cfg)) {
      CHECK(s.score > 0.0);
      CHECK(s.score <= 1.0 + 1e-15);
      const bool unanimous = std::all_of(nb.begin(), nb.end(), [&](const NeighborScore &n) {
        return std::find(n.labels.begin(), n.labels.end(), s.label) != n.labels.end();
      });
      CHECK((std::fabs(s.score - 1.0) < 1e-12) == unanimous);
    }
  }
}

TEST_CASE("an indexed article retrieves itself first") {
  RandomCorpus rc(21);
  const auto index = Bm25Index::build(rc.articles, rc.vocab);
  for (std::uint32_t d = 0; d < rc.articles.size(); ++d) {
    const auto hits = index.top_k(query_tokens(rc.articles[d]), 1, kDefaultWeights);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].doc == d);
  }
}

TEST_CASE("prediction thresholds, empty queries and k clamping") {
  Bm25Fixture fx;
  const auto index = Bm25Index::build(fx.articles, fx.vocab);
  KnnConfig cfg;
  cfg.k = 40;
  const auto q = xmlc::testing::make_article("q", "heart", "child heart", {});
  CHECK(knn_neighbors(index, q, cfg).size() <= 3);
  cfg.label_threshold = 1.01;
  CHECK(knn_predict(index, q, cfg).empty());
  std::vector<LabelId> prev;
  for (double t : {0.9, 0.5, 0.24, 0.0}) {
    cfg.label_threshold = t;
    const auto cur = knn_predict(index, q, cfg);
    CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
    prev = cur;
  }
  CHECK(knn_labels(index, xmlc::testing::make_article("e", "", "", {}), cfg).empty());
  cfg.k = 0;
  CHECK_THROWS_AS(knn_labels(index, q, cfg), Error);

  std::vector<Article> bad{xmlc::testing::make_article("z", "", "x", {"NOPE"})};
  CHECK_THROWS_AS(Bm25Index::build(bad, fx.vocab), Error);
}

TEST_CASE("batch scoring is identical serial and parallel; the index round-trips") {
  TempDir dir("bm25");
  RandomCorpus rc(4);
  const auto index = Bm25Index::build(rc.articles, rc.vocab);
  KnnConfig cfg;
  cfg.k = 7;
  const auto par = knn_labels_batch(index, rc.articles, cfg, Execution::parallel);
  const auto ser = knn_labels_batch(index, rc.articles, cfg, Execution::serial);
  CHECK(par == ser);

  index.save(dir / "knn.bin");
  const auto back = Bm25Index::load(dir / "knn.bin", rc.vocab);
  CHECK(knn_labels_batch(back, rc.articles, cfg, Execution::serial) == ser);
  CHECK_THROWS_AS(Bm25Index::load(dir / "knn.bin", xmlc::testing::make_vocab(3)), Error);
}
