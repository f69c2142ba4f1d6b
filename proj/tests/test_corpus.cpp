// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "xmlc/corpus.hpp"
#include "xmlc/error.hpp"

using namespace xmlc;
using xmlc::testing::TempDir;

TEST_CASE("articles parse field by field") {
  std::istringstream in(
      R"({"id":"a1","title":"t","abstractText":"x","decsCodes":["D2","D1","D1"]})"
      "\n"
      R"({"id":"a2","title":"u","abstractText":"y"})"
      "\n\n");
  const auto a = parse_articles(in, "mem");
  REQUIRE(a.size() == 2);
  CHECK(a[0].id == "a1");
  CHECK(a[0].title == "t");
  CHECK(a[0].abstract_text == "x");
  CHECK(a[0].gold == std::vector<std::string>{"D1", "D2"});
  CHECK(a[1].gold.empty());
}

TEST_CASE("malformed and duplicate article lines name the problem") {
  std::istringstream bad("{\"id\":\"a1\"}\n{not json\n");
  CHECK_THROWS_WITH_AS(parse_articles(bad, "f.jsonl"), doctest::Contains("f.jsonl:2"), Error);

  std::istringstream dup("{\"id\":\"a1\"}\n{\"id\":\"a1\"}\n");
  CHECK_THROWS_WITH_AS(parse_articles(dup, "f.jsonl"), doctest::Contains("'a1'"), Error);

  std::istringstream noid("{\"title\":\"x\"}\n");
  CHECK_THROWS_AS(parse_articles(noid, "f.jsonl"), Error);
}

TEST_CASE("vocabulary rows, synonyms and the stop label") {
  std::istringstream in("D1\tadulto\tadult person|grown-up\nD2\tniño\t\nD3\t\n");
  const auto v = parse_vocabulary(in, "mem");
  CHECK(v.size() == 4);
  CHECK(v.num_labels() == 3);
  CHECK(v.entry(0).synonyms == std::vector<std::string>{"adult person", "grown-up"});
  CHECK(v.entry(1).synonyms.empty());
  CHECK(v.entry(2).descriptor == "D3");
  CHECK(v.code(v.stop_label()) == LabelVocabulary::kStopCode);

  std::istringstream dup("D1\ta\nD1\tb\n");
  CHECK_THROWS_AS(parse_vocabulary(dup, "mem"), Error);
}

TEST_CASE("frequencies count carrying articles and reject unknown codes") {
  const auto v = xmlc::testing::make_vocab(3);
  std::vector<Article> arts{xmlc::testing::make_article("a", "", "", {"L0", "L1"}),
                            xmlc::testing::make_article("b", "", "", {"L1"}),
                            xmlc::testing::make_article("c", "", "", {})};
  const auto counted = count_frequencies(v, arts);
  CHECK(counted.frequency(0) == 1);
  CHECK(counted.frequency(1) == 2);
  CHECK(counted.frequency(2) == 0);
  CHECK(counted.frequency(counted.stop_label()) == 0);

  arts.push_back(xmlc::testing::make_article("d", "", "", {"ZZ", "YY"}));
  CHECK_THROWS_WITH_AS(count_frequencies(v, arts), doctest::Contains("YY ZZ"), Error);
}

TEST_CASE("split is disjoint, seeded and sized by the fraction") {
  std::vector<Article> arts;
  for (int i = 0; i < 1000; ++i) arts.push_back({"a" + std::to_string(i), "", "", {}});
  const auto s = split(arts, 0.05, 7);
  CHECK(s.holdout.size() == 50);
  CHECK(s.train.size() == 950);
  std::set<std::string> ids;
  for (const auto &a : s.train) ids.insert(a.id);
  for (const auto &a : s.holdout) CHECK(ids.insert(a.id).second);
  CHECK(ids.size() == 1000);

  const auto again = split(arts, 0.05, 7);
  CHECK(again.holdout == s.holdout);
  const auto other = split(arts, 0.05, 8);
  CHECK(other.holdout != s.holdout);

  const auto small = split(std::span(arts).first(3), 0.5, 1);
  CHECK(small.train.size() == 2);
  CHECK(small.holdout.size() == 1);
  for (std::size_t n : {200, 777, 1000}) {
    const auto h = split(std::span(arts).first(n), 0.05, 3).holdout.size();
    CHECK(std::fabs(static_cast<double>(h) / n - 0.05) <= 0.005);
  }

  CHECK_THROWS_AS(split(arts, 0.0, 1), Error);
  CHECK_THROWS_AS(split(std::span(arts).first(1), 0.5, 1), Error);
}

TEST_CASE("articles and vocabularies survive a save and load") {
  TempDir dir("corpus");
  const auto v = xmlc::testing::make_vocab(4);
  save_vocabulary(dir / "v.tsv", v);
  const auto back = load_vocabulary(dir / "v.tsv");
  CHECK(back.fingerprint() == v.fingerprint());
  CHECK(back.entry(2).synonyms == v.entry(2).synonyms);

  std::vector<Article> arts{xmlc::testing::make_article("x", "Tí", "ab \"q\"", {"L1", "L3"})};
  save_articles(dir / "a.jsonl", arts);
  CHECK(load_articles(dir / "a.jsonl") == arts);
  CHECK_THROWS_AS(load_articles(dir / "missing.jsonl"), Error);
}

TEST_CASE("gold ids and mean gold size") {
  const auto v = xmlc::testing::make_vocab(3);
  const auto a = xmlc::testing::make_article("a", "", "", {"L2", "L0"});
  CHECK(gold_ids(a, v) == std::vector<LabelId>{0, 2});
  std::vector<Article> arts{a, xmlc::testing::make_article("b", "", "", {"L1"})};
  CHECK(mean_gold_size(arts) == doctest::Approx(1.5));
  CHECK(mean_gold_size({}) == 0.0);
}
