// SPDX-License-Identifier: Apache-2.0
#include "xmlc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "xmlc/error.hpp"
#include "xmlc/rng.hpp"

namespace xmlc {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvzhjc";  // 17
constexpr std::string_view kVowels = "aeiou";
constexpr std::size_t kSyllables = 17 * 5;
constexpr std::size_t kWordSyllables = 3;

// Spells word k (k < budget) as three consonant-vowel syllables after a
// bijective scramble, so consecutive ids do not share prefixes.
std::string spell(std::size_t k, std::size_t budget) {
  constexpr std::size_t kStride = 7919;  // prime, coprime with the budget
  std::size_t code = (k * kStride + 101) % budget;
  std::string word;
  for (std::size_t i = 0; i < kWordSyllables; ++i) {
    const std::size_t syl = code % kSyllables;
    code /= kSyllables;
    word += kConsonants[syl / 5];
    word += kVowels[syl % 5];
  }
  return word;
}

std::size_t between(Rng &rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

}  // namespace

std::size_t synth_term_budget() { return kSyllables * kSyllables * kSyllables; }

SynthCorpus synthesize(const SynthConfig &cfg) {
  if (cfg.n_labels == 0 || cfg.terms_per_label == 0) throw Error("synth needs labels and signature terms");
  if (cfg.min_labels == 0 || cfg.min_labels > cfg.max_labels || cfg.max_labels > cfg.n_labels) {
    throw Error("synth: labels per article must satisfy 1 <= min <= max <= n_labels");
  }
  if (cfg.min_tokens == 0 || cfg.min_tokens > cfg.max_tokens || cfg.min_title_tokens > cfg.max_title_tokens) {
    throw Error("synth: token ranges must be nonempty");
  }
  if (cfg.signature_fraction < 0.0 || cfg.signature_fraction > 1.0) {
    throw Error("synth: signature_fraction must lie in [0, 1]");
  }
  if (cfg.noise_terms == 0 && cfg.signature_fraction < 1.0) throw Error("synth: noise tokens need noise terms");
  const std::size_t budget = synth_term_budget();
  const std::size_t needed = cfg.n_labels * cfg.terms_per_label + cfg.noise_terms;
  if (needed > budget) {
    throw Error("synth: " + std::to_string(needed) + " terms requested, budget is " + std::to_string(budget));
  }

  SynthCorpus out;
  std::size_t next_word = 0;
  out.signatures.resize(cfg.n_labels);
  for (auto &sig : out.signatures) {
    for (std::size_t t = 0; t < cfg.terms_per_label; ++t) sig.push_back(spell(next_word++, budget));
  }
  for (std::size_t t = 0; t < cfg.noise_terms; ++t) out.noise.push_back(spell(next_word++, budget));

  std::vector<LabelEntry> entries;
  for (std::size_t l = 0; l < cfg.n_labels; ++l) {
    char code[16];
    std::snprintf(code, sizeof code, "D%05zu", l + 1);
    const auto &sig = out.signatures[l];
    LabelEntry e;
    e.code = code;
    e.descriptor = sig[0];
    for (std::size_t t = 1; t < std::min<std::size_t>(sig.size(), 3); ++t) e.synonyms.push_back(sig[t]);
    entries.push_back(std::move(e));
  }
  out.vocab = LabelVocabulary(std::move(entries));

  Rng rng(mix_seed(cfg.seed, 0x5e7d));
  // Popularity rank of each label is a seeded permutation of the ids.
  std::vector<std::size_t> rank(cfg.n_labels);
  std::iota(rank.begin(), rank.end(), 0);
  rng.shuffle(std::span(rank));
  std::vector<double> cumulative(cfg.n_labels);
  double total = 0.0;
  for (std::size_t l = 0; l < cfg.n_labels; ++l) {
    total += std::pow(static_cast<double>(rank[l] + 1), -cfg.zipf_exponent);
    cumulative[l] = total;
  }
  auto draw_label = [&] {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                             static_cast<std::ptrdiff_t>(cfg.n_labels - 1)));
  };
  auto draw_tokens = [&](const std::vector<std::size_t> &labels, std::size_t n) {
    std::string text;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string *word;
      if (rng.bernoulli(cfg.signature_fraction)) {
        const auto &sig = out.signatures[labels[rng.below(labels.size())]];
        word = &sig[rng.below(sig.size())];
      } else {
        word = &out.noise[rng.below(out.noise.size())];
      }
      if (!text.empty()) text += ' ';
      text += *word;
    }
    return text;
  };

  std::size_t serial = 0;
  auto make = [&](std::size_t count, std::vector<Article> &dst, char prefix) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t k = between(rng, cfg.min_labels, cfg.max_labels);
      std::vector<std::size_t> labels;
      while (labels.size() < k) {
        const std::size_t l = draw_label();
        if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
      }
      Article a;
      char id[32];
      std::snprintf(id, sizeof id, "%c%06zu", prefix, ++serial);
      a.id = id;
      a.title = draw_tokens(labels, between(rng, cfg.min_title_tokens, cfg.max_title_tokens));
      a.abstract_text = draw_tokens(labels, between(rng, cfg.min_tokens, cfg.max_tokens));
      for (auto l : labels) a.gold.push_back(out.vocab.code(static_cast<LabelId>(l)));
      std::sort(a.gold.begin(), a.gold.end());
      dst.push_back(std::move(a));
    }
  };
  make(cfg.n_articles, out.train, 't');
  make(cfg.dev_articles, out.dev, 'd');
  make(cfg.test_articles, out.test, 'e');
  return out;
}

void write_synth(const std::filesystem::path &dir, const SynthCorpus &corpus) {
  std::filesystem::create_directories(dir);
  save_articles(dir / "train.jsonl", corpus.train);
  save_articles(dir / "dev.jsonl", corpus.dev);
  save_articles(dir / "test.jsonl", corpus.test);
  save_vocabulary(dir / "vocab.tsv", corpus.vocab);
}

}  // namespace xmlc
