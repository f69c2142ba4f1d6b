// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xmlc/corpus.hpp"

namespace xmlc {

struct SynthConfig {
  std::size_t n_articles = 5000;
  std::size_t n_labels = 200;
  std::size_t terms_per_label = 10;
  std::uint64_t seed = 13;
  double zipf_exponent = 1.1;
  std::size_t dev_articles = 500;
  std::size_t test_articles = 500;
  std::size_t noise_terms = 500;
  std::size_t min_labels = 1;
  std::size_t max_labels = 5;
  std::size_t min_tokens = 30;
  std::size_t max_tokens = 80;
  std::size_t min_title_tokens = 3;
  std::size_t max_title_tokens = 8;
  double signature_fraction = 0.8;
};

/// Number of distinct words the generator can spell.
std::size_t synth_term_budget();

struct SynthCorpus {
  std::vector<Article> train, dev, test;
  LabelVocabulary vocab;
  /// signature[l] = the terms owned by label l.
  std::vector<std::vector<std::string>> signatures;
  std::vector<std::string> noise;
};

/// Every label owns terms_per_label signature words no other label uses.
/// Articles draw 1-5 distinct labels from a Zipf popularity law and emit
/// tokens that are signature words of their labels with probability
/// signature_fraction and shared noise words otherwise.
SynthCorpus synthesize(const SynthConfig &cfg);

/// Writes train.jsonl, dev.jsonl, test.jsonl and vocab.tsv into `dir`.
void write_synth(const std::filesystem::path &dir, const SynthCorpus &corpus);

}  // namespace xmlc
