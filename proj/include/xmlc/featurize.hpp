// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xmlc/corpus.hpp"

namespace xmlc {

/// Lowercases (Latin, Greek and Cyrillic blocks), splits on anything that is
/// not a letter or digit and drops tokens shorter than two code points.
/// Invalid UTF-8 bytes act as separators.
std::vector<std::string> tokenize(std::string_view text);

/// Tokens of title + abstract, or abstract only.
std::vector<std::string> article_tokens(const Article &article, bool include_title);

/// Sorted (index, weight) pairs; indices strictly increasing, no zero weights.
struct SparseVector {
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  double squared_norm() const;
  double norm() const;

  /// Builds from unsorted pairs; duplicate indices are summed, zeros dropped.
  static SparseVector from_pairs(std::vector<std::pair<std::uint32_t, double>> pairs);

  bool operator==(const SparseVector &) const = default;
};

double dot(const SparseVector &a, const SparseVector &b);
double dot(const SparseVector &a, std::span<const double> dense);

struct FeatureConfig {
  std::uint64_t min_df = 2;
  double max_df_ratio = 0.9;
  bool include_title = true;
  /// Highest n-gram order; n-grams are joined by a single space.
  std::uint32_t ngram_order = 1;
};

/// Terms of one document after tokenization and n-gram expansion.
std::vector<std::string> document_terms(const Article &article, const FeatureConfig &cfg);

class TermVocabulary {
 public:
  TermVocabulary() = default;

  std::size_t size() const { return terms_.size(); }
  std::uint64_t total_documents() const { return total_documents_; }
  const FeatureConfig &config() const { return config_; }

  const std::string &term(std::uint32_t index) const { return terms_.at(index); }
  std::uint64_t document_frequency(std::uint32_t index) const { return df_.at(index); }
  /// Returns nullptr for out-of-vocabulary terms.
  const std::uint32_t *find(std::string_view term) const;
  double idf(std::uint32_t index) const;

  /// term \t index \t df per line, preceded by one '#' line with the corpus size
  /// and feature settings.
  void save_tsv(const std::filesystem::path &path) const;
  static TermVocabulary load_tsv(const std::filesystem::path &path);

  friend TermVocabulary build_term_vocabulary(std::span<const Article>, const FeatureConfig &);

 private:
  void rebuild_index();

  std::vector<std::string> terms_;
  std::vector<std::uint64_t> df_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::uint64_t total_documents_ = 0;
  FeatureConfig config_;
};

/// Keeps terms with min_df <= df and df / N <= max_df_ratio. Indices are
/// assigned by descending df, ties broken lexicographically.
TermVocabulary build_term_vocabulary(std::span<const Article> articles, const FeatureConfig &cfg);

/// Raw term count times idf = ln((1 + N) / (1 + df)) + 1, L2-normalized.
SparseVector tfidf(const Article &article, const TermVocabulary &vocab);

}  // namespace xmlc
