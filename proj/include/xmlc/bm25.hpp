// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmlc/corpus.hpp"
#include "xmlc/label_scores.hpp"
#include "xmlc/parallel.hpp"

namespace xmlc {

enum class Field : std::uint8_t { abstract_text = 0, title = 1, label_text = 2 };
inline constexpr std::size_t kNumFields = 3;

using FieldWeights = std::array<double, kNumFields>;

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct KnnConfig {
  /// Neighbours retrieved per query.
  std::size_t k = 40;
  double label_threshold = 0.24;
  /// Indexed by Field.
  FieldWeights field_weights{1.0, 1.0, 0.5};
};

struct Posting {
  std::uint32_t doc;
  std::uint32_t tf;
};

struct Neighbor {
  std::uint32_t doc;
  double score;
};

/// A retrieved article with its normalized score (alpha) and the labels whose
/// beta is 1 (gold membership).
struct NeighborScore {
  std::uint32_t doc = 0;
  double alpha = 0.0;
  std::vector<LabelId> labels;
};

/// Three-field inverted index: abstract tokens, title tokens, and the
/// descriptors + synonyms of each document's gold labels.
class Bm25Index {
 public:
  Bm25Index() = default;

  static Bm25Index build(std::span<const Article> articles, const LabelVocabulary &vocab,
                         Bm25Params params = {});

  std::size_t num_docs() const { return doc_ids_.size(); }
  std::size_t num_terms() const { return terms_.size(); }
  const Bm25Params &params() const { return params_; }
  std::uint64_t vocab_fingerprint() const { return vocab_fingerprint_; }

  const std::string &doc_id(std::uint32_t doc) const { return doc_ids_.at(doc); }
  std::span<const LabelId> doc_labels(std::uint32_t doc) const { return doc_labels_.at(doc); }
  std::uint32_t field_length(Field f, std::uint32_t doc) const {
    return lengths_[static_cast<std::size_t>(f)].at(doc);
  }
  double average_length(Field f) const { return avg_length_[static_cast<std::size_t>(f)]; }

  /// Empty span for unknown terms.
  std::span<const Posting> postings(Field f, std::string_view term) const;
  std::size_t document_frequency(Field f, std::string_view term) const { return postings(f, term).size(); }
  double idf(Field f, std::string_view term) const;

  /// Weighted multi-field BM25 of one document against the distinct query terms.
  double score(std::span<const std::string> query, std::uint32_t doc, const FieldWeights &weights) const;

  /// Top-k documents with positive score, best first, ties by doc index.
  /// Term-at-a-time accumulation plus a bounded heap.
  std::vector<Neighbor> top_k(std::span<const std::string> query, std::size_t k,
                              const FieldWeights &weights) const;

  void save(const std::filesystem::path &path) const;
  static Bm25Index load(const std::filesystem::path &path, const LabelVocabulary &vocab);

 private:
  const std::uint32_t *term_id(std::string_view term) const;
  double term_weight(std::size_t field, std::uint32_t term, const Posting &p) const;

  Bm25Params params_;
  std::uint64_t vocab_fingerprint_ = 0;
  std::vector<std::string> doc_ids_;
  std::vector<std::vector<LabelId>> doc_labels_;
  std::vector<std::string> terms_;
  std::unordered_map<std::string, std::uint32_t> term_index_;
  std::array<std::vector<std::vector<Posting>>, kNumFields> postings_;
  std::array<std::vector<std::uint32_t>, kNumFields> lengths_;
  std::array<double, kNumFields> avg_length_{};
};

/// Tokens of the label_text field for a set of gold labels.
std::vector<std::string> label_text_tokens(std::span<const LabelId> labels, const LabelVocabulary &vocab);

/// Distinct title + abstract tokens used as the k-NN query.
std::vector<std::string> query_tokens(const Article &article);

/// Score(i) = sum_j alpha_j * beta_ji / sum_j alpha_j; labels with zero
/// score are omitted.
LabelScores aggregate_label_scores(std::span<const NeighborScore> neighbors);

/// Retrieves the k nearest articles, sets alpha_j = score_j / score_1 and
/// aggregates their gold labels.
std::vector<NeighborScore> knn_neighbors(const Bm25Index &index, const Article &query, const KnnConfig &cfg);
LabelScores knn_labels(const Bm25Index &index, const Article &query, const KnnConfig &cfg);
std::vector<LabelId> knn_predict(const Bm25Index &index, const Article &query, const KnnConfig &cfg);

std::vector<LabelScores> knn_labels_batch(const Bm25Index &index, std::span<const Article> queries,
                                          const KnnConfig &cfg, Execution exec = Execution::parallel);

}  // namespace xmlc
