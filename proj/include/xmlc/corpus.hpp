// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xmlc {

using LabelId = std::uint32_t;

/// One document to classify. `gold` holds label codes, sorted and unique.
struct Article {
  std::string id;
  std::string title;
  std::string abstract_text;
  std::vector<std::string> gold;

  bool operator==(const Article &) const = default;
};

struct LabelEntry {
  std::string code;
  std::string descriptor;
  std::vector<std::string> synonyms;
};

/// Label table. Ids are dense 0..size()-1 with the synthetic stop label
/// always occupying the last id.
class LabelVocabulary {
 public:
  static constexpr std::string_view kStopCode = "__STOP__";

  LabelVocabulary() = default;
  /// Appends the stop label after `entries`; throws on duplicate codes.
  explicit LabelVocabulary(std::vector<LabelEntry> entries);

  /// Number of entries including the stop label.
  std::size_t size() const { return entries_.size(); }
  /// Number of real labels (stop excluded).
  std::size_t num_labels() const { return entries_.size() - 1; }
  LabelId stop_label() const { return static_cast<LabelId>(entries_.size() - 1); }

  const LabelEntry &entry(LabelId id) const { return entries_.at(id); }
  const std::string &code(LabelId id) const { return entries_.at(id).code; }
  std::span<const LabelEntry> entries() const { return entries_; }

  bool contains(std::string_view code) const;
  /// Throws Error for unknown codes.
  LabelId id_of(std::string_view code) const;
  const LabelId *find(std::string_view code) const;

  std::uint64_t frequency(LabelId id) const { return frequency_.at(id); }
  std::span<const std::uint64_t> frequencies() const { return frequency_; }
  void set_frequencies(std::vector<std::uint64_t> freq);

  /// Hash over the ordered code list; artifacts store it to detect a
  /// vocabulary mismatch at load time.
  std::uint64_t fingerprint() const;

 private:
  std::vector<LabelEntry> entries_;
  std::vector<std::uint64_t> frequency_;
  std::unordered_map<std::string, LabelId> index_;
};

struct DatasetSplit {
  std::vector<Article> train;
  std::vector<Article> holdout;
  std::uint64_t seed = 0;
};

/// Reads JSONL with fields id, title, abstractText and optional decsCodes.
std::vector<Article> load_articles(const std::filesystem::path &path);
std::vector<Article> parse_articles(std::istream &in, const std::string &source);
void save_articles(const std::filesystem::path &path, std::span<const Article> articles);

/// Reads the headerless TSV code / descriptor / pipe-separated synonyms.
LabelVocabulary load_vocabulary(const std::filesystem::path &path);
LabelVocabulary parse_vocabulary(std::istream &in, const std::string &source);
void save_vocabulary(const std::filesystem::path &path, const LabelVocabulary &vocab);

/// Returns a copy of `vocab` with frequency(c) = number of articles carrying c.
LabelVocabulary count_frequencies(const LabelVocabulary &vocab, std::span<const Article> articles);

/// Seeded shuffle, then holdout = max(1, floor(fraction * N)) articles.
DatasetSplit split(std::span<const Article> articles, double holdout_fraction, std::uint64_t seed);

/// Gold codes of `article` mapped to vocabulary ids (sorted).
std::vector<LabelId> gold_ids(const Article &article, const LabelVocabulary &vocab);

/// Mean number of gold codes per article (0 for an empty collection).
double mean_gold_size(std::span<const Article> articles);

}  // namespace xmlc
