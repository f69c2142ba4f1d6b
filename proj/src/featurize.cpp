// SPDX-License-Identifier: Apache-2.0
#include "xmlc/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "xmlc/error.hpp"

namespace xmlc {

namespace {

constexpr char32_t kInvalid = 0xFFFFFFFF;

// Decodes one code point starting at text[pos] and advances pos. Malformed
// sequences consume a single byte and yield kInvalid.
char32_t decode_utf8(std::string_view text, std::size_t &pos) {
  const auto b0 = static_cast<unsigned char>(text[pos]);
  int extra = 0;
  char32_t cp = 0;
  if (b0 < 0x80) {
    ++pos;
    return b0;
  } else if ((b0 & 0xE0) == 0xC0) {
    extra = 1;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    extra = 2;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    extra = 3;
    cp = b0 & 0x07;
  } else {
    ++pos;
    return kInvalid;
  }
  if (pos + extra >= text.size()) {
    ++pos;
    return kInvalid;
  }
  for (int i = 1; i <= extra; ++i) {
    const auto b = static_cast<unsigned char>(text[pos + i]);
    if ((b & 0xC0) != 0x80) {
      ++pos;
      return kInvalid;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  pos += extra + 1;
  return cp;
}

void encode_utf8(char32_t cp, std::string &out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_word_char(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
  }
  if (cp == kInvalid) return false;
  // Latin-1 letters (multiplication and division signs excluded), ordinal indicators.
  if (cp >= 0xC0 && cp <= 0xFF) return cp != 0xD7 && cp != 0xF7;
  if (cp == 0xAA || cp == 0xBA || cp == 0xB5) return true;
  if (cp < 0xC0) return false;
  // Punctuation, symbol and space blocks.
  if (cp >= 0x2000 && cp <= 0x2BFF) return false;
  if (cp >= 0x3000 && cp <= 0x303F) return false;
  if (cp >= 0xFE30 && cp <= 0xFE4F) return false;
  if (cp >= 0xFF00 && cp <= 0xFF0F) return false;
  if (cp >= 0xFFF0) return false;
  // Combining diacritical marks keep words together.
  return true;
}

char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  // Latin Extended-A: even upper / odd lower pairs, with the 0x139-0x148 and
  // 0x179-0x17E runs shifted by one.
  if (cp >= 0x100 && cp <= 0x137) return cp | 1;
  if (cp >= 0x139 && cp <= 0x148) return (cp & 1) ? cp + 1 : cp;
  if (cp >= 0x14A && cp <= 0x177) return cp | 1;
  if (cp == 0x178) return 0xFF;
  if (cp >= 0x179 && cp <= 0x17E) return (cp & 1) ? cp + 1 : cp;
  // Greek.
  if (cp >= 0x391 && cp <= 0x3AB && cp != 0x3A2) return cp + 32;
  if (cp == 0x386) return 0x3AC;
  if (cp >= 0x388 && cp <= 0x38A) return cp + 37;
  if (cp == 0x38C) return 0x3CC;
  if (cp == 0x38E || cp == 0x38F) return cp + 63;
  // Cyrillic.
  if (cp >= 0x410 && cp <= 0x42F) return cp + 32;
  if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
  return cp;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t current_len = 0;
  auto flush = [&] {
    if (current_len >= 2) tokens.push_back(current);
    current.clear();
    current_len = 0;
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    const char32_t cp = decode_utf8(text, pos);
    if (is_word_char(cp)) {
      encode_utf8(to_lower(cp), current);
      ++current_len;
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

std::vector<std::string> article_tokens(const Article &article, bool include_title) {
  auto tokens = include_title ? tokenize(article.title) : std::vector<std::string>{};
  auto body = tokenize(article.abstract_text);
  tokens.insert(tokens.end(), std::make_move_iterator(body.begin()), std::make_move_iterator(body.end()));
  return tokens;
}

double SparseVector::squared_norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return s;
}

double SparseVector::norm() const { return std::sqrt(squared_norm()); }

SparseVector SparseVector::from_pairs(std::vector<std::pair<std::uint32_t, double>> pairs) {
  std::sort(pairs.begin(), pairs.end(), [](const auto &a, const auto &b) { return a.first < b.first; });
  SparseVector v;
  for (std::size_t i = 0; i < pairs.size();) {
    const std::uint32_t idx = pairs[i].first;
    double sum = 0.0;
    for (; i < pairs.size() && pairs[i].first == idx; ++i) sum += pairs[i].second;
    if (sum != 0.0) {
      v.indices.push_back(idx);
      v.values.push_back(sum);
    }
  }
  return v;
}

double dot(const SparseVector &a, const SparseVector &b) {
  double s = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.indices.size() && j < b.indices.size()) {
    if (a.indices[i] < b.indices[j]) {
      ++i;
    } else if (a.indices[i] > b.indices[j]) {
      ++j;
    } else {
      s += a.values[i++] * b.values[j++];
    }
  }
  return s;
}

double dot(const SparseVector &a, std::span<const double> dense) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.indices.size(); ++k) {
    if (a.indices[k] < dense.size()) s += a.values[k] * dense[a.indices[k]];
  }
  return s;
}

std::vector<std::string> document_terms(const Article &article, const FeatureConfig &cfg) {
  auto tokens = article_tokens(article, cfg.include_title);
  if (cfg.ngram_order <= 1) return tokens;
  std::vector<std::string> terms = tokens;
  for (std::size_t n = 2; n <= cfg.ngram_order; ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string gram = tokens[i];
      for (std::size_t k = 1; k < n; ++k) gram += " " + tokens[i + k];
      terms.push_back(std::move(gram));
    }
  }
  return terms;
}

const std::uint32_t *TermVocabulary::find(std::string_view term) const {
  auto it = index_.find(std::string(term));
  return it == index_.end() ? nullptr : &it->second;
}

double TermVocabulary::idf(std::uint32_t index) const {
  return std::log((1.0 + static_cast<double>(total_documents_)) /
                  (1.0 + static_cast<double>(df_.at(index)))) +
         1.0;
}

void TermVocabulary::rebuild_index() {
  index_.clear();
  index_.reserve(terms_.size());
  for (std::uint32_t i = 0; i < terms_.size(); ++i) index_.emplace(terms_[i], i);
}

TermVocabulary build_term_vocabulary(std::span<const Article> articles, const FeatureConfig &cfg) {
  if (articles.empty()) throw Error("cannot build a term vocabulary from no articles");
  if (cfg.ngram_order < 1) throw Error("ngram_order must be at least 1");
  std::unordered_map<std::string, std::uint64_t> df;
  for (const auto &a : articles) {
    auto terms = document_terms(a, cfg);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    for (auto &t : terms) ++df[std::move(t)];
  }
  const double n = static_cast<double>(articles.size());
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (auto &[term, count] : df) {
    if (count >= cfg.min_df && static_cast<double>(count) / n <= cfg.max_df_ratio) {
      kept.emplace_back(term, count);
    }
  }
  if (kept.empty()) throw Error("every term was removed by the document-frequency filters");
  std::sort(kept.begin(), kept.end(), [](const auto &a, const auto &b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  TermVocabulary vocab;
  vocab.config_ = cfg;
  vocab.total_documents_ = articles.size();
  for (auto &[term, count] : kept) {
    vocab.terms_.push_back(std::move(term));
    vocab.df_.push_back(count);
  }
  vocab.rebuild_index();
  return vocab;
}

SparseVector tfidf(const Article &article, const TermVocabulary &vocab) {
  std::map<std::uint32_t, double> counts;
  for (const auto &t : document_terms(article, vocab.config())) {
    if (const std::uint32_t *idx = vocab.find(t)) counts[*idx] += 1.0;
  }
  SparseVector v;
  v.indices.reserve(counts.size());
  v.values.reserve(counts.size());
  for (const auto &[idx, tf] : counts) {
    v.indices.push_back(idx);
    v.values.push_back(tf * vocab.idf(idx));
  }
  const double norm = v.norm();
  if (norm > 0.0) {
    for (double &w : v.values) w /= norm;
  }
  return v;
}

void TermVocabulary::save_tsv(const std::filesystem::path &path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "#documents=" << total_documents_ << "\tmin_df=" << config_.min_df
      << "\tmax_df_ratio=" << config_.max_df_ratio << "\tinclude_title=" << (config_.include_title ? 1 : 0)
      << "\tngram_order=" << config_.ngram_order << '\n';
  for (std::uint32_t i = 0; i < terms_.size(); ++i) {
    out << terms_[i] << '\t' << i << '\t' << df_[i] << '\n';
  }
}

TermVocabulary TermVocabulary::load_tsv(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open term vocabulary " + path.string());
  TermVocabulary vocab;
  std::string line;
  if (!std::getline(in, line) || line.rfind("#documents=", 0) != 0) {
    throw Error(path.string() + ": missing term vocabulary header");
  }
  {
    std::istringstream hs(line.substr(1));
    std::string field;
    while (std::getline(hs, field, '\t')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const auto key = field.substr(0, eq);
      const auto value = field.substr(eq + 1);
      if (key == "documents") vocab.total_documents_ = std::stoull(value);
      else if (key == "min_df") vocab.config_.min_df = std::stoull(value);
      else if (key == "max_df_ratio") vocab.config_.max_df_ratio = std::stod(value);
      else if (key == "include_title") vocab.config_.include_title = value == "1";
      else if (key == "ngram_order") vocab.config_.ngram_order = static_cast<std::uint32_t>(std::stoul(value));
    }
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected term, index, df");
    }
    const auto index = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
    if (index != vocab.terms_.size()) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": term indices must be dense and ordered");
    }
    vocab.terms_.push_back(line.substr(0, t1));
    vocab.df_.push_back(std::stoull(line.substr(t2 + 1)));
  }
  vocab.rebuild_index();
  return vocab;
}

}  // namespace xmlc
