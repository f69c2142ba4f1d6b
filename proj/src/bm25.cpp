// SPDX-License-Identifier: Apache-2.0
#include "xmlc/bm25.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>

#include "xmlc/binary_io.hpp"
#include "xmlc/error.hpp"
#include "xmlc/featurize.hpp"

namespace xmlc {

namespace {

constexpr std::string_view kMagic = "XBMI";
constexpr std::uint32_t kVersion = 1;

std::vector<std::string> distinct(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  return tokens;
}

// Heap order: the worst retained neighbour sits on top.
struct WorseFirst {
  bool operator()(const Neighbor &a, const Neighbor &b) const {
    return a.score != b.score ? a.score > b.score : a.doc < b.doc;
  }
};

}  // namespace

std::vector<std::string> label_text_tokens(std::span<const LabelId> labels, const LabelVocabulary &vocab) {
  std::vector<std::string> tokens;
  for (LabelId l : labels) {
    const auto &e = vocab.entry(l);
    for (auto &t : tokenize(e.descriptor)) tokens.push_back(std::move(t));
    for (const auto &syn : e.synonyms) {
      for (auto &t : tokenize(syn)) tokens.push_back(std::move(t));
    }
  }
  return tokens;
}

std::vector<std::string> query_tokens(const Article &article) {
  return distinct(article_tokens(article, true));
}

Bm25Index Bm25Index::build(std::span<const Article> articles, const LabelVocabulary &vocab, Bm25Params params) {
  Bm25Index index;
  index.params_ = params;
  index.vocab_fingerprint_ = vocab.fingerprint();
  const auto n = static_cast<std::uint32_t>(articles.size());
  for (auto &l : index.lengths_) l.assign(n, 0);

  for (std::uint32_t doc = 0; doc < n; ++doc) {
    const Article &a = articles[doc];
    std::vector<LabelId> labels;
    for (const auto &code : a.gold) {
      const LabelId *id = vocab.find(code);
      if (id == nullptr || *id == vocab.stop_label()) {
        throw Error("article '" + a.id + "' carries label '" + code + "' missing from the vocabulary");
      }
      labels.push_back(*id);
    }
    std::sort(labels.begin(), labels.end());

    const std::array<std::vector<std::string>, kNumFields> fields{
        tokenize(a.abstract_text), tokenize(a.title), label_text_tokens(labels, vocab)};
    for (std::size_t f = 0; f < kNumFields; ++f) {
      index.lengths_[f][doc] = static_cast<std::uint32_t>(fields[f].size());
      auto sorted = fields[f];
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        auto [it, inserted] =
            index.term_index_.emplace(sorted[i], static_cast<std::uint32_t>(index.terms_.size()));
        if (inserted) {
          index.terms_.push_back(sorted[i]);
          for (auto &p : index.postings_) p.emplace_back();
        }
        index.postings_[f][it->second].push_back({doc, static_cast<std::uint32_t>(j - i)});
        i = j;
      }
    }
    index.doc_ids_.push_back(a.id);
    index.doc_labels_.push_back(std::move(labels));
  }
  for (std::size_t f = 0; f < kNumFields; ++f) {
    double total = 0.0;
    for (auto len : index.lengths_[f]) total += len;
    index.avg_length_[f] = n > 0 ? total / n : 0.0;
  }
  return index;
}

const std::uint32_t *Bm25Index::term_id(std::string_view term) const {
  auto it = term_index_.find(std::string(term));
  return it == term_index_.end() ? nullptr : &it->second;
}

std::span<const Posting> Bm25Index::postings(Field f, std::string_view term) const {
  const std::uint32_t *id = term_id(term);
  if (id == nullptr) return {};
  return postings_[static_cast<std::size_t>(f)][*id];
}

double Bm25Index::idf(Field f, std::string_view term) const {
  const double df = static_cast<double>(document_frequency(f, term));
  const double n = static_cast<double>(num_docs());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::term_weight(std::size_t field, std::uint32_t term, const Posting &p) const {
  const double df = static_cast<double>(postings_[field][term].size());
  const double n = static_cast<double>(num_docs());
  const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  const double tf = p.tf;
  const double norm = 1.0 - params_.b + params_.b * lengths_[field][p.doc] / avg_length_[field];
  return idf * (tf * (params_.k1 + 1.0)) / (tf + params_.k1 * norm);
}

double Bm25Index::score(std::span<const std::string> query, std::uint32_t doc,
                        const FieldWeights &weights) const {
  const auto terms = distinct({query.begin(), query.end()});
  double s = 0.0;
  for (std::size_t f = 0; f < kNumFields; ++f) {
    if (weights[f] == 0.0) continue;
    for (const auto &t : terms) {
      const std::uint32_t *id = term_id(t);
      if (id == nullptr) continue;
      const auto &list = postings_[f][*id];
      auto it = std::lower_bound(list.begin(), list.end(), doc,
                                 [](const Posting &p, std::uint32_t d) { return p.doc < d; });
      if (it == list.end() || it->doc != doc) continue;
      s += weights[f] * term_weight(f, *id, *it);
    }
  }
  return s;
}

std::vector<Neighbor> Bm25Index::top_k(std::span<const std::string> query, std::size_t k,
                                       const FieldWeights &weights) const {
  const auto terms = distinct({query.begin(), query.end()});
  std::vector<double> acc(num_docs(), 0.0);
  for (std::size_t f = 0; f < kNumFields; ++f) {
    if (weights[f] == 0.0) continue;
    for (const auto &t : terms) {
      const std::uint32_t *id = term_id(t);
      if (id == nullptr) continue;
      for (const Posting &p : postings_[f][*id]) acc[p.doc] += weights[f] * term_weight(f, *id, p);
    }
  }
  std::priority_queue<Neighbor, std::vector<Neighbor>, WorseFirst> heap;
  for (std::uint32_t d = 0; d < acc.size(); ++d) {
    if (!(acc[d] > 0.0)) continue;
    const Neighbor cand{d, acc[d]};
    if (heap.size() < k) {
      heap.push(cand);
    } else if (k > 0 && WorseFirst{}(cand, heap.top())) {
      heap.pop();
      heap.push(cand);
    }
  }
  std::vector<Neighbor> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return out;
}

void Bm25Index::save(const std::filesystem::path &path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  BinaryWriter w(out);
  w.header(kMagic, kVersion);
  w.f64(params_.k1);
  w.f64(params_.b);
  w.u64(vocab_fingerprint_);
  w.u64(doc_ids_.size());
  for (std::size_t d = 0; d < doc_ids_.size(); ++d) {
    w.str(doc_ids_[d]);
    w.u64(doc_labels_[d].size());
    for (LabelId l : doc_labels_[d]) w.u32(l);
    for (std::size_t f = 0; f < kNumFields; ++f) w.u32(lengths_[f][d]);
  }
  w.u64(terms_.size());
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    w.str(terms_[t]);
    for (std::size_t f = 0; f < kNumFields; ++f) {
      w.u64(postings_[f][t].size());
      for (const auto &p : postings_[f][t]) {
        w.u32(p.doc);
        w.u32(p.tf);
      }
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

Bm25Index Bm25Index::load(const std::filesystem::path &path, const LabelVocabulary &vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open BM25 index " + path.string());
  BinaryReader r(in, path.string());
  r.header(kMagic, kVersion);
  Bm25Index index;
  index.params_.k1 = r.f64();
  index.params_.b = r.f64();
  index.vocab_fingerprint_ = r.u64();
  if (index.vocab_fingerprint_ != vocab.fingerprint()) {
    throw Error(path.string() + ": index was built with a different label vocabulary");
  }
  const auto n = r.count(1ULL << 32);
  for (auto &l : index.lengths_) l.resize(n);
  for (std::size_t d = 0; d < n; ++d) {
    index.doc_ids_.push_back(r.str());
    std::vector<LabelId> labels(r.count(vocab.size()));
    for (auto &l : labels) {
      l = r.u32();
      if (l >= vocab.num_labels()) throw Error(path.string() + ": label id out of range");
    }
    index.doc_labels_.push_back(std::move(labels));
    for (std::size_t f = 0; f < kNumFields; ++f) index.lengths_[f][d] = r.u32();
  }
  const auto num_terms = r.count(1ULL << 32);
  for (auto &p : index.postings_) p.resize(num_terms);
  for (std::uint32_t t = 0; t < num_terms; ++t) {
    index.terms_.push_back(r.str());
    index.term_index_.emplace(index.terms_.back(), t);
    for (std::size_t f = 0; f < kNumFields; ++f) {
      auto &list = index.postings_[f][t];
      list.resize(r.count(n));
      for (auto &p : list) {
        p.doc = r.u32();
        p.tf = r.u32();
        if (p.doc >= n) throw Error(path.string() + ": posting refers to an unknown document");
      }
    }
  }
  r.expect_end();
  for (std::size_t f = 0; f < kNumFields; ++f) {
    double total = 0.0;
    for (auto len : index.lengths_[f]) total += len;
    index.avg_length_[f] = n > 0 ? total / static_cast<double>(n) : 0.0;
  }
  return index;
}

LabelScores aggregate_label_scores(std::span<const NeighborScore> neighbors) {
  double alpha_sum = 0.0;
  std::unordered_map<LabelId, double> sums;
  for (const auto &nb : neighbors) {
    alpha_sum += nb.alpha;
    for (LabelId l : nb.labels) sums[l] += nb.alpha;
  }
  LabelScores scores;
  if (!(alpha_sum > 0.0)) return scores;
  scores.reserve(sums.size());
  for (const auto &[label, sum] : sums) {
    if (sum > 0.0) scores.push_back({label, sum / alpha_sum});
  }
  std::sort(scores.begin(), scores.end(), [](const auto &a, const auto &b) { return a.label < b.label; });
  return scores;
}

std::vector<NeighborScore> knn_neighbors(const Bm25Index &index, const Article &query, const KnnConfig &cfg) {
  if (cfg.k < 1) throw Error("k-NN needs k >= 1");
  std::size_t k = cfg.k;
  if (k > index.num_docs()) {
    spdlog::warn("k = {} exceeds the {} indexed articles; clamping", k, index.num_docs());
    k = index.num_docs();
  }
  const auto tokens = query_tokens(query);
  std::vector<NeighborScore> out;
  if (tokens.empty()) return out;
  const auto hits = index.top_k(tokens, k, cfg.field_weights);
  if (hits.empty()) return out;
  const double top = hits.front().score;
  out.reserve(hits.size());
  for (const auto &h : hits) {
    const auto labels = index.doc_labels(h.doc);
    out.push_back({h.doc, h.score / top, {labels.begin(), labels.end()}});
  }
  return out;
}

LabelScores knn_labels(const Bm25Index &index, const Article &query, const KnnConfig &cfg) {
  return aggregate_label_scores(knn_neighbors(index, query, cfg));
}

std::vector<LabelId> knn_predict(const Bm25Index &index, const Article &query, const KnnConfig &cfg) {
  return labels_above(knn_labels(index, query, cfg), cfg.label_threshold);
}

std::vector<LabelScores> knn_labels_batch(const Bm25Index &index, std::span<const Article> queries,
                                          const KnnConfig &cfg, Execution exec) {
  std::vector<LabelScores> out(queries.size());
  for_each_index(queries.size(), [&](std::size_t i) { out[i] = knn_labels(index, queries[i], cfg); }, exec);
  return out;
}

}  // namespace xmlc
