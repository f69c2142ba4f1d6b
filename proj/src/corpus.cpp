// SPDX-License-Identifier: Apache-2.0
#include "xmlc/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "xmlc/binary_io.hpp"
#include "xmlc/error.hpp"
#include "xmlc/rng.hpp"

namespace xmlc {

using nlohmann::json;

LabelVocabulary::LabelVocabulary(std::vector<LabelEntry> entries) : entries_(std::move(entries)) {
  entries_.push_back(LabelEntry{std::string(kStopCode), "STOP", {}});
  index_.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto [it, inserted] = index_.emplace(entries_[i].code, static_cast<LabelId>(i));
    if (!inserted) throw Error("duplicate label code '" + entries_[i].code + "'");
  }
  frequency_.assign(entries_.size(), 0);
}

bool LabelVocabulary::contains(std::string_view code) const { return find(code) != nullptr; }

const LabelId *LabelVocabulary::find(std::string_view code) const {
  auto it = index_.find(std::string(code));
  return it == index_.end() ? nullptr : &it->second;
}

LabelId LabelVocabulary::id_of(std::string_view code) const {
  if (const LabelId *id = find(code)) return *id;
  throw Error("unknown label code '" + std::string(code) + "'");
}

void LabelVocabulary::set_frequencies(std::vector<std::uint64_t> freq) {
  if (freq.size() != entries_.size()) throw Error("frequency table size mismatch");
  freq.back() = 0;
  frequency_ = std::move(freq);
}

std::uint64_t LabelVocabulary::fingerprint() const {
  std::uint64_t h = fnv1a("xmlc-labels");
  for (const auto &e : entries_) {
    h = fnv1a(e.code, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  return h;
}

std::vector<Article> parse_articles(std::istream &in, const std::string &source) {
  std::vector<Article> articles;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto where = source + ":" + std::to_string(line_no);
    Article a;
    try {
      const json obj = json::parse(line);
      if (!obj.is_object()) throw Error(where + ": expected a JSON object");
      a.id = obj.at("id").get<std::string>();
      a.title = obj.value("title", std::string());
      a.abstract_text = obj.value("abstractText", std::string());
      if (auto it = obj.find("decsCodes"); it != obj.end() && !it->is_null()) {
        a.gold = it->get<std::vector<std::string>>();
      }
    } catch (const json::exception &e) {
      throw Error(where + ": malformed article line (" + e.what() + ")");
    }
    if (a.id.empty()) throw Error(where + ": empty article id");
    if (!seen.insert(a.id).second) throw Error(where + ": duplicate article id '" + a.id + "'");
    std::sort(a.gold.begin(), a.gold.end());
    a.gold.erase(std::unique(a.gold.begin(), a.gold.end()), a.gold.end());
    articles.push_back(std::move(a));
  }
  return articles;
}

std::vector<Article> load_articles(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open article file " + path.string());
  return parse_articles(in, path.string());
}

void save_articles(const std::filesystem::path &path, std::span<const Article> articles) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto &a : articles) {
    json obj = {{"id", a.id}, {"title", a.title}, {"abstractText", a.abstract_text}, {"decsCodes", a.gold}};
    out << obj.dump() << '\n';
  }
}

namespace {

std::vector<std::string> split_on(const std::string &s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

}  // namespace

LabelVocabulary parse_vocabulary(std::istream &in, const std::string &source) {
  std::vector<LabelEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_on(line, '\t');
    if (cols.empty() || cols[0].empty()) {
      throw Error(source + ":" + std::to_string(line_no) + ": missing label code");
    }
    LabelEntry e;
    e.code = cols[0];
    e.descriptor = cols.size() > 1 ? cols[1] : std::string();
    if (e.descriptor.empty()) {
      spdlog::warn("{}:{}: empty descriptor for '{}', using the code", source, line_no, e.code);
      e.descriptor = e.code;
    }
    if (cols.size() > 2) {
      for (auto &syn : split_on(cols[2], '|')) {
        if (!syn.empty()) e.synonyms.push_back(std::move(syn));
      }
    }
    if (e.code == LabelVocabulary::kStopCode) {
      throw Error(source + ":" + std::to_string(line_no) + ": reserved code " + e.code);
    }
    entries.push_back(std::move(e));
  }
  try {
    return LabelVocabulary(std::move(entries));
  } catch (const Error &e) {
    throw Error(source + ": " + e.what());
  }
}

LabelVocabulary load_vocabulary(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary file " + path.string());
  return parse_vocabulary(in, path.string());
}

void save_vocabulary(const std::filesystem::path &path, const LabelVocabulary &vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (LabelId id = 0; id < vocab.num_labels(); ++id) {
    const auto &e = vocab.entry(id);
    out << e.code << '\t' << e.descriptor << '\t';
    for (std::size_t i = 0; i < e.synonyms.size(); ++i) out << (i ? "|" : "") << e.synonyms[i];
    out << '\n';
  }
}

LabelVocabulary count_frequencies(const LabelVocabulary &vocab, std::span<const Article> articles) {
  std::vector<std::uint64_t> freq(vocab.size(), 0);
  std::vector<std::string> unknown;
  for (const auto &a : articles) {
    for (const auto &code : a.gold) {
      const LabelId *id = vocab.find(code);
      if (id == nullptr || *id == vocab.stop_label()) {
        unknown.push_back(code);
        continue;
      }
      ++freq[*id];
    }
  }
  if (!unknown.empty()) {
    std::sort(unknown.begin(), unknown.end());
    unknown.erase(std::unique(unknown.begin(), unknown.end()), unknown.end());
    std::string msg = "unknown label codes:";
    for (const auto &c : unknown) msg += " " + c;
    throw Error(msg);
  }
  LabelVocabulary counted = vocab;
  counted.set_frequencies(std::move(freq));
  return counted;
}

DatasetSplit split(std::span<const Article> articles, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw Error("holdout fraction must lie in (0, 1)");
  }
  if (articles.size() < 2) throw Error("split needs at least two articles");
  const std::size_t n = articles.size();
  const auto holdout_n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(n))));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));

  // Holdout membership comes from the shuffle; both sides keep input order.
  std::vector<bool> in_holdout(n, false);
  for (std::size_t i = 0; i < holdout_n; ++i) in_holdout[order[i]] = true;

  DatasetSplit out;
  out.seed = seed;
  out.train.reserve(n - holdout_n);
  out.holdout.reserve(holdout_n);
  for (std::size_t i = 0; i < n; ++i) {
    (in_holdout[i] ? out.holdout : out.train).push_back(articles[i]);
  }
  return out;
}

std::vector<LabelId> gold_ids(const Article &article, const LabelVocabulary &vocab) {
  std::vector<LabelId> ids;
  ids.reserve(article.gold.size());
  for (const auto &code : article.gold) ids.push_back(vocab.id_of(code));
  std::sort(ids.begin(), ids.end());
  return ids;
}

double mean_gold_size(std::span<const Article> articles) {
  if (articles.empty()) return 0.0;
  std::size_t total = 0;
  for (const auto &a : articles) total += a.gold.size();
  return static_cast<double>(total) / static_cast<double>(articles.size());
}

}  // namespace xmlc
