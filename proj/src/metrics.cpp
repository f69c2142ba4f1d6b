// SPDX-License-Identifier: Apache-2.0
#include "xmlc/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "xmlc/error.hpp"

namespace xmlc {

namespace {

void check_sizes(std::span<const LabelSet> pred, std::span<const LabelSet> gold) {
  if (pred.empty()) throw Error("metrics need at least one article");
  if (pred.size() != gold.size()) throw Error("metrics: prediction and gold collections differ in length");
}

Counts count_one(const LabelSet &pred, const LabelSet &gold) {
  Counts c;
  std::size_t i = 0, j = 0;
  while (i < pred.size() && j < gold.size()) {
    if (pred[i] < gold[j]) {
      ++c.fp;
      ++i;
    } else if (pred[i] > gold[j]) {
      ++c.fn;
      ++j;
    } else {
      ++c.tp;
      ++i;
      ++j;
    }
  }
  c.fp += pred.size() - i;
  c.fn += gold.size() - j;
  return c;
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

Prf prf_from_counts(const Counts &c) {
  Prf p;
  p.precision = ratio(c.tp, c.tp + c.fp);
  p.recall = ratio(c.tp, c.tp + c.fn);
  p.f1 = f1_score(p.precision, p.recall);
  return p;
}

Counts count_pairs(std::span<const LabelSet> pred, std::span<const LabelSet> gold) {
  check_sizes(pred, gold);
  Counts total;
  for (std::size_t a = 0; a < pred.size(); ++a) {
    const Counts c = count_one(pred[a], gold[a]);
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
  }
  return total;
}

Prf micro_prf(std::span<const LabelSet> pred, std::span<const LabelSet> gold) {
  return prf_from_counts(count_pairs(pred, gold));
}

Prf macro_prf(std::span<const LabelSet> pred, std::span<const LabelSet> gold) {
  check_sizes(pred, gold);
  std::map<std::uint32_t, Counts> per_label;
  for (std::size_t a = 0; a < pred.size(); ++a) {
    for (auto l : pred[a]) {
      if (std::binary_search(gold[a].begin(), gold[a].end(), l)) {
        ++per_label[l].tp;
      } else {
        ++per_label[l].fp;
      }
    }
    for (auto l : gold[a]) {
      if (!std::binary_search(pred[a].begin(), pred[a].end(), l)) ++per_label[l].fn;
    }
  }
  Prf out;
  if (per_label.empty()) return out;
  for (const auto &[label, c] : per_label) {
    const Prf p = prf_from_counts(c);
    out.precision += p.precision;
    out.recall += p.recall;
    out.f1 += p.f1;
  }
  const double n = static_cast<double>(per_label.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

Prf example_prf(std::span<const LabelSet> pred, std::span<const LabelSet> gold) {
  check_sizes(pred, gold);
  Prf out;
  for (std::size_t a = 0; a < pred.size(); ++a) {
    if (pred[a].empty() && gold[a].empty()) {
      out.precision += 1.0;
      out.recall += 1.0;
      out.f1 += 1.0;
      continue;
    }
    const Prf p = prf_from_counts(count_one(pred[a], gold[a]));
    out.precision += p.precision;
    out.recall += p.recall;
    out.f1 += p.f1;
  }
  const double n = static_cast<double>(pred.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

MetricsReport evaluate(std::span<const LabelSet> pred, std::span<const LabelSet> gold) {
  MetricsReport r;
  r.counts = count_pairs(pred, gold);
  r.micro = prf_from_counts(r.counts);
  r.macro = macro_prf(pred, gold);
  r.example = example_prf(pred, gold);
  r.articles = pred.size();
  std::vector<std::uint32_t> labels;
  for (std::size_t a = 0; a < pred.size(); ++a) {
    labels.insert(labels.end(), pred[a].begin(), pred[a].end());
    labels.insert(labels.end(), gold[a].begin(), gold[a].end());
  }
  std::sort(labels.begin(), labels.end());
  r.macro_labels = static_cast<std::size_t>(std::unique(labels.begin(), labels.end()) - labels.begin());
  return r;
}

std::string format_report(const MetricsReport &r) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "# %zu articles; macro averages over %zu labels seen in gold or predictions\n",
                r.articles, r.macro_labels);
  out += line;
  const std::pair<const char *, double> rows[] = {
      {"MiF1", r.micro.f1},   {"MiP", r.micro.precision},   {"MiR", r.micro.recall},
      {"MaF1", r.macro.f1},   {"MaP", r.macro.precision},   {"MaR", r.macro.recall},
      {"EbF1", r.example.f1}, {"EbP", r.example.precision}, {"EbR", r.example.recall},
  };
  for (const auto &[name, value] : rows) {
    std::snprintf(line, sizeof line, "%-6s %.4f\n", name, value);
    out += line;
  }
  return out;
}

nlohmann::json to_json(const MetricsReport &r) {
  auto prf = [](const Prf &p) { return nlohmann::json{{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}}; };
  return nlohmann::json{
      {"articles", r.articles},
      {"macro_labels", r.macro_labels},
      {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}}},
      {"micro", prf(r.micro)},
      {"macro", prf(r.macro)},
      {"example", prf(r.example)},
  };
}

}  // namespace xmlc
