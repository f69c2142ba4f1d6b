// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace xmlc {

/// Label sets are sorted, duplicate-free id lists; ids need not come from a
/// vocabulary (the CLI interns codes).
using LabelSet = std::vector<std::uint32_t>;

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct Counts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
};

/// Harmonic mean; 0 when both are 0.
double f1_score(double precision, double recall);
/// P, R, F1 from counts with 0/0 -> 0.
Prf prf_from_counts(const Counts &c);

Counts count_pairs(std::span<const LabelSet> pred, std::span<const LabelSet> gold);

/// Pooled over all (article, label) pairs.
Prf micro_prf(std::span<const LabelSet> pred, std::span<const LabelSet> gold);
/// Mean of per-label P, R and F1 over labels present in gold or predictions.
Prf macro_prf(std::span<const LabelSet> pred, std::span<const LabelSet> gold);
/// Mean of per-article P, R and F1; an article with empty gold and empty
/// prediction scores 1 on all three.
Prf example_prf(std::span<const LabelSet> pred, std::span<const LabelSet> gold);

struct MetricsReport {
  Prf micro, macro, example;
  Counts counts;
  std::size_t articles = 0;
  /// Labels averaged by the macro scores.
  std::size_t macro_labels = 0;
};

MetricsReport evaluate(std::span<const LabelSet> pred, std::span<const LabelSet> gold);

/// Nine-row text table (muF1, muP, muR, MaF1, ...).
std::string format_report(const MetricsReport &report);
nlohmann::json to_json(const MetricsReport &report);

}  // namespace xmlc
