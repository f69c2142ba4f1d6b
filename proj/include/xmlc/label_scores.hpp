// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "xmlc/corpus.hpp"

namespace xmlc {

struct LabelScore {
  LabelId label;
  double score;

  bool operator==(const LabelScore &) const = default;
};

/// Per-article label -> score map emitted by every model, sorted by label id.
using LabelScores = std::vector<LabelScore>;

inline std::optional<double> find_score(const LabelScores &scores, LabelId label) {
  auto it = std::lower_bound(scores.begin(), scores.end(), label,
                             [](const LabelScore &s, LabelId l) { return s.label < l; });
  if (it == scores.end() || it->label != label) return std::nullopt;
  return it->score;
}

/// Labels whose score is strictly above `threshold`, in label order.
inline std::vector<LabelId> labels_above(const LabelScores &scores, double threshold) {
  std::vector<LabelId> out;
  for (const auto &s : scores) {
    if (s.score > threshold) out.push_back(s.label);
  }
  return out;
}

}  // namespace xmlc
