// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmlc/corpus.hpp"
#include "xmlc/featurize.hpp"
#include "xmlc/label_scores.hpp"
#include "xmlc/parallel.hpp"

namespace xmlc {

/// Units of the plane shift: signed distance (w.x + b) / |w|, or the raw
/// margin w.x + b.
enum class ShiftUnits : std::uint8_t { distance = 0, margin = 1 };

std::string to_string(ShiftUnits u);
ShiftUnits parse_shift_units(std::string_view s);

struct SvmConfig {
  double C = 1.0;
  /// Labels carried by fewer training articles get no classifier.
  std::uint64_t min_label_frequency = 20;
  /// Decision threshold, expressed in shift_units.
  double plane_shift = -0.3;
  ShiftUnits shift_units = ShiftUnits::distance;
  std::uint64_t max_iterations = 1000;
  double tolerance = 0.1;
  std::uint64_t seed = 1;
};

struct LabelHyperplane {
  LabelId label = 0;
  SparseVector w;
  double bias = 0.0;
  /// |w| (bias excluded), cached for the signed distance.
  double norm = 0.0;
};

/// One binary squared-hinge SVM per sufficiently frequent label.
class SvmOvrModel {
 public:
  SvmOvrModel() = default;
  SvmOvrModel(std::size_t dim, double plane_shift, std::uint64_t vocab_fingerprint,
              std::vector<LabelHyperplane> planes, ShiftUnits units = ShiftUnits::distance);

  std::size_t dim() const { return dim_; }
  double plane_shift() const { return plane_shift_; }
  void set_plane_shift(double shift) { plane_shift_ = shift; }
  ShiftUnits shift_units() const { return units_; }
  std::uint64_t vocab_fingerprint() const { return vocab_fingerprint_; }
  std::span<const LabelHyperplane> hyperplanes() const { return planes_; }
  std::vector<LabelId> trained_labels() const;

  /// Signed distance to each trained label's hyperplane. A zero normal
  /// degenerates to the bias.
  LabelScores score(const SparseVector &x) const;
  std::vector<LabelId> predict(const SparseVector &x) const { return predict(x, plane_shift_); }
  /// Labels whose distance (or margin, per shift_units) exceeds `shift`.
  std::vector<LabelId> predict(const SparseVector &x, double shift) const;

  void save(const std::filesystem::path &path) const;
  /// Throws if the file was trained against a different label vocabulary.
  static SvmOvrModel load(const std::filesystem::path &path, const LabelVocabulary &vocab);

 private:
  std::size_t dim_ = 0;
  double plane_shift_ = 0.0;
  ShiftUnits units_ = ShiftUnits::distance;
  std::uint64_t vocab_fingerprint_ = 0;
  std::vector<LabelHyperplane> planes_;
};

/// Labels meeting the frequency cutoff within `gold`, in id order.
std::vector<LabelId> labels_meeting_cutoff(std::span<const std::vector<LabelId>> gold,
                                           std::size_t num_labels, std::uint64_t min_frequency);

/// Trains the binary problem of one label (+1 iff the label is in the gold set).
LabelHyperplane train_label(std::span<const SparseVector> x, std::span<const std::vector<LabelId>> gold,
                            LabelId label, std::size_t dim, const SvmConfig &cfg);

/// Label problems are independent; `exec` picks the OpenMP kernel or the
/// serial reference, both give identical models.
SvmOvrModel train_ovr(std::span<const SparseVector> x, std::span<const std::vector<LabelId>> gold,
                      std::size_t dim, const LabelVocabulary &vocab, const SvmConfig &cfg,
                      Execution exec = Execution::parallel);

}  // namespace xmlc
