// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xmlc/corpus.hpp"
#include "xmlc/label_scores.hpp"
#include "xmlc/parallel.hpp"

namespace xmlc {

/// Order of the individual models inside every per-model array.
enum class BaseModel : std::uint8_t { svm = 0, knn = 1, decoder = 2 };
inline constexpr std::size_t kNumBaseModels = 3;
inline constexpr std::size_t kNumRankFeatures = 7;

using ModelThresholds = std::array<double, kNumBaseModels>;
/// Raw scores of one article from the three models.
using ModelScores = std::array<LabelScores, kNumBaseModels>;
/// [s_svm, s_knn, s_dec, s_svm*s_knn, s_svm*s_dec, s_knn*s_dec, s_svm*s_knn*s_dec]
using RankFeatures = std::array<double, kNumRankFeatures>;

std::string to_string(BaseModel m);

/// Where min-max statistics come from at prediction time.
enum class Normalization : std::uint8_t {
  batch = 0,   // the candidate pool of the batch being scored
  stored = 1,  // the holdout pool seen during training (clamped to [0, 1])
};

std::string to_string(Normalization n);
Normalization parse_normalization(std::string_view s);

struct EnsembleConfig {
  double C = 0.1;
  /// Values of C tried by the ensemble command, each with its own threshold
  /// search on dev; the best dev micro F1 wins (earlier entry on ties). An
  /// empty grid trains with C alone.
  std::vector<double> C_grid = {0.01, 0.1, 1.0, 10.0, 100.0};
  std::size_t max_pairs_per_article = 50;
  double decision_threshold = -0.0233;
  double tune_min = -0.5;
  double tune_max = 0.5;
  std::size_t tune_steps = 201;
  /// Calibration window as multiples of the mean gold-set size.
  double calibration_low = 1.9;
  double calibration_high = 2.1;
  /// Subtract the holdout feature mean before scoring. Pairwise training is
  /// blind to a constant shift, so this only moves the score origin.
  bool center_features = true;
  Normalization normalization = Normalization::batch;
  std::uint64_t seed = 1;
  std::uint64_t max_iterations = 1000;
  double tolerance = 0.01;
};

struct ScoreRange {
  double min = 0.0;
  double max = 0.0;
};

/// Number of scores strictly above `threshold`, averaged over articles.
double mean_predicted(std::span<const LabelScores> scores, double threshold);

struct ThresholdCalibration {
  double threshold = 0.0;
  double mean_predicted = 0.0;
  bool reached = false;
};

/// Binary search over the distinct scores for a threshold whose mean
/// prediction count lies in [low, high]. `initial` is kept when it already
/// does. When even predicting every scored label stays below `low`, the
/// threshold just under the smallest score is returned with reached = false.
ThresholdCalibration calibrate_threshold(std::span<const LabelScores> scores, double initial, double low,
                                         double high);

struct CandidateCalibration {
  ModelThresholds thresholds{};
  std::array<double, kNumBaseModels> mean_predicted{};
  std::array<bool, kNumBaseModels> reached{};
  double mean_gold = 0.0;
};

/// Calibrates every model to mean predicted in [low, high] x mean gold size.
CandidateCalibration calibrate_candidate_thresholds(std::span<const ModelScores> scores,
                                                    std::span<const std::vector<LabelId>> gold,
                                                    const ModelThresholds &initial, const EnsembleConfig &cfg);

/// Union of the labels each model scores above its threshold, sorted.
std::vector<LabelId> candidates(const ModelScores &scores, const ModelThresholds &thresholds);

/// Min-max statistics of each model over its own candidates in the batch,
/// i.e. the raw scores above its threshold.
std::array<ScoreRange, kNumBaseModels> candidate_score_ranges(std::span<const ModelScores> scores,
                                                              const ModelThresholds &thresholds);

/// (s - min) / (max - min) clamped to [0, 1]; 0.5 when max == min.
double normalize_score(double raw, const ScoreRange &range);
LabelScores normalize_scores(const LabelScores &raw, const ScoreRange &range);

/// Normalized triplet; a missing score counts as 0.
RankFeatures build_features(double s_svm, double s_knn, double s_dec);

struct Candidate {
  LabelId label = 0;
  RankFeatures features{};
  bool operator==(const Candidate &) const = default;
};

/// Candidates of every article with their features. A model contributes a
/// score only for the candidates it proposed itself; elsewhere it is missing.
std::vector<std::vector<Candidate>> build_candidate_features(std::span<const ModelScores> scores,
                                                             const ModelThresholds &thresholds,
                                                             const std::array<ScoreRange, kNumBaseModels> &ranges,
                                                             Execution exec = Execution::parallel);

class RankModel {
 public:
  std::array<double, kNumRankFeatures> weights{};
  std::array<double, kNumRankFeatures> center{};
  double threshold = -0.0233;
  double C = 0.1;
  ModelThresholds candidate_thresholds{};
  std::array<ScoreRange, kNumBaseModels> ranges{};
  Normalization normalization = Normalization::batch;
  std::uint64_t vocab_fingerprint = 0;

  double score(const RankFeatures &f) const;

  /// Feature construction for a batch under this model's normalization rule.
  std::vector<std::vector<Candidate>> features(std::span<const ModelScores> scores,
                                               Execution exec = Execution::parallel) const;

  void save(const std::filesystem::path &path) const;
  static RankModel load(const std::filesystem::path &path);
};

struct RankTrainingStats {
  std::size_t pairs = 0;
  std::size_t articles_with_pairs = 0;
  std::uint64_t epochs = 0;
  bool converged = false;
};

/// Pairwise ranking SVM on difference vectors f+ - f- (no bias), at most
/// cfg.max_pairs_per_article pairs per article sampled with a fixed seed.
RankModel train_rank(std::span<const std::vector<Candidate>> candidates, std::span<const std::vector<LabelId>> gold,
                     const EnsembleConfig &cfg, RankTrainingStats *stats = nullptr);

struct ThresholdSearch {
  double threshold = 0.0;
  double micro_f1 = 0.0;
  /// micro F1 at every grid point, in grid order.
  std::vector<double> grid_f1;
};

/// Grid search maximizing micro F1; ties go to the smaller threshold. Gold
/// labels outside the candidate set count as false negatives.
ThresholdSearch tune_threshold(std::span<const std::vector<LabelScore>> scored,
                               std::span<const std::vector<LabelId>> gold, double lo, double hi,
                               std::size_t steps);

/// Rank scores of every candidate under `model`.
std::vector<LabelScores> rank_scores(const RankModel &model, std::span<const std::vector<Candidate>> candidates);

std::vector<LabelId> predict_ensemble(const RankModel &model, std::span<const Candidate> candidates);

}  // namespace xmlc
