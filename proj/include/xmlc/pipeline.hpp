// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmlc/bm25.hpp"
#include "xmlc/decoder.hpp"
#include "xmlc/ensemble.hpp"
#include "xmlc/featurize.hpp"
#include "xmlc/metrics.hpp"
#include "xmlc/svm_ovr.hpp"
#include "xmlc/synth.hpp"

namespace xmlc {

struct PathsConfig {
  std::filesystem::path train, dev, test, vocab, model_dir;
};

struct PipelineConfig {
  PathsConfig paths;
  std::uint64_t seed = 13;
  double holdout_fraction = 0.05;
  /// 0 keeps the OpenMP default.
  int threads = 0;
  FeatureConfig features;
  SvmConfig svm;
  KnnConfig knn;
  Bm25Params bm25;
  DecoderConfig decoder;
  EnsembleConfig ensemble;
};

/// Reads the sectioned key = value file ([paths], [pipeline], [features],
/// [svm], [knn], [decoder], [ensemble]) and applies "section.key=value"
/// overrides. Relative paths resolve against the file's directory. Unknown
/// keys and out-of-range values throw.
PipelineConfig load_config(const std::filesystem::path &path, const std::vector<std::string> &overrides = {});
PipelineConfig parse_config(std::istream &in, const std::filesystem::path &base_dir,
                            const std::vector<std::string> &overrides = {});

nlohmann::json to_json(const PipelineConfig &cfg);
/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const PipelineConfig &cfg);

/// Names of the commands' model argument.
inline constexpr std::string_view kModelNames[] = {"svm", "knn", "decoder", "ensemble"};

/// Records which collections (and which parts of them) a command touched.
class DataAudit {
 public:
  void note(const std::string &collection, const std::string &what) { access_[collection].insert(what); }
  bool touched(const std::string &collection, const std::string &what) const;
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::set<std::string>> access_;
};

struct CommandResult {
  std::filesystem::path artifact;
  nlohmann::json manifest;
};

void cmd_synth(const SynthConfig &cfg, const std::filesystem::path &out_dir);

/// Parses every configured collection and reports sizes and label statistics.
nlohmann::json cmd_ingest_check(const PipelineConfig &cfg);

/// model in {svm, knn, decoder}. Writes <model>.bin (+ terms.tsv, and the
/// decoder loss log) and <model>.manifest.json under paths.model_dir.
CommandResult cmd_train(const PipelineConfig &cfg, std::string_view model);

/// Calibrates candidate thresholds and trains the rank model on the holdout
/// split, then tunes its decision threshold on dev.
CommandResult cmd_ensemble(const PipelineConfig &cfg);

/// Writes one JSON object per input article: {"id", "labels", "scores"}.
void cmd_predict(const PipelineConfig &cfg, std::string_view model, const std::filesystem::path &input,
                 const std::filesystem::path &output);

/// Matches predictions to gold by id. Throws listing missing ids.
MetricsReport cmd_evaluate(const std::filesystem::path &predictions, const std::filesystem::path &gold);

/// Grid-searches the model's decision threshold for micro F1 on dev and
/// writes <model>.tuned.json; artifacts are left untouched.
nlohmann::json cmd_tune_threshold(const PipelineConfig &cfg, std::string_view model, double lo, double hi,
                                  std::size_t steps);

/// Micro P/R/F1 of all four models on dev and test, written to
/// report.txt and report.json in the model dir.
nlohmann::json cmd_report(const PipelineConfig &cfg);
std::string format_comparison(const nlohmann::json &report);

/// In-process predictions of a trained model on `articles`.
struct Predictions {
  std::vector<std::vector<LabelId>> labels;
  std::vector<LabelScores> scores;
};
Predictions predict_collection(const PipelineConfig &cfg, std::string_view model, std::span<const Article> articles);

}  // namespace xmlc
