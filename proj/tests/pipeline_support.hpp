// SPDX-License-Identifier: Apache-2.0
// Synthetic corpus plus the desk configuration, run end to end in a scratch dir.
#pragma once

#include <chrono>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <unordered_map>
#include <string>

#include "support.hpp"
#include "xmlc/pipeline.hpp"

#ifndef XMLC_SOURCE_DIR
#error "XMLC_SOURCE_DIR must point at the source tree"
#endif

namespace xmlc::testing {

inline std::filesystem::path desk_config_path() {
  return std::filesystem::path(XMLC_SOURCE_DIR) / "configs" / "synthetic.toml";
}

/// The desk config with every path redirected into `dir`.
inline PipelineConfig desk_config(const std::filesystem::path &dir, std::vector<std::string> overrides = {}) {
  const std::string d = dir.string();
  std::vector<std::string> all{"paths.train=" + d + "/data/train.jsonl", "paths.dev=" + d + "/data/dev.jsonl",
                               "paths.test=" + d + "/data/test.jsonl", "paths.vocab=" + d + "/data/vocab.tsv",
                               "paths.model_dir=" + d + "/models"};
  all.insert(all.end(), overrides.begin(), overrides.end());
  return load_config(desk_config_path(), all);
}

struct PipelineRun {
  PipelineConfig cfg;
  nlohmann::json manifests;
  nlohmann::json report;
  double seconds = 0.0;
};

/// synth -> train svm, knn, decoder -> ensemble -> report.
inline PipelineRun run_pipeline(const std::filesystem::path &dir, const SynthConfig &synth,
                                std::vector<std::string> overrides = {}) {
  const auto start = std::chrono::steady_clock::now();
  cmd_synth(synth, dir / "data");
  PipelineRun run{desk_config(dir, std::move(overrides)), {}, {}, 0.0};
  for (const char *model : {"svm", "knn", "decoder"}) run.manifests[model] = cmd_train(run.cfg, model).manifest;
  run.manifests["ensemble"] = cmd_ensemble(run.cfg).manifest;
  run.report = cmd_report(run.cfg);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

struct DfScan {
  std::size_t signature_terms_seen = 0;
  /// Signature terms whose every train occurrence sits in an article of their label.
  std::size_t signature_terms_owned = 0;
  /// Noise terms with df >= 20, and those among them seen with two or more labels.
  std::size_t frequent_noise_terms = 0;
  std::size_t shared_noise_terms = 0;
};

/// Recovers label signatures from document frequencies alone.
inline DfScan df_scan(const SynthCorpus &corpus) {
  std::unordered_map<std::string, std::size_t> df, df_with_owner;
  std::unordered_map<std::string, std::set<std::string>> cooccur;
  std::unordered_map<std::string, std::string> owner;
  for (LabelId l = 0; l < corpus.signatures.size(); ++l) {
    for (const auto &w : corpus.signatures[l]) owner[w] = corpus.vocab.code(l);
  }
  for (const auto &art : corpus.train) {
    const auto tokens = tokenize(art.title + " " + art.abstract_text);
    const std::set<std::string> words(tokens.begin(), tokens.end());
    for (const auto &w : words) {
      ++df[w];
      cooccur[w].insert(art.gold.begin(), art.gold.end());
      const auto it = owner.find(w);
      if (it != owner.end() && std::find(art.gold.begin(), art.gold.end(), it->second) != art.gold.end()) {
        ++df_with_owner[w];
      }
    }
  }
  DfScan out;
  for (const auto &[w, code] : owner) {
    if (df[w] == 0) continue;
    ++out.signature_terms_seen;
    out.signature_terms_owned += df_with_owner[w] == df[w] ? 1 : 0;
  }
  for (const auto &w : corpus.noise) {
    if (df[w] < 20) continue;
    ++out.frequent_noise_terms;
    out.shared_noise_terms += cooccur[w].size() > 1 ? 1 : 0;
  }
  return out;
}

inline std::string read_bytes(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Every file under `dir` by relative path; manifests lose their timings.
inline std::map<std::string, std::string> artifact_bytes(const std::filesystem::path &dir) {
  std::map<std::string, std::string> out;
  for (const auto &e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = std::filesystem::relative(e.path(), dir).string();
    if (rel.ends_with(".manifest.json")) {
      auto j = nlohmann::json::parse(read_bytes(e.path()));
      j.erase("durations_ms");
      out[rel] = j.dump();
    } else {
      out[rel] = read_bytes(e.path());
    }
  }
  return out;
}

}  // namespace xmlc::testing
