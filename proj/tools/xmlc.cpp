// SPDX-License-Identifier: Apache-2.0
// Command-line front end for the multi-label pipeline.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "xmlc/error.hpp"
#include "xmlc/pipeline.hpp"

namespace {

xmlc::PipelineConfig load(const std::string &path, const std::vector<std::string> &overrides) {
  auto cfg = xmlc::load_config(path, overrides);
  xmlc::set_max_threads(cfg.threads);
  return cfg;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Extreme multi-label text classification: SVM, BM25 k-NN, label decoder and rank ensemble"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  auto with_config = [&](CLI::App *sub) {
    sub->add_option("-c,--config", config_path, "Pipeline config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a config entry, e.g. --set svm.C=0.5");
  };

  xmlc::SynthConfig synth;
  std::string synth_out;
  auto *synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus and label vocabulary");
  synth_cmd->add_option("-o,--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--articles", synth.n_articles, "Training articles")->capture_default_str();
  synth_cmd->add_option("--labels", synth.n_labels, "Number of labels")->capture_default_str();
  synth_cmd->add_option("--terms-per-label", synth.terms_per_label, "Signature terms per label")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--zipf", synth.zipf_exponent, "Label popularity exponent")->capture_default_str();
  synth_cmd->add_option("--dev", synth.dev_articles, "Dev articles")->capture_default_str();
  synth_cmd->add_option("--test", synth.test_articles, "Test articles")->capture_default_str();
  synth_cmd->add_option("--noise-terms", synth.noise_terms, "Shared noise vocabulary size")->capture_default_str();

  auto *ingest_cmd = app.add_subcommand("ingest-check", "Parse the configured collections and print statistics");
  with_config(ingest_cmd);

  std::string model;
  auto *train_cmd = app.add_subcommand("train", "Train one individual model");
  with_config(train_cmd);
  train_cmd->add_option("model", model, "svm, knn or decoder")->required()->check(CLI::IsMember({"svm", "knn", "decoder"}));

  auto *ensemble_cmd = app.add_subcommand("ensemble", "Calibrate candidates, train the rank model and tune its threshold");
  with_config(ensemble_cmd);

  std::string input, output;
  auto *predict_cmd = app.add_subcommand("predict", "Write predictions as JSONL");
  with_config(predict_cmd);
  predict_cmd->add_option("model", model, "svm, knn, decoder or ensemble")->required();
  predict_cmd->add_option("-i,--input", input, "Articles (JSONL)")->required();
  predict_cmd->add_option("-o,--output", output, "Predictions (JSONL)")->required();

  std::string predictions, gold, json_out;
  auto *eval_cmd = app.add_subcommand("evaluate", "Score a predictions file against gold articles");
  eval_cmd->add_option("predictions", predictions, "Predictions JSONL")->required();
  eval_cmd->add_option("gold", gold, "Gold articles JSONL")->required();
  eval_cmd->add_option("--json", json_out, "Also write the report as JSON");

  double lo = -0.5, hi = 0.5;
  std::size_t steps = 201;
  auto *tune_cmd = app.add_subcommand("tune-threshold", "Grid-search a model's decision threshold on dev");
  with_config(tune_cmd);
  tune_cmd->add_option("model", model, "svm, knn, decoder or ensemble")->required();
  tune_cmd->add_option("--min", lo, "Interval start")->capture_default_str();
  tune_cmd->add_option("--max", hi, "Interval end")->capture_default_str();
  tune_cmd->add_option("--steps", steps, "Grid points")->capture_default_str();

  auto *report_cmd = app.add_subcommand("report", "Compare all four models on dev and test");
  with_config(report_cmd);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

  try {
    if (synth_cmd->parsed()) {
      xmlc::cmd_synth(synth, synth_out);
    } else if (ingest_cmd->parsed()) {
      std::cout << xmlc::cmd_ingest_check(load(config_path, overrides)).dump(2) << '\n';
    } else if (train_cmd->parsed()) {
      const auto r = xmlc::cmd_train(load(config_path, overrides), model);
      std::cout << "wrote " << r.artifact.string() << '\n';
    } else if (ensemble_cmd->parsed()) {
      const auto r = xmlc::cmd_ensemble(load(config_path, overrides));
      std::cout << "wrote " << r.artifact.string() << " (threshold " << r.manifest["threshold"]["tuned"].get<double>()
                << ")\n";
    } else if (predict_cmd->parsed()) {
      xmlc::cmd_predict(load(config_path, overrides), model, input, output);
    } else if (eval_cmd->parsed()) {
      const auto report = xmlc::cmd_evaluate(predictions, gold);
      std::cout << xmlc::format_report(report);
      if (!json_out.empty()) {
        std::ofstream out(json_out, std::ios::binary);
        if (!out) throw xmlc::Error("cannot write " + json_out);
        out << xmlc::to_json(report).dump(2) << '\n';
      }
    } else if (tune_cmd->parsed()) {
      std::cout << xmlc::cmd_tune_threshold(load(config_path, overrides), model, lo, hi, steps).dump(2) << '\n';
    } else if (report_cmd->parsed()) {
      std::cout << xmlc::format_comparison(xmlc::cmd_report(load(config_path, overrides)));
    }
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
