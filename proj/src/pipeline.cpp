// SPDX-License-Identifier: Apache-2.0
#include "xmlc/pipeline.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "xmlc/binary_io.hpp"
#include "xmlc/error.hpp"

namespace xmlc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config parsing

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

double to_double(const std::string &key, const std::string &v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception &) {
  }
  throw Error("config " + key + ": expected a number, got '" + v + "'");
}

std::uint64_t to_u64(const std::string &key, const std::string &v) {
  if (!v.empty() && v.find_first_not_of("0123456789") == std::string::npos) {
    try {
      return std::stoull(v);
    } catch (const std::exception &) {
    }
  }
  throw Error("config " + key + ": expected a non-negative integer, got '" + v + "'");
}

bool to_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config " + key + ": expected true or false, got '" + v + "'");
}

std::vector<double> to_double_list(const std::string &key, const std::string &v) {
  std::vector<double> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    out.push_back(to_double(key, item.substr(first, item.find_last_not_of(" \t") - first + 1)));
  }
  return out;
}

using Setter = std::function<void(PipelineConfig &, const std::string &key, const std::string &value)>;

std::unordered_map<std::string, Setter> make_setters(const fs::path &base_dir) {
  std::unordered_map<std::string, Setter> s;
  auto path_field = [&base_dir](fs::path PathsConfig::*field) {
    return [base_dir, field](PipelineConfig &c, const std::string &, const std::string &v) {
      fs::path p(v);
      c.paths.*field = v.empty() ? fs::path() : (p.is_absolute() ? p : (base_dir / p).lexically_normal());
    };
  };
  s["paths.train"] = path_field(&PathsConfig::train);
  s["paths.dev"] = path_field(&PathsConfig::dev);
  s["paths.test"] = path_field(&PathsConfig::test);
  s["paths.vocab"] = path_field(&PathsConfig::vocab);
  s["paths.model_dir"] = path_field(&PathsConfig::model_dir);

#define XMLC_NUM(key, expr) s[key] = [](PipelineConfig &c, const std::string &k, const std::string &v) { expr = to_double(k, v); }
#define XMLC_INT(key, expr) s[key] = [](PipelineConfig &c, const std::string &k, const std::string &v) { expr = to_u64(k, v); }
#define XMLC_BOOL(key, expr) s[key] = [](PipelineConfig &c, const std::string &k, const std::string &v) { expr = to_bool(k, v); }
#define XMLC_STR(key, expr) s[key] = [](PipelineConfig &c, const std::string &, const std::string &v) { expr; }

  XMLC_INT("pipeline.seed", c.seed);
  XMLC_NUM("pipeline.holdout_fraction", c.holdout_fraction);
  XMLC_INT("pipeline.threads", c.threads);

  XMLC_INT("features.min_df", c.features.min_df);
  XMLC_NUM("features.max_df_ratio", c.features.max_df_ratio);
  XMLC_BOOL("features.include_title", c.features.include_title);
  XMLC_INT("features.ngram_order", c.features.ngram_order);

  XMLC_NUM("svm.C", c.svm.C);
  XMLC_INT("svm.min_label_frequency", c.svm.min_label_frequency);
  XMLC_NUM("svm.plane_shift", c.svm.plane_shift);
  XMLC_STR("svm.shift_units", c.svm.shift_units = parse_shift_units(v));
  XMLC_INT("svm.max_iterations", c.svm.max_iterations);
  XMLC_NUM("svm.tolerance", c.svm.tolerance);

  XMLC_INT("knn.k", c.knn.k);
  XMLC_NUM("knn.label_threshold", c.knn.label_threshold);
  XMLC_NUM("knn.weight_abstract", c.knn.field_weights[0]);
  XMLC_NUM("knn.weight_title", c.knn.field_weights[1]);
  XMLC_NUM("knn.weight_label_text", c.knn.field_weights[2]);
  XMLC_NUM("knn.k1", c.bm25.k1);
  XMLC_NUM("knn.b", c.bm25.b);

  XMLC_INT("decoder.embedding_dim", c.decoder.embedding_dim);
  XMLC_INT("decoder.hidden_dim", c.decoder.hidden_dim);
  XMLC_STR("decoder.head", c.decoder.head = parse_head(v));
  XMLC_STR("decoder.loss", c.decoder.loss = parse_loss(v));
  XMLC_STR("decoder.order", c.decoder.order = parse_order(v));
  XMLC_BOOL("decoder.masked", c.decoder.masked);
  XMLC_INT("decoder.max_steps", c.decoder.max_steps);
  XMLC_INT("decoder.batch_size", c.decoder.batch_size);
  XMLC_NUM("decoder.learning_rate", c.decoder.learning_rate);
  XMLC_INT("decoder.warmup_steps", c.decoder.warmup_steps);
  XMLC_NUM("decoder.dropout", c.decoder.dropout);
  XMLC_INT("decoder.epochs", c.decoder.epochs);
  XMLC_STR("decoder.optimizer", c.decoder.optimizer = parse_optimizer(v));
  XMLC_NUM("decoder.init_scale", c.decoder.init_scale);
  XMLC_NUM("decoder.threshold", c.decoder.threshold);
  XMLC_INT("decoder.grad_check_coords", c.decoder.grad_check_coords);
  XMLC_NUM("decoder.grad_check_tolerance", c.decoder.grad_check_tolerance);

  XMLC_NUM("ensemble.C", c.ensemble.C);
  s["ensemble.C_grid"] = [](PipelineConfig &c, const std::string &k, const std::string &v) {
    c.ensemble.C_grid = to_double_list(k, v);
  };
  XMLC_INT("ensemble.max_pairs_per_article", c.ensemble.max_pairs_per_article);
  XMLC_NUM("ensemble.decision_threshold", c.ensemble.decision_threshold);
  XMLC_NUM("ensemble.tune_min", c.ensemble.tune_min);
  XMLC_NUM("ensemble.tune_max", c.ensemble.tune_max);
  XMLC_INT("ensemble.tune_steps", c.ensemble.tune_steps);
  XMLC_NUM("ensemble.calibration_low", c.ensemble.calibration_low);
  XMLC_NUM("ensemble.calibration_high", c.ensemble.calibration_high);
  XMLC_BOOL("ensemble.center_features", c.ensemble.center_features);
  XMLC_STR("ensemble.normalization", c.ensemble.normalization = parse_normalization(v));
  XMLC_INT("ensemble.max_iterations", c.ensemble.max_iterations);
  XMLC_NUM("ensemble.tolerance", c.ensemble.tolerance);

#undef XMLC_NUM
#undef XMLC_INT
#undef XMLC_BOOL
#undef XMLC_STR
  return s;
}

void validate(const PipelineConfig &c) {
  auto require = [](bool ok, const std::string &msg) {
    if (!ok) throw Error("config: " + msg);
  };
  require(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0, "pipeline.holdout_fraction must lie in (0, 1)");
  require(c.features.ngram_order >= 1, "features.ngram_order must be at least 1");
  require(c.features.max_df_ratio > 0.0 && c.features.max_df_ratio <= 1.0, "features.max_df_ratio must lie in (0, 1]");
  require(c.svm.C > 0.0, "svm.C must be positive");
  require(c.svm.min_label_frequency >= 1, "svm.min_label_frequency must be at least 1");
  require(c.svm.tolerance > 0.0, "svm.tolerance must be positive");
  require(c.knn.k >= 1, "knn.k must be at least 1");
  const auto &w = c.knn.field_weights;
  require(std::all_of(w.begin(), w.end(), [](double x) { return x >= 0.0; }), "knn field weights must be >= 0");
  require(std::any_of(w.begin(), w.end(), [](double x) { return x > 0.0; }), "knn field weights must not all be 0");
  require(c.bm25.k1 >= 0.0 && c.bm25.b >= 0.0 && c.bm25.b <= 1.0, "knn.k1 must be >= 0 and knn.b in [0, 1]");
  require(c.decoder.embedding_dim >= 2, "decoder.embedding_dim must be at least 2");
  require(c.decoder.hidden_dim >= 1, "decoder.hidden_dim must be positive");
  require(c.decoder.batch_size >= 1, "decoder.batch_size must be positive");
  require(c.decoder.max_steps >= 1, "decoder.max_steps must be positive");
  require(c.decoder.learning_rate > 0.0, "decoder.learning_rate must be positive");
  require(c.decoder.dropout >= 0.0 && c.decoder.dropout < 1.0, "decoder.dropout must lie in [0, 1)");
  require(c.ensemble.C > 0.0, "ensemble.C must be positive");
  for (double C : c.ensemble.C_grid) require(C > 0.0, "ensemble.C_grid values must be positive");
  require(c.ensemble.tune_steps >= 1, "ensemble.tune_steps must be positive");
  require(c.ensemble.tune_min <= c.ensemble.tune_max, "ensemble.tune_min must not exceed tune_max");
  require(c.ensemble.calibration_low > 0.0 && c.ensemble.calibration_low <= c.ensemble.calibration_high,
          "ensemble calibration window must satisfy 0 < low <= high");
}

// ---------------------------------------------------------------------------
// Shared helpers

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void require_file(const fs::path &p, const std::string &what) {
  if (p.empty()) throw Error(what + " is not configured");
  if (!fs::is_regular_file(p)) throw Error(what + " not found: " + p.string());
}

fs::path model_dir(const PipelineConfig &cfg) {
  if (cfg.paths.model_dir.empty()) throw Error("paths.model_dir is not configured");
  return cfg.paths.model_dir;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_digest(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

void write_json(const fs::path &p, const json &j) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

json base_manifest(const PipelineConfig &cfg, const std::string &command, const fs::path &artifact) {
  return json{{"command", command},
              {"artifact", artifact.filename().string()},
              {"artifact_bytes", fs::file_size(artifact)},
              {"artifact_fnv1a", file_digest(artifact)},
              {"config_hash", config_hash(cfg)},
              {"seed", cfg.seed}};
}

struct Workspace {
  LabelVocabulary vocab;
  DatasetSplit split;
};

Workspace load_workspace(const PipelineConfig &cfg, DataAudit &audit) {
  Workspace ws;
  const auto articles = load_articles(cfg.paths.train);
  ws.split = split(articles, cfg.holdout_fraction, cfg.seed);
  ws.vocab = count_frequencies(load_vocabulary(cfg.paths.vocab), ws.split.train);
  audit.note("train_split", "text");
  audit.note("train_split", "gold");
  return ws;
}

std::vector<std::vector<LabelId>> gold_of(std::span<const Article> articles, const LabelVocabulary &vocab) {
  std::vector<std::vector<LabelId>> out;
  out.reserve(articles.size());
  for (const auto &a : articles) out.push_back(gold_ids(a, vocab));
  return out;
}

// ---------------------------------------------------------------------------
// Model loading and batch scoring

struct Models {
  LabelVocabulary vocab;
  std::optional<TermVocabulary> terms;
  std::optional<SvmOvrModel> svm;
  std::optional<Bm25Index> knn;
  std::optional<DecoderModel> decoder;
  std::optional<RankModel> rank;
};

fs::path artifact_path(const PipelineConfig &cfg, std::string_view model) {
  return model_dir(cfg) / (std::string(model) + ".bin");
}

void check_model_name(std::string_view model) {
  if (std::find(std::begin(kModelNames), std::end(kModelNames), model) == std::end(kModelNames)) {
    throw Error("unknown model '" + std::string(model) + "' (expected svm, knn, decoder or ensemble)");
  }
}

Models load_models(const PipelineConfig &cfg, std::string_view model) {
  check_model_name(model);
  require_file(cfg.paths.vocab, "paths.vocab");
  const bool all = model == "ensemble";
  std::vector<std::string> needed;
  if (model == "svm" || model == "decoder" || all) needed.push_back("terms.tsv");
  if (model == "svm" || all) needed.push_back("svm.bin");
  if (model == "knn" || all) needed.push_back("knn.bin");
  if (model == "decoder" || all) needed.push_back("decoder.bin");
  if (all) needed.push_back("ensemble.bin");
  std::string missing;
  for (const auto &f : needed) {
    if (!fs::is_regular_file(model_dir(cfg) / f)) missing += (missing.empty() ? "" : ", ") + f;
  }
  if (!missing.empty()) throw Error("missing artifacts in " + model_dir(cfg).string() + ": " + missing);

  Models m;
  m.vocab = load_vocabulary(cfg.paths.vocab);
  const fs::path dir = model_dir(cfg);
  if (model == "svm" || model == "decoder" || all) m.terms = TermVocabulary::load_tsv(dir / "terms.tsv");
  if (model == "svm" || all) m.svm = SvmOvrModel::load(dir / "svm.bin", m.vocab);
  if (model == "knn" || all) m.knn = Bm25Index::load(dir / "knn.bin", m.vocab);
  if (model == "decoder" || all) {
    m.decoder = DecoderModel::load(dir / "decoder.bin");
    if (m.decoder->vocab_fingerprint() != m.vocab.fingerprint()) {
      throw Error("decoder.bin was trained against a different label vocabulary");
    }
    if (m.decoder->num_terms() != m.terms->size()) throw Error("decoder.bin does not match terms.tsv");
  }
  if (all) {
    m.rank = RankModel::load(dir / "ensemble.bin");
    if (m.rank->vocab_fingerprint != m.vocab.fingerprint()) {
      throw Error("ensemble.bin was trained against a different label vocabulary");
    }
  }
  return m;
}

std::vector<SparseVector> featurize_all(std::span<const Article> articles, const TermVocabulary &terms) {
  std::vector<SparseVector> x(articles.size());
  for_each_index(articles.size(), [&](std::size_t i) { x[i] = tfidf(articles[i], terms); });
  return x;
}

std::vector<LabelScores> score_svm(const Models &m, std::span<const Article> articles) {
  const auto x = featurize_all(articles, *m.terms);
  std::vector<LabelScores> out(articles.size());
  for_each_index(articles.size(), [&](std::size_t i) { out[i] = m.svm->score(x[i]); });
  return out;
}

std::vector<std::vector<std::uint32_t>> tokens_of(std::span<const Article> articles, const TermVocabulary &terms) {
  std::vector<std::vector<std::uint32_t>> out(articles.size());
  for_each_index(articles.size(), [&](std::size_t i) { out[i] = token_ids(articles[i], terms); });
  return out;
}

std::vector<ModelScores> score_all(const Models &m, const PipelineConfig &cfg, std::span<const Article> articles) {
  const auto svm = score_svm(m, articles);
  const auto knn = knn_labels_batch(*m.knn, articles, cfg.knn);
  const auto dec = decoder_scores_batch(*m.decoder, tokens_of(articles, *m.terms));
  std::vector<ModelScores> out(articles.size());
  for (std::size_t i = 0; i < articles.size(); ++i) out[i] = {svm[i], knn[i], dec[i]};
  return out;
}

LabelScores pick(const LabelScores &scores, std::span<const LabelId> labels) {
  LabelScores out;
  for (LabelId l : labels) {
    const auto s = find_score(scores, l);
    out.push_back({l, s.value_or(0.0)});
  }
  return out;
}

Predictions predict_with(const Models &m, const PipelineConfig &cfg, std::string_view model,
                         std::span<const Article> articles) {
  Predictions p;
  p.labels.resize(articles.size());
  if (model == "svm") {
    const auto x = featurize_all(articles, *m.terms);
    p.scores.resize(articles.size());
    for_each_index(articles.size(), [&](std::size_t i) {
      p.scores[i] = m.svm->score(x[i]);
      p.labels[i] = m.svm->predict(x[i]);
    });
  } else if (model == "knn") {
    p.scores = knn_labels_batch(*m.knn, articles, cfg.knn);
    for (std::size_t i = 0; i < articles.size(); ++i) p.labels[i] = labels_above(p.scores[i], cfg.knn.label_threshold);
  } else if (model == "decoder") {
    const auto tokens = tokens_of(articles, *m.terms);
    p.scores = decoder_scores_batch(*m.decoder, tokens);
    for_each_index(articles.size(), [&](std::size_t i) { p.labels[i] = predict_decoder(*m.decoder, tokens[i]); });
  } else {
    const auto raw = score_all(m, cfg, articles);
    const auto cands = m.rank->features(raw);
    p.scores = rank_scores(*m.rank, cands);
    for (std::size_t i = 0; i < articles.size(); ++i) p.labels[i] = predict_ensemble(*m.rank, cands[i]);
  }
  for (std::size_t i = 0; i < articles.size(); ++i) p.scores[i] = pick(p.scores[i], p.labels[i]);
  return p;
}

std::vector<LabelSet> as_label_sets(const std::vector<std::vector<LabelId>> &v) {
  return {v.begin(), v.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

PipelineConfig parse_config(std::istream &in, const fs::path &base_dir, const std::vector<std::string> &overrides) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error &e) {
    throw Error(std::string("config: ") + e.what());
  }
  const auto setters = make_setters(base_dir);
  PipelineConfig cfg;
  auto apply = [&](const std::string &key, const std::string &value) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw Error("config: unknown key '" + key + "'");
    it->second(cfg, key, trim(value));
  };
  for (const auto &[section, body] : tree) {
    if (body.empty()) throw Error("config: key '" + section + "' outside a section");
    for (const auto &[key, value] : body) apply(section + "." + key, value.data());
  }
  for (const auto &o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw Error("override '" + o + "' must look like section.key=value");
    apply(trim(o.substr(0, eq)), o.substr(eq + 1));
  }
  validate(cfg);
  return cfg;
}

PipelineConfig load_config(const fs::path &path, const std::vector<std::string> &overrides) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse_config(in, fs::absolute(path).parent_path(), overrides);
}

json to_json(const PipelineConfig &c) {
  return json{
      {"paths",
       {{"train", c.paths.train.string()},
        {"dev", c.paths.dev.string()},
        {"test", c.paths.test.string()},
        {"vocab", c.paths.vocab.string()},
        {"model_dir", c.paths.model_dir.string()}}},
      {"pipeline", {{"seed", c.seed}, {"holdout_fraction", c.holdout_fraction}}},
      {"features",
       {{"min_df", c.features.min_df},
        {"max_df_ratio", c.features.max_df_ratio},
        {"include_title", c.features.include_title},
        {"ngram_order", c.features.ngram_order}}},
      {"svm",
       {{"C", c.svm.C},
        {"min_label_frequency", c.svm.min_label_frequency},
        {"plane_shift", c.svm.plane_shift},
        {"shift_units", to_string(c.svm.shift_units)},
        {"max_iterations", c.svm.max_iterations},
        {"tolerance", c.svm.tolerance}}},
      {"knn",
       {{"k", c.knn.k},
        {"label_threshold", c.knn.label_threshold},
        {"weight_abstract", c.knn.field_weights[0]},
        {"weight_title", c.knn.field_weights[1]},
        {"weight_label_text", c.knn.field_weights[2]},
        {"k1", c.bm25.k1},
        {"b", c.bm25.b}}},
      {"decoder",
       {{"embedding_dim", c.decoder.embedding_dim},
        {"hidden_dim", c.decoder.hidden_dim},
        {"head", to_string(c.decoder.head)},
        {"loss", to_string(c.decoder.loss)},
        {"order", to_string(c.decoder.order)},
        {"masked", c.decoder.masked},
        {"max_steps", c.decoder.max_steps},
        {"batch_size", c.decoder.batch_size},
        {"learning_rate", c.decoder.learning_rate},
        {"warmup_steps", c.decoder.warmup_steps},
        {"dropout", c.decoder.dropout},
        {"epochs", c.decoder.epochs},
        {"optimizer", to_string(c.decoder.optimizer)},
        {"init_scale", c.decoder.init_scale},
        {"threshold", c.decoder.threshold},
        {"grad_check_coords", c.decoder.grad_check_coords},
        {"grad_check_tolerance", c.decoder.grad_check_tolerance}}},
      {"ensemble",
       {{"C", c.ensemble.C},
        {"C_grid", c.ensemble.C_grid},
        {"max_pairs_per_article", c.ensemble.max_pairs_per_article},
        {"decision_threshold", c.ensemble.decision_threshold},
        {"tune_min", c.ensemble.tune_min},
        {"tune_max", c.ensemble.tune_max},
        {"tune_steps", c.ensemble.tune_steps},
        {"calibration_low", c.ensemble.calibration_low},
        {"calibration_high", c.ensemble.calibration_high},
        {"center_features", c.ensemble.center_features},
        {"normalization", to_string(c.ensemble.normalization)},
        {"max_iterations", c.ensemble.max_iterations},
        {"tolerance", c.ensemble.tolerance}}},
  };
}

std::string config_hash(const PipelineConfig &cfg) { return hex64(fnv1a(to_json(cfg).dump())); }

bool DataAudit::touched(const std::string &collection, const std::string &what) const {
  const auto it = access_.find(collection);
  return it != access_.end() && it->second.count(what) > 0;
}

json DataAudit::to_json() const {
  json j = json::object();
  for (const auto &[collection, parts] : access_) j[collection] = parts;
  return j;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_synth(const SynthConfig &cfg, const fs::path &out_dir) { write_synth(out_dir, synthesize(cfg)); }

json cmd_ingest_check(const PipelineConfig &cfg) {
  require_file(cfg.paths.vocab, "paths.vocab");
  const auto vocab = load_vocabulary(cfg.paths.vocab);
  json out{{"labels", vocab.num_labels()}};
  const std::pair<const char *, const fs::path *> collections[] = {
      {"train", &cfg.paths.train}, {"dev", &cfg.paths.dev}, {"test", &cfg.paths.test}};
  for (const auto &[name, path] : collections) {
    if (path->empty()) continue;
    require_file(*path, std::string("paths.") + name);
    const auto articles = load_articles(*path);
    const auto counted = count_frequencies(vocab, articles);
    std::size_t used = 0, empty_gold = 0;
    for (LabelId l = 0; l < vocab.num_labels(); ++l) used += counted.frequency(l) > 0 ? 1 : 0;
    for (const auto &a : articles) empty_gold += a.gold.empty() ? 1 : 0;
    out[name] = {{"articles", articles.size()},
                 {"mean_gold", mean_gold_size(articles)},
                 {"labels_used", used},
                 {"empty_gold", empty_gold}};
    if (std::string_view(name) == "train" && articles.size() >= 2) {
      const auto s = split(articles, cfg.holdout_fraction, cfg.seed);
      out["split"] = {{"train", s.train.size()}, {"holdout", s.holdout.size()}};
    }
  }
  return out;
}

CommandResult cmd_train(const PipelineConfig &cfg, std::string_view model) {
  if (model != "svm" && model != "knn" && model != "decoder") {
    throw Error("train: unknown model '" + std::string(model) + "' (expected svm, knn or decoder)");
  }
  require_file(cfg.paths.train, "paths.train");
  require_file(cfg.paths.vocab, "paths.vocab");
  const fs::path dir = model_dir(cfg);
  fs::create_directories(dir);

  json durations;
  DataAudit audit;
  auto t0 = Clock::now();
  const Workspace ws = load_workspace(cfg, audit);
  durations["load"] = elapsed_ms(t0);
  const auto gold = gold_of(ws.split.train, ws.vocab);
  const fs::path artifact = artifact_path(cfg, model);
  json extra;

  if (model == "svm" || model == "decoder") {
    t0 = Clock::now();
    const auto terms = build_term_vocabulary(ws.split.train, cfg.features);
    terms.save_tsv(dir / "terms.tsv");
    durations["vocabulary"] = elapsed_ms(t0);
    extra["terms"] = terms.size();

    if (model == "svm") {
      t0 = Clock::now();
      const auto x = featurize_all(ws.split.train, terms);
      SvmConfig svm_cfg = cfg.svm;
      svm_cfg.seed = cfg.seed;
      const auto svm = train_ovr(x, gold, terms.size(), ws.vocab, svm_cfg);
      durations["train"] = elapsed_ms(t0);
      svm.save(artifact);
      extra["trained_labels"] = svm.hyperplanes().size();
      extra["plane_shift"] = svm.plane_shift();
      extra["shift_units"] = to_string(svm.shift_units());
    } else {
      t0 = Clock::now();
      DecoderConfig dcfg = cfg.decoder;
      dcfg.seed = cfg.seed;
      std::vector<DecoderExample> examples;
      examples.reserve(ws.split.train.size());
      for (std::size_t i = 0; i < ws.split.train.size(); ++i) {
        examples.push_back({token_ids(ws.split.train[i], terms), gold[i]});
      }
      auto trained = train_decoder(examples, make_decoder(dcfg, terms, ws.vocab));
      durations["train"] = elapsed_ms(t0);
      trained.model.save(artifact);
      std::ofstream log(dir / "decoder.loss.txt", std::ios::binary);
      log << "step\tloss\n";
      char line[64];
      for (const auto &e : trained.loss_log) {
        std::snprintf(line, sizeof line, "%zu\t%.17g\n", e.step, e.loss);
        log << line;
      }
      extra["grad_check_max_rel_error"] = trained.grad_check_error;
      extra["epoch_loss"] = trained.epoch_loss;
      extra["parameters"] = trained.model.params().size();
    }
  } else {
    t0 = Clock::now();
    const auto index = Bm25Index::build(ws.split.train, ws.vocab, cfg.bm25);
    durations["train"] = elapsed_ms(t0);
    index.save(artifact);
    extra["documents"] = index.num_docs();
    extra["terms"] = index.num_terms();
  }

  json manifest = base_manifest(cfg, "train " + std::string(model), artifact);
  manifest["train_articles"] = ws.split.train.size();
  manifest["holdout_articles"] = ws.split.holdout.size();
  manifest["details"] = extra;
  manifest["data_access"] = audit.to_json();
  manifest["durations_ms"] = durations;
  write_json(dir / (std::string(model) + ".manifest.json"), manifest);
  return {artifact, manifest};
}

CommandResult cmd_ensemble(const PipelineConfig &cfg) {
  require_file(cfg.paths.train, "paths.train");
  require_file(cfg.paths.vocab, "paths.vocab");
  require_file(cfg.paths.dev, "paths.dev");
  const fs::path dir = model_dir(cfg);
  {
    std::string missing;
    for (const char *f : {"terms.tsv", "svm.bin", "knn.bin", "decoder.bin"}) {
      if (!fs::is_regular_file(dir / f)) missing += (missing.empty() ? "" : ", ") + std::string(f);
    }
    if (!missing.empty()) throw Error("ensemble: missing individual model artifacts: " + missing);
  }

  json durations;
  DataAudit audit;
  auto t0 = Clock::now();
  Models m;
  m.vocab = load_vocabulary(cfg.paths.vocab);
  m.terms = TermVocabulary::load_tsv(dir / "terms.tsv");
  m.svm = SvmOvrModel::load(dir / "svm.bin", m.vocab);
  m.knn = Bm25Index::load(dir / "knn.bin", m.vocab);
  m.decoder = DecoderModel::load(dir / "decoder.bin");
  const auto all = load_articles(cfg.paths.train);
  const auto s = split(all, cfg.holdout_fraction, cfg.seed);
  if (s.holdout.empty()) throw Error("ensemble: the holdout split is empty");
  audit.note("holdout", "text");
  audit.note("holdout", "gold");
  durations["load"] = elapsed_ms(t0);

  t0 = Clock::now();
  const auto holdout_scores = score_all(m, cfg, s.holdout);
  const auto holdout_gold = gold_of(s.holdout, m.vocab);
  durations["score_holdout"] = elapsed_ms(t0);

  t0 = Clock::now();
  const ModelThresholds initial{m.svm->plane_shift(), cfg.knn.label_threshold, cfg.decoder.threshold};
  const auto cal = calibrate_candidate_thresholds(holdout_scores, holdout_gold, initial, cfg.ensemble);
  const auto ranges = candidate_score_ranges(holdout_scores, cal.thresholds);
  const auto cands = build_candidate_features(holdout_scores, cal.thresholds, ranges);
  durations["calibrate"] = elapsed_ms(t0);

  t0 = Clock::now();
  const auto dev = load_articles(cfg.paths.dev);
  if (dev.empty()) throw Error("ensemble: the dev set is empty");
  audit.note("dev", "text");
  audit.note("dev", "gold");
  const auto dev_scores = score_all(m, cfg, dev);
  const auto dev_gold = gold_of(dev, m.vocab);
  durations["score_dev"] = elapsed_ms(t0);

  t0 = Clock::now();
  EnsembleConfig ecfg = cfg.ensemble;
  ecfg.seed = cfg.seed;
  const std::vector<double> grid = ecfg.C_grid.empty() ? std::vector<double>{ecfg.C} : ecfg.C_grid;
  std::optional<RankModel> best;
  RankTrainingStats stats;
  ThresholdSearch tuned;
  json c_search = json::array();
  for (double C : grid) {
    ecfg.C = C;
    RankTrainingStats st;
    RankModel rank = train_rank(cands, holdout_gold, ecfg, &st);
    rank.candidate_thresholds = cal.thresholds;
    rank.ranges = ranges;
    rank.vocab_fingerprint = m.vocab.fingerprint();
    const auto search = tune_threshold(rank_scores(rank, rank.features(dev_scores)), dev_gold, ecfg.tune_min,
                                       ecfg.tune_max, ecfg.tune_steps);
    rank.threshold = search.threshold;
    c_search.push_back({{"C", C}, {"threshold", search.threshold}, {"dev_micro_f1", search.micro_f1}});
    if (!best || search.micro_f1 > tuned.micro_f1) {
      best = rank;
      stats = st;
      tuned = search;
    }
  }
  const RankModel &rank = *best;
  durations["train_and_tune"] = elapsed_ms(t0);

  const fs::path artifact = artifact_path(cfg, "ensemble");
  rank.save(artifact);

  json calibration = json::object();
  for (std::size_t k = 0; k < kNumBaseModels; ++k) {
    calibration[to_string(static_cast<BaseModel>(k))] = {{"initial_threshold", initial[k]},
                                                         {"threshold", cal.thresholds[k]},
                                                         {"mean_predicted", cal.mean_predicted[k]},
                                                         {"ratio_to_gold", cal.mean_predicted[k] / cal.mean_gold},
                                                         {"within_window", cal.reached[k]},
                                                         {"score_min", ranges[k].min},
                                                         {"score_max", ranges[k].max}};
  }
  json manifest = base_manifest(cfg, "ensemble", artifact);
  manifest["holdout_articles"] = s.holdout.size();
  manifest["calibration"] = {{"mean_gold", cal.mean_gold}, {"models", calibration}};
  manifest["rank"] = {{"weights", rank.weights},
                      {"center", rank.center},
                      {"C", rank.C},
                      {"pairs", stats.pairs},
                      {"articles_with_pairs", stats.articles_with_pairs},
                      {"solver_epochs", stats.epochs},
                      {"solver_converged", stats.converged},
                      {"normalization", to_string(rank.normalization)}};
  manifest["threshold"] = {{"default", ecfg.decision_threshold},
                           {"tuned", tuned.threshold},
                           {"dev_micro_f1", tuned.micro_f1},
                           {"interval", {ecfg.tune_min, ecfg.tune_max}},
                           {"steps", ecfg.tune_steps}};
  manifest["C_search"] = c_search;
  manifest["data_access"] = audit.to_json();
  manifest["durations_ms"] = durations;
  write_json(dir / "ensemble.manifest.json", manifest);
  return {artifact, manifest};
}

Predictions predict_collection(const PipelineConfig &cfg, std::string_view model, std::span<const Article> articles) {
  const Models m = load_models(cfg, model);
  return predict_with(m, cfg, model, articles);
}

void cmd_predict(const PipelineConfig &cfg, std::string_view model, const fs::path &input, const fs::path &output) {
  check_model_name(model);
  require_file(input, "input articles");
  const Models m = load_models(cfg, model);
  const auto articles = load_articles(input);
  const auto p = predict_with(m, cfg, model, articles);
  std::ofstream out(output, std::ios::binary);
  if (!out) throw Error("cannot write " + output.string());
  for (std::size_t i = 0; i < articles.size(); ++i) {
    json labels = json::array();
    json scores = json::object();
    for (const auto &s : p.scores[i]) {
      labels.push_back(m.vocab.code(s.label));
      scores[m.vocab.code(s.label)] = s.score;
    }
    out << json{{"id", articles[i].id}, {"labels", labels}, {"scores", scores}}.dump() << '\n';
  }
  if (!out) throw Error("write failed for " + output.string());
}

MetricsReport cmd_evaluate(const fs::path &predictions, const fs::path &gold_path) {
  require_file(predictions, "predictions file");
  require_file(gold_path, "gold file");
  std::unordered_map<std::string, std::vector<std::string>> predicted;
  {
    std::ifstream in(predictions);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const json obj = json::parse(line);
        auto id = obj.at("id").get<std::string>();
        if (predicted.count(id) > 0) throw Error("duplicate id '" + id + "'");
        predicted[id] = obj.at("labels").get<std::vector<std::string>>();
      } catch (const std::exception &e) {
        throw Error(predictions.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  const auto gold = load_articles(gold_path);
  if (gold.empty()) throw Error("gold file " + gold_path.string() + " has no articles");

  std::vector<std::string> missing_pred, missing_gold;
  std::unordered_map<std::string, bool> gold_ids_seen;
  for (const auto &a : gold) {
    gold_ids_seen[a.id] = true;
    if (predicted.count(a.id) == 0) missing_pred.push_back(a.id);
  }
  for (const auto &[id, labels] : predicted) {
    if (gold_ids_seen.count(id) == 0) missing_gold.push_back(id);
  }
  if (!missing_pred.empty() || !missing_gold.empty()) {
    std::sort(missing_gold.begin(), missing_gold.end());
    auto list = [](const std::vector<std::string> &ids) {
      std::string s;
      for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? ", " : "") + ids[i];
      if (ids.size() > 20) s += ", ... (" + std::to_string(ids.size()) + " total)";
      return s;
    };
    std::string msg = "prediction and gold ids differ;";
    if (!missing_pred.empty()) msg += " no prediction for: " + list(missing_pred) + ";";
    if (!missing_gold.empty()) msg += " not in gold: " + list(missing_gold) + ";";
    throw Error(msg);
  }

  std::unordered_map<std::string, std::uint32_t> intern;
  auto to_set = [&](const std::vector<std::string> &codes) {
    LabelSet s;
    for (const auto &c : codes) s.push_back(intern.emplace(c, static_cast<std::uint32_t>(intern.size())).first->second);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  };
  std::vector<LabelSet> pred_sets, gold_sets;
  for (const auto &a : gold) {
    gold_sets.push_back(to_set(a.gold));
    pred_sets.push_back(to_set(predicted.at(a.id)));
  }
  return evaluate(pred_sets, gold_sets);
}

json cmd_tune_threshold(const PipelineConfig &cfg, std::string_view model, double lo, double hi, std::size_t steps) {
  check_model_name(model);
  require_file(cfg.paths.dev, "paths.dev");
  const Models m = load_models(cfg, model);
  if (model == "decoder" && m.decoder->config().head == HeadKind::gru) {
    throw Error("tune-threshold: the GRU decoder predicts its decoded trace and has no threshold");
  }
  const auto dev = load_articles(cfg.paths.dev);
  std::vector<LabelScores> scores;
  if (model == "svm") {
    scores = score_svm(m, dev);
  } else if (model == "knn") {
    scores = knn_labels_batch(*m.knn, dev, cfg.knn);
  } else if (model == "decoder") {
    scores = decoder_scores_batch(*m.decoder, tokens_of(dev, *m.terms));
  } else {
    scores = rank_scores(*m.rank, m.rank->features(score_all(m, cfg, dev)));
  }
  const auto result = tune_threshold(scores, gold_of(dev, m.vocab), lo, hi, steps);
  json out{{"model", model},
           {"threshold", result.threshold},
           {"dev_micro_f1", result.micro_f1},
           {"interval", {lo, hi}},
           {"steps", steps},
           {"config_hash", config_hash(cfg)}};
  write_json(model_dir(cfg) / (std::string(model) + ".tuned.json"), out);
  return out;
}

json cmd_report(const PipelineConfig &cfg) {
  json report = json::object();
  const Models m = load_models(cfg, "ensemble");
  const std::pair<const char *, const fs::path *> splits[] = {{"dev", &cfg.paths.dev}, {"test", &cfg.paths.test}};
  for (const auto &[name, path] : splits) {
    if (path->empty()) continue;
    require_file(*path, std::string("paths.") + name);
    const auto articles = load_articles(*path);
    if (articles.empty()) continue;
    const auto gold = as_label_sets(gold_of(articles, m.vocab));
    for (auto model : kModelNames) {
      const auto p = predict_with(m, cfg, model, articles);
      const auto r = evaluate(as_label_sets(p.labels), gold);
      report[name][std::string(model)] = to_json(r);
    }
  }
  const fs::path dir = model_dir(cfg);
  write_json(dir / "report.json", report);
  std::ofstream(dir / "report.txt", std::ios::binary) << format_comparison(report);
  return report;
}

std::string format_comparison(const json &report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s", "model");
  out += line;
  std::vector<std::string> splits;
  for (const auto &[name, body] : report.items()) splits.push_back(name);
  for (const auto &s : splits) {
    for (const char *metric : {"MiP", "MiR", "MiF1"}) {
      std::snprintf(line, sizeof line, " %10s", (s + " " + metric).c_str());
      out += line;
    }
  }
  out += '\n';
  for (auto model : kModelNames) {
    std::snprintf(line, sizeof line, "%-10s", std::string(model).c_str());
    out += line;
    for (const auto &s : splits) {
      const auto &micro = report.at(s).at(std::string(model)).at("micro");
      for (const char *key : {"precision", "recall", "f1"}) {
        std::snprintf(line, sizeof line, " %10.4f", micro.at(key).get<double>());
        out += line;
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace xmlc
