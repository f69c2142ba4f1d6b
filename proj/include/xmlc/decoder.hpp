// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xmlc/corpus.hpp"
#include "xmlc/featurize.hpp"
#include "xmlc/label_scores.hpp"
#include "xmlc/parallel.hpp"
#include "xmlc/rng.hpp"

namespace xmlc {

enum class HeadKind { linear, label_attention, gru };
enum class LossKind { boll, ill };
enum class LabelOrder { ascending, descending };
enum class OptimizerKind { sgd, adam };

std::string to_string(HeadKind h);
std::string to_string(LossKind l);
std::string to_string(LabelOrder o);
std::string to_string(OptimizerKind o);
HeadKind parse_head(std::string_view s);
LossKind parse_loss(std::string_view s);
LabelOrder parse_order(std::string_view s);
OptimizerKind parse_optimizer(std::string_view s);

/// Training defaults suit a large corpus (batch 8, lr 2e-5, warmup 4000,
/// dropout 0.1); desk-scale runs override them from the pipeline config.
struct DecoderConfig {
  std::size_t embedding_dim = 64;
  /// GRU units; the linear and attention heads work directly on the embedding.
  std::size_t hidden_dim = 64;
  HeadKind head = HeadKind::gru;
  LossKind loss = LossKind::boll;
  LabelOrder order = LabelOrder::ascending;
  bool masked = false;
  std::size_t max_steps = 30;

  std::size_t batch_size = 8;
  double learning_rate = 2e-5;
  std::size_t warmup_steps = 4000;
  double dropout = 0.1;
  std::size_t epochs = 1;
  OptimizerKind optimizer = OptimizerKind::adam;
  double init_scale = 0.1;
  std::uint64_t seed = 1;

  /// sigma(logit) cut-off for the linear and attention heads.
  double threshold = 0.5;
  /// Coordinates compared against central differences on the first batch.
  std::size_t grad_check_coords = 32;
  double grad_check_tolerance = 1e-4;
};

/// Offsets of each tensor inside the flat parameter vector.
struct ParamLayout {
  std::size_t term_emb = 0;   // V x d
  std::size_t label_emb = 0;  // (L + 2) x d: labels, stop, start symbol
  std::size_t out_w = 0;      // (L + 1) x H
  std::size_t out_b = 0;      // L + 1
  std::size_t wz = 0, wr = 0, wh = 0;  // H x 2d
  std::size_t uz = 0, ur = 0, uh = 0;  // H x H
  std::size_t bz = 0, br = 0, bh = 0;  // H
  std::size_t proj = 0;                // H x d, only when H != d
  bool has_proj = false;
  std::size_t total = 0;
};

/// One decoding step per entry. `targets` is filled under teacher forcing.
struct DecoderTrace {
  std::vector<std::vector<double>> logits;
  std::vector<LabelId> predicted;
  std::vector<LabelId> targets;

  std::size_t length() const { return logits.size(); }
};

/// Token ids and gold labels of one training article.
struct DecoderExample {
  std::vector<std::uint32_t> tokens;
  std::vector<LabelId> gold;
};

/// Everything random or discrete that a loss evaluation depends on, fixed up
/// front so that the loss is a smooth function of the parameters (needed by
/// the finite-difference check).
struct LossContext {
  /// Per-dimension multiplier for the encoder output; empty means no dropout.
  std::vector<double> dropout_mask;
  /// Label fed at each GRU step (start symbol first).
  std::vector<LabelId> inputs;
  /// Per-step gold label for the iterative loss.
  std::vector<LabelId> targets;
};

class DecoderModel {
 public:
  DecoderModel() = default;
  /// Random initialization. `label_frequency` has one entry per output
  /// (labels + stop) and defines the frequency order used by masking.
  DecoderModel(DecoderConfig cfg, std::size_t num_terms, std::vector<std::uint64_t> label_frequency,
               std::uint64_t vocab_fingerprint = 0);

  const DecoderConfig &config() const { return cfg_; }
  DecoderConfig &mutable_config() { return cfg_; }
  const ParamLayout &layout() const { return layout_; }
  std::size_t num_terms() const { return num_terms_; }
  /// Labels + stop.
  std::size_t num_outputs() const { return num_outputs_; }
  std::size_t num_labels() const { return num_outputs_ - 1; }
  LabelId stop_label() const { return static_cast<LabelId>(num_outputs_ - 1); }
  LabelId start_symbol() const { return static_cast<LabelId>(num_outputs_); }
  std::size_t hidden_size() const;
  std::span<const std::uint64_t> label_frequency() const { return label_frequency_; }
  std::uint64_t vocab_fingerprint() const { return vocab_fingerprint_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  /// Sets each label embedding to the mean term embedding of its text tokens;
  /// labels without tokens keep their random row.
  void init_label_embeddings(std::span<const std::vector<std::uint32_t>> label_tokens);

  /// Loss for one example under a fixed context; adds d loss / d params
  /// scaled by `grad_scale` into `grad` unless it is empty.
  double loss(const DecoderExample &ex, const LossContext &ctx, std::span<double> grad,
              double grad_scale = 1.0) const;

  /// Draws the dropout mask (when `dropout_rng` is given) and fixes the GRU
  /// input sequence: the greedy trace for the bag-of-labels loss, the gold
  /// sequence under teacher forcing for the iterative loss.
  LossContext prepare(const DecoderExample &ex, Rng *dropout_rng) const;

  void save(const std::filesystem::path &path) const;
  static DecoderModel load(const std::filesystem::path &path);

 private:
  DecoderConfig cfg_;
  std::size_t num_terms_ = 0;
  std::size_t num_outputs_ = 0;
  std::vector<std::uint64_t> label_frequency_;
  std::uint64_t vocab_fingerprint_ = 0;
  ParamLayout layout_;
  std::vector<double> params_;
};

ParamLayout make_layout(const DecoderConfig &cfg, std::size_t num_terms, std::size_t num_outputs);

/// In-vocabulary unigram ids of the article's title + abstract.
std::vector<std::uint32_t> token_ids(const Article &article, const TermVocabulary &terms);
std::vector<std::uint32_t> token_ids(std::span<const std::string> tokens, const TermVocabulary &terms);

/// Mean of term embeddings; zero vector when there are no tokens.
std::vector<double> encode(const DecoderModel &model, std::span<const std::uint32_t> tokens);

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Mean over dimensions of -[y ln s(x) + (1 - y) ln(1 - s(x))], evaluated as
/// max(x, 0) - x y + log1p(exp(-|x|)).
double bce_loss(std::span<const double> logits, std::span<const double> targets);

std::vector<double> forward_linear(const DecoderModel &model, std::span<const double> embedding);
std::vector<double> forward_label_attention(const DecoderModel &model, std::span<const double> embedding);

/// Value written into disallowed positions by masking.
inline constexpr double kMaskedLogit = -1e300;

/// True iff `label` may follow `prev` in the configured frequency order,
/// comparing (frequency, id) lexicographically. The stop label always may.
bool order_allows(LabelId label, LabelId prev, LabelOrder order, std::span<const std::uint64_t> freq,
                  LabelId stop);

/// Masks every label not strictly after `prev` in the order; nothing is
/// masked when there is no previous label.
void mask_logits(std::span<double> logits, std::optional<LabelId> prev, LabelOrder order,
                 std::span<const std::uint64_t> freq, LabelId stop);

/// Greedy decoding with the visited-label guard and optional order masking.
/// Ends after the stop label or after `max_steps` steps. Logits are stored
/// before masking.
DecoderTrace decode_gru(const DecoderModel &model, std::span<const double> embedding, std::size_t max_steps);

/// Gold labels sorted by (frequency, id) in the configured order, then stop.
std::vector<LabelId> gold_sequence(std::span<const LabelId> gold, LabelOrder order,
                                   std::span<const std::uint64_t> freq, LabelId stop);

/// Runs the GRU feeding the gold previous label at every step.
DecoderTrace teacher_forced_trace(const DecoderModel &model, std::span<const double> embedding,
                                  std::span<const LabelId> gold_seq);

/// BCE of the element-wise maximum of the step logits against the gold
/// multi-hot vector with the stop bit set.
double loss_boll(const DecoderTrace &trace, std::span<const LabelId> gold);

/// Sum over steps of BCE against the one-hot step target.
double loss_ill(const DecoderTrace &trace);

struct LossLogEntry {
  std::size_t step;
  double loss;
};

struct TrainedDecoder {
  DecoderModel model;
  std::vector<LossLogEntry> loss_log;
  std::vector<double> epoch_loss;
  /// Largest relative error seen by the first-batch gradient check.
  double grad_check_error = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Central differences (step eps) on the given coordinates of the mean batch
/// loss, with every context held fixed.
GradCheckResult check_gradients(DecoderModel &model, std::span<const DecoderExample> batch,
                                std::span<const LossContext> contexts, std::span<const std::size_t> coords,
                                double eps = 1e-5, double floor = 1e-8);

/// Mini-batch training with manual backprop, linear warmup + decay and
/// dropout on the encoder output. The first batch is gradient-checked; a
/// failed check or a NaN loss throws.
TrainedDecoder train_decoder(std::span<const DecoderExample> examples, DecoderModel model);

DecoderModel make_decoder(const DecoderConfig &cfg, const TermVocabulary &terms, const LabelVocabulary &labels);

/// Exported scores sigma(logit) per real label (GRU: max over steps).
LabelScores decoder_scores(const DecoderModel &model, std::span<const std::uint32_t> tokens);
/// Linear / attention: sigma(logit) > threshold. GRU: labels of the greedy
/// trace, stop excluded.
std::vector<LabelId> predict_decoder(const DecoderModel &model, std::span<const std::uint32_t> tokens);

std::vector<LabelScores> decoder_scores_batch(const DecoderModel &model,
                                              std::span<const std::vector<std::uint32_t>> tokens,
                                              Execution exec = Execution::parallel);

}  // namespace xmlc
