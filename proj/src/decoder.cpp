// SPDX-License-Identifier: Apache-2.0
#include "xmlc/decoder.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "xmlc/binary_io.hpp"
#include "xmlc/error.hpp"

namespace xmlc {

namespace {

constexpr std::string_view kMagic = "XDEC";
constexpr std::uint32_t kVersion = 1;

// y += M x, M is rows x cols row-major.
void gemv_acc(const double *m, std::size_t rows, std::size_t cols, const double *x, double *y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double *row = m + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] += s;
  }
}

// dx += M^T dy
void gemv_t_acc(const double *m, std::size_t rows, std::size_t cols, const double *dy, double *dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (dy[r] == 0.0) continue;
    const double *row = m + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += row[c] * dy[r];
  }
}

// G += dy x^T
void ger_acc(double *g, std::size_t rows, std::size_t cols, const double *dy, const double *x) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (dy[r] == 0.0) continue;
    double *row = g + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += dy[r] * x[c];
  }
}

double softplus_bce(double x, double y) { return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::fabs(x))); }

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

struct GruStep {
  LabelId input = 0;
  std::vector<double> u, h_prev, z, r, hhat, rh, h, logits;
};

// Everything the GRU head needs from the model, resolved once.
struct GruView {
  const DecoderModel &model;
  const double *p;
  std::size_t d, hdim, out;

  explicit GruView(const DecoderModel &m)
      : model(m), p(m.params().data()), d(m.config().embedding_dim), hdim(m.hidden_size()), out(m.num_outputs()) {}

  std::vector<double> initial_hidden(std::span<const double> e) const {
    const auto &lay = model.layout();
    if (!lay.has_proj) return {e.begin(), e.end()};
    std::vector<double> h0(hdim, 0.0);
    gemv_acc(p + lay.proj, hdim, d, e.data(), h0.data());
    return h0;
  }

  GruStep step(std::span<const double> e, std::span<const double> h_prev, LabelId input) const {
    const auto &lay = model.layout();
    GruStep s;
    s.input = input;
    s.u.resize(2 * d);
    std::copy(e.begin(), e.end(), s.u.begin());
    const double *lab = p + lay.label_emb + static_cast<std::size_t>(input) * d;
    std::copy(lab, lab + d, s.u.begin() + static_cast<std::ptrdiff_t>(d));
    s.h_prev.assign(h_prev.begin(), h_prev.end());

    s.z.assign(p + lay.bz, p + lay.bz + hdim);
    gemv_acc(p + lay.wz, hdim, 2 * d, s.u.data(), s.z.data());
    gemv_acc(p + lay.uz, hdim, hdim, s.h_prev.data(), s.z.data());
    s.r.assign(p + lay.br, p + lay.br + hdim);
    gemv_acc(p + lay.wr, hdim, 2 * d, s.u.data(), s.r.data());
    gemv_acc(p + lay.ur, hdim, hdim, s.h_prev.data(), s.r.data());
    for (std::size_t i = 0; i < hdim; ++i) {
      s.z[i] = sigmoid(s.z[i]);
      s.r[i] = sigmoid(s.r[i]);
    }
    s.rh.resize(hdim);
    for (std::size_t i = 0; i < hdim; ++i) s.rh[i] = s.r[i] * s.h_prev[i];
    s.hhat.assign(p + lay.bh, p + lay.bh + hdim);
    gemv_acc(p + lay.wh, hdim, 2 * d, s.u.data(), s.hhat.data());
    gemv_acc(p + lay.uh, hdim, hdim, s.rh.data(), s.hhat.data());
    s.h.resize(hdim);
    for (std::size_t i = 0; i < hdim; ++i) {
      s.hhat[i] = std::tanh(s.hhat[i]);
      s.h[i] = (1.0 - s.z[i]) * s.h_prev[i] + s.z[i] * s.hhat[i];
    }
    s.logits.assign(p + lay.out_b, p + lay.out_b + out);
    gemv_acc(p + lay.out_w, out, hdim, s.h.data(), s.logits.data());
    return s;
  }

  std::vector<GruStep> run(std::span<const double> e, std::span<const LabelId> inputs) const {
    std::vector<GruStep> steps;
    steps.reserve(inputs.size());
    auto h = initial_hidden(e);
    for (LabelId in : inputs) {
      steps.push_back(step(e, h, in));
      h = steps.back().h;
    }
    return steps;
  }

  // Backpropagates per-step logit gradients; accumulates into g and de.
  void backward(std::span<const GruStep> steps, std::span<const std::vector<double>> dlogits,
                std::span<const double> e, double *g, std::span<double> de) const {
    const auto &lay = model.layout();
    std::vector<double> dh_next(hdim, 0.0);
    std::vector<double> dh(hdim), dz(hdim), dah(hdim), daz(hdim), dar(hdim), drh(hdim), dr(hdim),
        dh_prev(hdim), du(2 * d);
    for (std::size_t t = steps.size(); t-- > 0;) {
      const GruStep &s = steps[t];
      dh = dh_next;
      gemv_t_acc(p + lay.out_w, out, hdim, dlogits[t].data(), dh.data());
      ger_acc(g + lay.out_w, out, hdim, dlogits[t].data(), s.h.data());
      for (std::size_t j = 0; j < out; ++j) g[lay.out_b + j] += dlogits[t][j];

      for (std::size_t i = 0; i < hdim; ++i) {
        dz[i] = dh[i] * (s.hhat[i] - s.h_prev[i]);
        dah[i] = dh[i] * s.z[i] * (1.0 - s.hhat[i] * s.hhat[i]);
        dh_prev[i] = dh[i] * (1.0 - s.z[i]);
      }
      ger_acc(g + lay.wh, hdim, 2 * d, dah.data(), s.u.data());
      ger_acc(g + lay.uh, hdim, hdim, dah.data(), s.rh.data());
      std::fill(drh.begin(), drh.end(), 0.0);
      gemv_t_acc(p + lay.uh, hdim, hdim, dah.data(), drh.data());
      for (std::size_t i = 0; i < hdim; ++i) {
        g[lay.bh + i] += dah[i];
        dr[i] = drh[i] * s.h_prev[i];
        dh_prev[i] += drh[i] * s.r[i];
        daz[i] = dz[i] * s.z[i] * (1.0 - s.z[i]);
        dar[i] = dr[i] * s.r[i] * (1.0 - s.r[i]);
        g[lay.bz + i] += daz[i];
        g[lay.br + i] += dar[i];
      }
      ger_acc(g + lay.wz, hdim, 2 * d, daz.data(), s.u.data());
      ger_acc(g + lay.uz, hdim, hdim, daz.data(), s.h_prev.data());
      ger_acc(g + lay.wr, hdim, 2 * d, dar.data(), s.u.data());
      ger_acc(g + lay.ur, hdim, hdim, dar.data(), s.h_prev.data());
      gemv_t_acc(p + lay.uz, hdim, hdim, daz.data(), dh_prev.data());
      gemv_t_acc(p + lay.ur, hdim, hdim, dar.data(), dh_prev.data());

      std::fill(du.begin(), du.end(), 0.0);
      gemv_t_acc(p + lay.wz, hdim, 2 * d, daz.data(), du.data());
      gemv_t_acc(p + lay.wr, hdim, 2 * d, dar.data(), du.data());
      gemv_t_acc(p + lay.wh, hdim, 2 * d, dah.data(), du.data());
      double *dlab = g + lay.label_emb + static_cast<std::size_t>(s.input) * d;
      for (std::size_t i = 0; i < d; ++i) {
        de[i] += du[i];
        dlab[i] += du[d + i];
      }
      dh_next = dh_prev;
    }
    if (lay.has_proj) {
      ger_acc(g + lay.proj, hdim, d, dh_next.data(), e.data());
      gemv_t_acc(p + lay.proj, hdim, d, dh_next.data(), de.data());
    } else {
      for (std::size_t i = 0; i < d; ++i) de[i] += dh_next[i];
    }
  }
};

struct AttentionCache {
  std::vector<double> weights;  // softmax over labels
  std::vector<double> h;        // embedding + attended value
  std::vector<double> logits;
};

AttentionCache attention_forward(const DecoderModel &m, std::span<const double> e) {
  const auto &lay = m.layout();
  const double *p = m.params().data();
  const std::size_t d = m.config().embedding_dim;
  const std::size_t labels = m.num_labels();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionCache c;
  c.weights.assign(labels, 0.0);
  gemv_acc(p + lay.label_emb, labels, d, e.data(), c.weights.data());
  double mx = -std::numeric_limits<double>::infinity();
  for (auto &w : c.weights) {
    w *= scale;
    mx = std::max(mx, w);
  }
  double total = 0.0;
  for (auto &w : c.weights) {
    w = std::exp(w - mx);
    total += w;
  }
  for (auto &w : c.weights) w /= total;
  c.h.assign(e.begin(), e.end());
  gemv_t_acc(p + lay.label_emb, labels, d, c.weights.data(), c.h.data());
  c.logits.assign(p + lay.out_b, p + lay.out_b + m.num_outputs());
  gemv_acc(p + lay.out_w, m.num_outputs(), d, c.h.data(), c.logits.data());
  return c;
}

std::vector<double> multi_hot(std::span<const LabelId> labels, std::size_t n) {
  std::vector<double> y(n, 0.0);
  for (LabelId l : labels) {
    if (l < n) y[l] = 1.0;
  }
  return y;
}

}  // namespace

std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::linear: return "linear";
    case HeadKind::label_attention: return "label_attention";
    case HeadKind::gru: return "gru";
  }
  return "?";
}
std::string to_string(LossKind l) { return l == LossKind::boll ? "boll" : "ill"; }
std::string to_string(LabelOrder o) { return o == LabelOrder::ascending ? "ascending" : "descending"; }
std::string to_string(OptimizerKind o) { return o == OptimizerKind::sgd ? "sgd" : "adam"; }

HeadKind parse_head(std::string_view s) {
  if (s == "linear") return HeadKind::linear;
  if (s == "label_attention" || s == "attention") return HeadKind::label_attention;
  if (s == "gru") return HeadKind::gru;
  throw Error("unknown decoder head '" + std::string(s) + "'");
}
LossKind parse_loss(std::string_view s) {
  if (s == "boll") return LossKind::boll;
  if (s == "ill") return LossKind::ill;
  throw Error("unknown decoder loss '" + std::string(s) + "'");
}
LabelOrder parse_order(std::string_view s) {
  if (s == "ascending") return LabelOrder::ascending;
  if (s == "descending") return LabelOrder::descending;
  throw Error("unknown label order '" + std::string(s) + "'");
}
OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw Error("unknown optimizer '" + std::string(s) + "'");
}

ParamLayout make_layout(const DecoderConfig &cfg, std::size_t num_terms, std::size_t num_outputs) {
  const std::size_t d = cfg.embedding_dim;
  const std::size_t h = cfg.head == HeadKind::gru ? cfg.hidden_dim : d;
  ParamLayout lay;
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  lay.term_emb = take(num_terms * d);
  lay.label_emb = take((num_outputs + 1) * d);
  lay.out_w = take(num_outputs * h);
  lay.out_b = take(num_outputs);
  if (cfg.head == HeadKind::gru) {
    lay.wz = take(h * 2 * d);
    lay.wr = take(h * 2 * d);
    lay.wh = take(h * 2 * d);
    lay.uz = take(h * h);
    lay.ur = take(h * h);
    lay.uh = take(h * h);
    lay.bz = take(h);
    lay.br = take(h);
    lay.bh = take(h);
    if (h != d) {
      lay.has_proj = true;
      lay.proj = take(h * d);
    }
  }
  lay.total = off;
  return lay;
}

DecoderModel::DecoderModel(DecoderConfig cfg, std::size_t num_terms, std::vector<std::uint64_t> label_frequency,
                           std::uint64_t vocab_fingerprint)
    : cfg_(cfg),
      num_terms_(num_terms),
      num_outputs_(label_frequency.size()),
      label_frequency_(std::move(label_frequency)),
      vocab_fingerprint_(vocab_fingerprint) {
  if (cfg_.embedding_dim < 2) throw Error("embedding_dim must be at least 2");
  if (cfg_.head == HeadKind::gru && cfg_.hidden_dim < 1) throw Error("hidden_dim must be positive");
  if (num_outputs_ < 2) throw Error("decoder needs at least one label besides stop");
  layout_ = make_layout(cfg_, num_terms_, num_outputs_);
  params_.assign(layout_.total, 0.0);

  Rng rng(mix_seed(cfg_.seed, 0x1417));
  auto fill = [&](std::size_t off, std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = rng.uniform(-scale, scale);
  };
  auto xavier = [](std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  };
  const std::size_t d = cfg_.embedding_dim;
  const std::size_t h = hidden_size();
  fill(layout_.term_emb, num_terms_ * d, cfg_.init_scale);
  fill(layout_.label_emb, (num_outputs_ + 1) * d, cfg_.init_scale);
  fill(layout_.out_w, num_outputs_ * h, xavier(h, num_outputs_));
  if (cfg_.head == HeadKind::gru) {
    for (auto off : {layout_.wz, layout_.wr, layout_.wh}) fill(off, h * 2 * d, xavier(2 * d, h));
    for (auto off : {layout_.uz, layout_.ur, layout_.uh}) fill(off, h * h, xavier(h, h));
    if (layout_.has_proj) fill(layout_.proj, h * d, xavier(d, h));
  }
}

std::size_t DecoderModel::hidden_size() const {
  return cfg_.head == HeadKind::gru ? cfg_.hidden_dim : cfg_.embedding_dim;
}

void DecoderModel::init_label_embeddings(std::span<const std::vector<std::uint32_t>> label_tokens) {
  const std::size_t d = cfg_.embedding_dim;
  for (std::size_t l = 0; l < label_tokens.size() && l < num_labels(); ++l) {
    if (label_tokens[l].empty()) continue;
    const auto e = encode(*this, label_tokens[l]);
    std::copy(e.begin(), e.end(), params_.begin() + static_cast<std::ptrdiff_t>(layout_.label_emb + l * d));
  }
}

std::vector<std::uint32_t> token_ids(std::span<const std::string> tokens, const TermVocabulary &terms) {
  std::vector<std::uint32_t> ids;
  ids.reserve(tokens.size());
  for (const auto &t : tokens) {
    if (const std::uint32_t *id = terms.find(t)) ids.push_back(*id);
  }
  return ids;
}

std::vector<std::uint32_t> token_ids(const Article &article, const TermVocabulary &terms) {
  return token_ids(article_tokens(article, true), terms);
}

std::vector<double> encode(const DecoderModel &model, std::span<const std::uint32_t> tokens) {
  const std::size_t d = model.config().embedding_dim;
  std::vector<double> e(d, 0.0);
  if (tokens.empty()) return e;
  const double *emb = model.params().data() + model.layout().term_emb;
  for (auto t : tokens) {
    if (t >= model.num_terms()) throw Error("token id out of range");
    const double *row = emb + static_cast<std::size_t>(t) * d;
    for (std::size_t i = 0; i < d; ++i) e[i] += row[i];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (auto &v : e) v *= inv;
  return e;
}

double bce_loss(std::span<const double> logits, std::span<const double> targets) {
  if (logits.size() != targets.size()) throw Error("bce_loss: dimension mismatch");
  if (logits.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += softplus_bce(logits[i], targets[i]);
  return total / static_cast<double>(logits.size());
}

std::vector<double> forward_linear(const DecoderModel &model, std::span<const double> embedding) {
  const auto &lay = model.layout();
  const double *p = model.params().data();
  std::vector<double> logits(p + lay.out_b, p + lay.out_b + model.num_outputs());
  gemv_acc(p + lay.out_w, model.num_outputs(), model.config().embedding_dim, embedding.data(), logits.data());
  return logits;
}

std::vector<double> forward_label_attention(const DecoderModel &model, std::span<const double> embedding) {
  return attention_forward(model, embedding).logits;
}

bool order_allows(LabelId label, LabelId prev, LabelOrder order, std::span<const std::uint64_t> freq, LabelId stop) {
  if (label == stop) return true;
  const auto key = std::pair(freq[label], label);
  const auto prev_key = std::pair(freq[prev], prev);
  return order == LabelOrder::descending ? key < prev_key : key > prev_key;
}

void mask_logits(std::span<double> logits, std::optional<LabelId> prev, LabelOrder order,
                 std::span<const std::uint64_t> freq, LabelId stop) {
  if (!prev || *prev >= freq.size()) return;
  for (LabelId l = 0; l < logits.size(); ++l) {
    if (!order_allows(l, *prev, order, freq, stop)) logits[l] = kMaskedLogit;
  }
}

DecoderTrace decode_gru(const DecoderModel &model, std::span<const double> embedding, std::size_t max_steps) {
  if (model.config().head != HeadKind::gru) throw Error("decode_gru needs a GRU head");
  const GruView view(model);
  const LabelId stop = model.stop_label();
  DecoderTrace trace;
  auto h = view.initial_hidden(embedding);
  LabelId input = model.start_symbol();
  std::optional<LabelId> prev;
  std::vector<bool> visited(model.num_outputs(), false);
  for (std::size_t t = 0; t < max_steps; ++t) {
    GruStep s = view.step(embedding, h, input);
    std::vector<double> allowed = s.logits;
    if (model.config().masked) mask_logits(allowed, prev, model.config().order, model.label_frequency(), stop);
    for (LabelId l = 0; l < visited.size(); ++l) {
      if (visited[l]) allowed[l] = kMaskedLogit;
    }
    const auto pred = static_cast<LabelId>(argmax(allowed));
    trace.logits.push_back(std::move(s.logits));
    trace.predicted.push_back(pred);
    if (pred == stop) break;
    visited[pred] = true;
    prev = pred;
    input = pred;
    h = std::move(s.h);
  }
  return trace;
}

std::vector<LabelId> gold_sequence(std::span<const LabelId> gold, LabelOrder order,
                                   std::span<const std::uint64_t> freq, LabelId stop) {
  std::vector<LabelId> seq;
  for (LabelId l : gold) {
    if (l != stop) seq.push_back(l);
  }
  std::sort(seq.begin(), seq.end());
  seq.erase(std::unique(seq.begin(), seq.end()), seq.end());
  std::sort(seq.begin(), seq.end(), [&](LabelId a, LabelId b) {
    const auto ka = std::pair(freq[a], a);
    const auto kb = std::pair(freq[b], b);
    return order == LabelOrder::ascending ? ka < kb : ka > kb;
  });
  seq.push_back(stop);
  return seq;
}

DecoderTrace teacher_forced_trace(const DecoderModel &model, std::span<const double> embedding,
                                  std::span<const LabelId> gold_seq) {
  const GruView view(model);
  std::vector<LabelId> inputs{model.start_symbol()};
  for (std::size_t t = 0; t + 1 < gold_seq.size(); ++t) inputs.push_back(gold_seq[t]);
  auto steps = view.run(embedding, inputs);
  DecoderTrace trace;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    trace.predicted.push_back(static_cast<LabelId>(argmax(steps[t].logits)));
    trace.logits.push_back(std::move(steps[t].logits));
    trace.targets.push_back(gold_seq[t]);
  }
  return trace;
}

double loss_boll(const DecoderTrace &trace, std::span<const LabelId> gold) {
  if (trace.logits.empty()) throw Error("loss_boll: empty trace");
  const std::size_t n = trace.logits.front().size();
  std::vector<double> agg = trace.logits.front();
  for (const auto &step : trace.logits) {
    for (std::size_t j = 0; j < n; ++j) agg[j] = std::max(agg[j], step[j]);
  }
  auto y = multi_hot(gold, n);
  y[n - 1] = 1.0;
  return bce_loss(agg, y);
}

double loss_ill(const DecoderTrace &trace) {
  if (trace.targets.size() != trace.logits.size()) throw Error("loss_ill: trace lacks per-step targets");
  double total = 0.0;
  for (std::size_t t = 0; t < trace.logits.size(); ++t) {
    std::vector<double> y(trace.logits[t].size(), 0.0);
    y.at(trace.targets[t]) = 1.0;
    total += bce_loss(trace.logits[t], y);
  }
  return total;
}

LossContext DecoderModel::prepare(const DecoderExample &ex, Rng *dropout_rng) const {
  LossContext ctx;
  const std::size_t d = cfg_.embedding_dim;
  if (dropout_rng != nullptr && cfg_.dropout > 0.0) {
    const double keep = 1.0 - cfg_.dropout;
    ctx.dropout_mask.resize(d);
    for (auto &m : ctx.dropout_mask) m = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
  }
  if (cfg_.head != HeadKind::gru) return ctx;
  auto e = encode(*this, ex.tokens);
  if (!ctx.dropout_mask.empty()) {
    for (std::size_t i = 0; i < d; ++i) e[i] *= ctx.dropout_mask[i];
  }
  ctx.inputs.push_back(start_symbol());
  if (cfg_.loss == LossKind::boll) {
    const auto trace = decode_gru(*this, e, cfg_.max_steps);
    for (std::size_t t = 0; t + 1 < trace.predicted.size(); ++t) ctx.inputs.push_back(trace.predicted[t]);
  } else {
    ctx.targets = gold_sequence(ex.gold, cfg_.order, label_frequency_, stop_label());
    for (std::size_t t = 0; t + 1 < ctx.targets.size(); ++t) ctx.inputs.push_back(ctx.targets[t]);
  }
  return ctx;
}

double DecoderModel::loss(const DecoderExample &ex, const LossContext &ctx, std::span<double> grad,
                          double grad_scale) const {
  const std::size_t d = cfg_.embedding_dim;
  const std::size_t out = num_outputs_;
  const double *p = params_.data();
  double *g = grad.empty() ? nullptr : grad.data();
  if (g != nullptr && grad.size() != params_.size()) throw Error("gradient buffer size mismatch");

  const auto raw = encode(*this, ex.tokens);
  std::vector<double> e = raw;
  if (!ctx.dropout_mask.empty()) {
    for (std::size_t i = 0; i < d; ++i) e[i] *= ctx.dropout_mask[i];
  }
  std::vector<double> de(d, 0.0);
  const double inv_out = 1.0 / static_cast<double>(out);
  double value = 0.0;

  if (cfg_.head == HeadKind::linear || cfg_.head == HeadKind::label_attention) {
    AttentionCache att;
    std::vector<double> logits;
    std::span<const double> h = e;
    if (cfg_.head == HeadKind::label_attention) {
      att = attention_forward(*this, e);
      logits = att.logits;
      h = att.h;
    } else {
      logits = forward_linear(*this, e);
    }
    const auto y = multi_hot(ex.gold, out - 1 + 1);
    std::vector<double> target = y;
    target[out - 1] = 0.0;
    value = bce_loss(logits, target);
    if (g != nullptr) {
      std::vector<double> dlog(out);
      for (std::size_t j = 0; j < out; ++j) dlog[j] = grad_scale * (sigmoid(logits[j]) - target[j]) * inv_out;
      ger_acc(g + layout_.out_w, out, d, dlog.data(), h.data());
      for (std::size_t j = 0; j < out; ++j) g[layout_.out_b + j] += dlog[j];
      std::vector<double> dh(d, 0.0);
      gemv_t_acc(p + layout_.out_w, out, d, dlog.data(), dh.data());
      for (std::size_t i = 0; i < d; ++i) de[i] += dh[i];
      if (cfg_.head == HeadKind::label_attention) {
        const std::size_t labels = num_labels();
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        const double *keys = p + layout_.label_emb;
        double *gkeys = g + layout_.label_emb;
        // dh flows into the attended value; keys double as values.
        std::vector<double> da(labels, 0.0);
        gemv_acc(keys, labels, d, dh.data(), da.data());
        ger_acc(gkeys, labels, d, att.weights.data(), dh.data());
        double mean = 0.0;
        for (std::size_t j = 0; j < labels; ++j) mean += att.weights[j] * da[j];
        std::vector<double> ds(labels);
        for (std::size_t j = 0; j < labels; ++j) ds[j] = att.weights[j] * (da[j] - mean) * scale;
        gemv_t_acc(keys, labels, d, ds.data(), de.data());
        ger_acc(gkeys, labels, d, ds.data(), e.data());
      }
    }
  } else {
    if (ctx.inputs.empty()) throw Error("GRU loss needs a prepared input sequence");
    const GruView view(*this);
    const auto steps = view.run(e, ctx.inputs);
    std::vector<std::vector<double>> dlogits(steps.size(), std::vector<double>(out, 0.0));
    if (cfg_.loss == LossKind::boll) {
      std::vector<double> agg = steps.front().logits;
      std::vector<std::size_t> from(out, 0);
      for (std::size_t t = 1; t < steps.size(); ++t) {
        for (std::size_t j = 0; j < out; ++j) {
          if (steps[t].logits[j] > agg[j]) {
            agg[j] = steps[t].logits[j];
            from[j] = t;
          }
        }
      }
      auto y = multi_hot(ex.gold, out);
      y[out - 1] = 1.0;
      value = bce_loss(agg, y);
      for (std::size_t j = 0; j < out; ++j) dlogits[from[j]][j] = grad_scale * (sigmoid(agg[j]) - y[j]) * inv_out;
    } else {
      if (ctx.targets.size() != steps.size()) throw Error("iterative loss needs one target per step");
      for (std::size_t t = 0; t < steps.size(); ++t) {
        std::vector<double> y(out, 0.0);
        y.at(ctx.targets[t]) = 1.0;
        value += bce_loss(steps[t].logits, y);
        for (std::size_t j = 0; j < out; ++j) {
          dlogits[t][j] = grad_scale * (sigmoid(steps[t].logits[j]) - y[j]) * inv_out;
        }
      }
    }
    if (g != nullptr) view.backward(steps, dlogits, e, g, de);
  }

  if (g != nullptr && !ex.tokens.empty()) {
    if (!ctx.dropout_mask.empty()) {
      for (std::size_t i = 0; i < d; ++i) de[i] *= ctx.dropout_mask[i];
    }
    const double inv = 1.0 / static_cast<double>(ex.tokens.size());
    for (auto t : ex.tokens) {
      double *row = g + layout_.term_emb + static_cast<std::size_t>(t) * d;
      for (std::size_t i = 0; i < d; ++i) row[i] += de[i] * inv;
    }
  }
  return value;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(DecoderModel &model, std::span<const DecoderExample> batch,
                                std::span<const LossContext> contexts, std::span<const std::size_t> coords,
                                double eps, double floor) {
  const double scale = 1.0 / static_cast<double>(batch.size());
  auto batch_loss = [&](std::span<double> grad) {
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) total += model.loss(batch[i], contexts[i], grad, scale);
    return total * scale;
  };
  std::vector<double> grad(model.params().size(), 0.0);
  batch_loss(grad);
  GradCheckResult result;
  auto params = model.params();
  for (std::size_t c : coords) {
    const double saved = params[c];
    params[c] = saved + eps;
    const double up = batch_loss({});
    params[c] = saved - eps;
    const double down = batch_loss({});
    params[c] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    result.max_rel_error = std::max(result.max_rel_error, relative_error(grad[c], numeric, floor));
    ++result.checked;
  }
  return result;
}

namespace {

std::vector<std::size_t> pick_check_coords(std::span<const double> grad, std::size_t count, Rng &rng) {
  std::vector<std::size_t> nonzero;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (grad[i] != 0.0) nonzero.push_back(i);
  }
  std::vector<std::size_t> coords;
  for (std::size_t k = 0; k < count; ++k) {
    if (k % 2 == 0 && !nonzero.empty()) {
      coords.push_back(nonzero[rng.below(nonzero.size())]);
    } else {
      coords.push_back(rng.below(grad.size()));
    }
  }
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  return coords;
}

}  // namespace

TrainedDecoder train_decoder(std::span<const DecoderExample> examples, DecoderModel model) {
  if (examples.empty()) throw Error("decoder training set is empty");
  const DecoderConfig cfg = model.config();
  if (cfg.batch_size < 1) throw Error("batch_size must be positive");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw Error("dropout must lie in [0, 1)");

  TrainedDecoder out;
  Rng rng(mix_seed(cfg.seed, 0x7a11));
  const std::size_t n = examples.size();
  const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, cfg.epochs * batches_per_epoch);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto params = model.params();
  std::vector<double> grad(params.size());
  std::vector<double> m1, m2;
  if (cfg.optimizer == OptimizerKind::adam) {
    m1.assign(params.size(), 0.0);
    m2.assign(params.size(), 0.0);
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::vector<DecoderExample> batch;
      std::vector<LossContext> contexts;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(examples[order[i]]);
        contexts.push_back(model.prepare(batch.back(), &rng));
      }
      const double scale = 1.0 / static_cast<double>(batch.size());
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      for (std::size_t i = 0; i < batch.size(); ++i) loss += model.loss(batch[i], contexts[i], grad, scale);
      loss *= scale;
      if (!std::isfinite(loss)) {
        throw Error("decoder training diverged at step " + std::to_string(step) + " (loss " + std::to_string(loss) +
                    ")");
      }

      if (step == 0 && cfg.grad_check_coords > 0) {
        Rng check_rng(mix_seed(cfg.seed, 0xc4ec));
        const auto coords = pick_check_coords(grad, cfg.grad_check_coords, check_rng);
        const auto check = check_gradients(model, batch, contexts, coords, 1e-5, 1e-6);
        out.grad_check_error = check.max_rel_error;
        if (check.max_rel_error > cfg.grad_check_tolerance) {
          throw Error("gradient check failed on the first batch: relative error " +
                      std::to_string(check.max_rel_error));
        }
        spdlog::debug("gradient check: {} coordinates, max relative error {:.3e}", check.checked,
                      check.max_rel_error);
      }

      double lr = cfg.learning_rate;
      if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
        lr *= static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
      } else if (total_steps > cfg.warmup_steps) {
        lr *= static_cast<double>(total_steps - step) / static_cast<double>(total_steps - cfg.warmup_steps);
      }

      if (cfg.optimizer == OptimizerKind::adam) {
        const double t = static_cast<double>(step + 1);
        const double c1 = 1.0 - std::pow(beta1, t);
        const double c2 = 1.0 - std::pow(beta2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
          m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
          m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
          params[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + adam_eps);
        }
      } else {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
      }
      out.loss_log.push_back({step, loss});
      epoch_total += loss * static_cast<double>(batch.size());
      ++step;
    }
    out.epoch_loss.push_back(epoch_total / static_cast<double>(n));
    spdlog::debug("decoder epoch {}: mean loss {:.6f}", epoch + 1, out.epoch_loss.back());
  }
  for (double v : params) {
    if (!std::isfinite(v)) throw Error("decoder parameters became non-finite");
  }
  out.model = std::move(model);
  return out;
}

DecoderModel make_decoder(const DecoderConfig &cfg, const TermVocabulary &terms, const LabelVocabulary &labels) {
  std::vector<std::uint64_t> freq(labels.frequencies().begin(), labels.frequencies().end());
  DecoderModel model(cfg, terms.size(), std::move(freq), labels.fingerprint());
  std::vector<std::vector<std::uint32_t>> label_tokens(labels.num_labels());
  for (LabelId l = 0; l < labels.num_labels(); ++l) {
    const auto &entry = labels.entry(l);
    auto tokens = tokenize(entry.descriptor);
    for (const auto &syn : entry.synonyms) {
      for (auto &t : tokenize(syn)) tokens.push_back(std::move(t));
    }
    label_tokens[l] = token_ids(tokens, terms);
  }
  model.init_label_embeddings(label_tokens);
  return model;
}

namespace {

struct Inference {
  LabelScores scores;
  std::vector<LabelId> labels;
};

Inference infer(const DecoderModel &model, std::span<const std::uint32_t> tokens) {
  const auto e = encode(model, tokens);
  const std::size_t labels = model.num_labels();
  std::vector<double> logits;
  Inference out;
  if (model.config().head == HeadKind::gru) {
    const auto trace = decode_gru(model, e, model.config().max_steps);
    logits = trace.logits.front();
    for (const auto &step : trace.logits) {
      for (std::size_t j = 0; j < logits.size(); ++j) logits[j] = std::max(logits[j], step[j]);
    }
    for (LabelId l : trace.predicted) {
      if (l != model.stop_label()) out.labels.push_back(l);
    }
    std::sort(out.labels.begin(), out.labels.end());
  } else {
    logits = model.config().head == HeadKind::linear ? forward_linear(model, e) : forward_label_attention(model, e);
  }
  out.scores.reserve(labels);
  for (LabelId l = 0; l < labels; ++l) out.scores.push_back({l, sigmoid(logits[l])});
  if (model.config().head != HeadKind::gru) out.labels = labels_above(out.scores, model.config().threshold);
  return out;
}

}  // namespace

LabelScores decoder_scores(const DecoderModel &model, std::span<const std::uint32_t> tokens) {
  return infer(model, tokens).scores;
}

std::vector<LabelId> predict_decoder(const DecoderModel &model, std::span<const std::uint32_t> tokens) {
  return infer(model, tokens).labels;
}

std::vector<LabelScores> decoder_scores_batch(const DecoderModel &model,
                                              std::span<const std::vector<std::uint32_t>> tokens, Execution exec) {
  std::vector<LabelScores> out(tokens.size());
  for_each_index(tokens.size(), [&](std::size_t i) { out[i] = decoder_scores(model, tokens[i]); }, exec);
  return out;
}

void DecoderModel::save(const std::filesystem::path &path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  BinaryWriter w(out);
  w.header(kMagic, kVersion);
  w.u64(cfg_.embedding_dim);
  w.u64(cfg_.hidden_dim);
  w.u8(static_cast<std::uint8_t>(cfg_.head));
  w.u8(static_cast<std::uint8_t>(cfg_.loss));
  w.u8(static_cast<std::uint8_t>(cfg_.order));
  w.u8(cfg_.masked ? 1 : 0);
  w.u64(cfg_.max_steps);
  w.u64(cfg_.batch_size);
  w.f64(cfg_.learning_rate);
  w.u64(cfg_.warmup_steps);
  w.f64(cfg_.dropout);
  w.u64(cfg_.epochs);
  w.u8(static_cast<std::uint8_t>(cfg_.optimizer));
  w.f64(cfg_.init_scale);
  w.u64(cfg_.seed);
  w.f64(cfg_.threshold);
  w.u64(num_terms_);
  w.u64(vocab_fingerprint_);
  w.u64(label_frequency_.size());
  for (auto f : label_frequency_) w.u64(f);
  w.f64s(params_);
  if (!out) throw Error("write failed for " + path.string());
}

DecoderModel DecoderModel::load(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open decoder checkpoint " + path.string());
  BinaryReader r(in, path.string());
  r.header(kMagic, kVersion);
  DecoderConfig cfg;
  cfg.embedding_dim = r.u64();
  cfg.hidden_dim = r.u64();
  const auto head = r.u8(), loss = r.u8(), order = r.u8();
  if (head > 2 || loss > 1 || order > 1) throw Error(path.string() + ": corrupt decoder config");
  cfg.head = static_cast<HeadKind>(head);
  cfg.loss = static_cast<LossKind>(loss);
  cfg.order = static_cast<LabelOrder>(order);
  cfg.masked = r.u8() != 0;
  cfg.max_steps = r.u64();
  cfg.batch_size = r.u64();
  cfg.learning_rate = r.f64();
  cfg.warmup_steps = r.u64();
  cfg.dropout = r.f64();
  cfg.epochs = r.u64();
  cfg.optimizer = r.u8() == 0 ? OptimizerKind::sgd : OptimizerKind::adam;
  cfg.init_scale = r.f64();
  cfg.seed = r.u64();
  cfg.threshold = r.f64();
  const auto num_terms = r.u64();
  const auto fingerprint = r.u64();
  std::vector<std::uint64_t> freq(r.count(1ULL << 32));
  for (auto &f : freq) f = r.u64();
  DecoderModel model(cfg, num_terms, std::move(freq), fingerprint);
  auto params = r.f64s();
  if (params.size() != model.params_.size()) throw Error(path.string() + ": parameter count mismatch");
  model.params_ = std::move(params);
  r.expect_end();
  return model;
}

}  // namespace xmlc
