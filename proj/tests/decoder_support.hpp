// SPDX-License-Identifier: Apache-2.0
// Small random decoders and a central-difference oracle over every parameter.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "xmlc/decoder.hpp"
#include "xmlc/rng.hpp"

namespace xmlc::testing {

struct TinyDecoder {
  DecoderModel model;
  DecoderExample example;
  LossContext context;
};

/// dim <= 8, at most 6 labels, traces of at most 4 steps. Parameters are
/// drawn wide enough that no unit saturates and every bias matters.
inline TinyDecoder tiny_decoder(HeadKind head, LossKind loss, std::uint64_t seed, bool masked = false,
                                LabelOrder order = LabelOrder::ascending) {
  Rng rng(mix_seed(seed, 0x71d));
  DecoderConfig cfg;
  cfg.head = head;
  cfg.loss = loss;
  cfg.order = order;
  cfg.masked = masked;
  cfg.embedding_dim = 2 + rng.below(7);
  cfg.hidden_dim = rng.bernoulli(0.5) ? cfg.embedding_dim : 2 + rng.below(7);
  cfg.max_steps = 4;
  cfg.dropout = 0.2;
  cfg.seed = seed;
  const std::size_t labels = 2 + rng.below(5);
  const std::size_t terms = 6;
  std::vector<std::uint64_t> freq(labels + 1, 0);
  for (std::size_t l = 0; l < labels; ++l) freq[l] = rng.below(5);

  TinyDecoder t{DecoderModel(cfg, terms, freq), {}, {}};
  for (double &p : t.model.params()) p = rng.uniform(-0.8, 0.8);
  const std::size_t n_tokens = 1 + rng.below(4);
  for (std::size_t k = 0; k < n_tokens; ++k) t.example.tokens.push_back(static_cast<std::uint32_t>(rng.below(terms)));
  // At most three gold labels so that gold sequence + stop fits in four steps.
  std::vector<LabelId> all(labels);
  for (LabelId l = 0; l < labels; ++l) all[l] = l;
  rng.shuffle(std::span(all));
  all.resize(rng.below(std::min<std::size_t>(labels, 3) + 1));
  std::sort(all.begin(), all.end());
  t.example.gold = all;
  Rng dropout(mix_seed(seed, 0xd0));
  t.context = t.model.prepare(t.example, &dropout);
  return t;
}

struct FiniteDifference {
  double max_rel_error = 0.0;
  double max_abs_gradient = 0.0;
  std::size_t coords = 0;
};

/// Central differences on every parameter with the context held fixed.
/// Relative error |a - n| / max(|a|, |n|, floor).
inline FiniteDifference finite_difference_check(TinyDecoder &t, double eps = 1e-5, double floor = 1e-6) {
  auto params = t.model.params();
  std::vector<double> grad(params.size(), 0.0);
  t.model.loss(t.example, t.context, grad);
  FiniteDifference out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = t.model.loss(t.example, t.context, {});
    params[i] = saved - eps;
    const double down = t.model.loss(t.example, t.context, {});
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::fabs(grad[i]), std::fabs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::fabs(grad[i] - numeric) / denom);
    out.max_abs_gradient = std::max(out.max_abs_gradient, std::fabs(grad[i]));
    ++out.coords;
  }
  return out;
}

}  // namespace xmlc::testing

namespace xmlc::testing {

struct MaskingAudit {
  std::size_t traces = 0;
  std::size_t order_violations = 0;
  std::size_t unterminated = 0;
  std::size_t out_of_range = 0;
};

/// Decodes random masked GRU models on random embeddings and checks that
/// every trace is strictly monotone in (frequency, id) and terminates.
inline MaskingAudit audit_masked_traces(std::size_t count, LabelOrder order, std::uint64_t seed) {
  MaskingAudit audit;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    DecoderConfig cfg;
    cfg.head = HeadKind::gru;
    cfg.masked = true;
    cfg.order = order;
    cfg.embedding_dim = 2 + rng.below(7);
    cfg.hidden_dim = 2 + rng.below(7);
    cfg.max_steps = 1 + rng.below(12);
    cfg.seed = rng.next();
    const std::size_t labels = 1 + rng.below(10);
    std::vector<std::uint64_t> freq(labels + 1, 0);
    for (std::size_t l = 0; l < labels; ++l) freq[l] = rng.below(4);  // plenty of ties
    DecoderModel model(cfg, 4, freq);
    for (double &p : model.params()) p = rng.uniform(-2.0, 2.0);
    // Discourage early stops so that traces get long.
    model.params()[model.layout().out_b + labels] = -4.0;
    std::vector<double> e(cfg.embedding_dim);
    for (double &v : e) v = rng.uniform(-1.0, 1.0);

    const auto trace = decode_gru(model, e, cfg.max_steps);
    ++audit.traces;
    const LabelId stop = model.stop_label();
    const bool stopped = !trace.predicted.empty() && trace.predicted.back() == stop;
    if (trace.length() == 0 || trace.length() > cfg.max_steps || (!stopped && trace.length() != cfg.max_steps)) {
      ++audit.unterminated;
    }
    for (std::size_t t = 0; t < trace.predicted.size(); ++t) {
      const LabelId l = trace.predicted[t];
      if (l > stop) ++audit.out_of_range;
      if (l == stop && t + 1 != trace.predicted.size()) ++audit.unterminated;
      if (t == 0 || l == stop) continue;
      const LabelId p = trace.predicted[t - 1];
      const auto key = std::pair(freq[l], l), prev = std::pair(freq[p], p);
      const bool ok = order == LabelOrder::ascending ? prev < key : key < prev;
      if (!ok) ++audit.order_violations;
    }
  }
  return audit;
}

}  // namespace xmlc::testing
