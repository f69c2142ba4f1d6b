// SPDX-License-Identifier: Apache-2.0
#include "xmlc/svm_ovr.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>

#include "xmlc/binary_io.hpp"
#include "xmlc/error.hpp"
#include "xmlc/rng.hpp"
#include "xmlc/svm_solver.hpp"

namespace xmlc {

namespace {

constexpr std::string_view kMagic = "XSVM";
constexpr std::uint32_t kVersion = 1;

}  // namespace

SvmOvrModel::SvmOvrModel(std::size_t dim, double plane_shift, std::uint64_t vocab_fingerprint,
                         std::vector<LabelHyperplane> planes, ShiftUnits units)
    : dim_(dim), plane_shift_(plane_shift), units_(units), vocab_fingerprint_(vocab_fingerprint), planes_(std::move(planes)) {
  std::sort(planes_.begin(), planes_.end(), [](const auto &a, const auto &b) { return a.label < b.label; });
}

std::vector<LabelId> SvmOvrModel::trained_labels() const {
  std::vector<LabelId> ids;
  ids.reserve(planes_.size());
  for (const auto &p : planes_) ids.push_back(p.label);
  return ids;
}

LabelScores SvmOvrModel::score(const SparseVector &x) const {
  LabelScores scores;
  scores.reserve(planes_.size());
  for (const auto &p : planes_) {
    const double raw = dot(x, p.w) + p.bias;
    scores.push_back({p.label, p.norm > 0.0 ? raw / p.norm : raw});
  }
  return scores;
}

std::vector<LabelId> SvmOvrModel::predict(const SparseVector &x, double shift) const {
  if (units_ == ShiftUnits::distance) return labels_above(score(x), shift);
  std::vector<LabelId> out;
  for (const auto &p : planes_) {
    if (dot(x, p.w) + p.bias > shift) out.push_back(p.label);
  }
  return out;
}

std::string to_string(ShiftUnits u) { return u == ShiftUnits::distance ? "distance" : "margin"; }

ShiftUnits parse_shift_units(std::string_view s) {
  if (s == "distance") return ShiftUnits::distance;
  if (s == "margin") return ShiftUnits::margin;
  throw Error("unknown shift units '" + std::string(s) + "' (expected distance or margin)");
}

void SvmOvrModel::save(const std::filesystem::path &path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  BinaryWriter w(out);
  w.header(kMagic, kVersion);
  w.u64(dim_);
  w.f64(plane_shift_);
  w.u8(static_cast<std::uint8_t>(units_));
  w.u64(vocab_fingerprint_);
  w.u64(planes_.size());
  for (const auto &p : planes_) {
    w.u32(p.label);
    w.f64(p.bias);
    w.u64(p.w.nnz());
    for (std::size_t k = 0; k < p.w.nnz(); ++k) {
      w.u32(p.w.indices[k]);
      w.f64(p.w.values[k]);
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

SvmOvrModel SvmOvrModel::load(const std::filesystem::path &path, const LabelVocabulary &vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open SVM model " + path.string());
  BinaryReader r(in, path.string());
  r.header(kMagic, kVersion);
  const auto dim = r.u64();
  const double shift = r.f64();
  const auto units = r.u8();
  if (units > 1) throw Error(path.string() + ": corrupt shift units");
  const auto fingerprint = r.u64();
  if (fingerprint != vocab.fingerprint()) {
    throw Error(path.string() + ": model was trained with a different label vocabulary");
  }
  const auto count = r.count(vocab.size());
  std::vector<LabelHyperplane> planes(count);
  for (auto &p : planes) {
    p.label = r.u32();
    if (p.label >= vocab.num_labels()) throw Error(path.string() + ": label id out of range");
    p.bias = r.f64();
    const auto nnz = r.count(dim);
    p.w.indices.resize(nnz);
    p.w.values.resize(nnz);
    for (std::size_t k = 0; k < nnz; ++k) {
      p.w.indices[k] = r.u32();
      p.w.values[k] = r.f64();
      if (p.w.indices[k] >= dim || (k > 0 && p.w.indices[k] <= p.w.indices[k - 1])) {
        throw Error(path.string() + ": corrupt weight vector");
      }
    }
    p.norm = p.w.norm();
  }
  r.expect_end();
  return SvmOvrModel(dim, shift, fingerprint, std::move(planes), static_cast<ShiftUnits>(units));
}

std::vector<LabelId> labels_meeting_cutoff(std::span<const std::vector<LabelId>> gold,
                                           std::size_t num_labels, std::uint64_t min_frequency) {
  std::vector<std::uint64_t> freq(num_labels, 0);
  for (const auto &g : gold) {
    for (LabelId l : g) {
      if (l < num_labels) ++freq[l];
    }
  }
  std::vector<LabelId> kept;
  for (LabelId l = 0; l < num_labels; ++l) {
    if (freq[l] >= min_frequency && freq[l] > 0) kept.push_back(l);
  }
  return kept;
}

LabelHyperplane train_label(std::span<const SparseVector> x, std::span<const std::vector<LabelId>> gold,
                            LabelId label, std::size_t dim, const SvmConfig &cfg) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::binary_search(gold[i].begin(), gold[i].end(), label) ? 1.0 : -1.0;
  }
  DualCdOptions opt;
  opt.C = cfg.C;
  opt.tolerance = cfg.tolerance;
  opt.max_iterations = cfg.max_iterations;
  opt.seed = mix_seed(cfg.seed, label);
  opt.fit_bias = true;
  auto solved = solve_squared_hinge(x, y, dim, opt);

  LabelHyperplane plane;
  plane.label = label;
  plane.bias = solved.bias;
  for (std::uint32_t k = 0; k < solved.w.size(); ++k) {
    if (!std::isfinite(solved.w[k])) throw Error("non-finite SVM weight for label " + std::to_string(label));
    if (solved.w[k] != 0.0) {
      plane.w.indices.push_back(k);
      plane.w.values.push_back(solved.w[k]);
    }
  }
  plane.norm = plane.w.norm();
  return plane;
}

SvmOvrModel train_ovr(std::span<const SparseVector> x, std::span<const std::vector<LabelId>> gold,
                      std::size_t dim, const LabelVocabulary &vocab, const SvmConfig &cfg, Execution exec) {
  if (x.empty()) throw Error("SVM training set is empty");
  if (x.size() != gold.size()) throw Error("SVM features and gold sets differ in length");
  if (!(cfg.C > 0.0)) throw Error("SVM C must be positive");
  if (cfg.min_label_frequency < 1) throw Error("min_label_frequency must be at least 1");

  std::vector<LabelId> labels;
  for (LabelId l : labels_meeting_cutoff(gold, vocab.num_labels(), cfg.min_label_frequency)) {
    std::size_t positives = 0;
    for (const auto &g : gold) positives += std::binary_search(g.begin(), g.end(), l) ? 1 : 0;
    if (positives == x.size()) {
      spdlog::warn("label {} is carried by every training article; skipped", vocab.code(l));
      continue;
    }
    labels.push_back(l);
  }

  std::vector<LabelHyperplane> planes(labels.size());
  for_each_index(
      labels.size(), [&](std::size_t i) { planes[i] = train_label(x, gold, labels[i], dim, cfg); }, exec);
  return SvmOvrModel(dim, cfg.plane_shift, vocab.fingerprint(), std::move(planes), cfg.shift_units);
}

}  // namespace xmlc
