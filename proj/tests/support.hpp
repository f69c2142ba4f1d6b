// SPDX-License-Identifier: Apache-2.0
// Independent oracles and fixtures shared by the unit and acceptance tests.
// Nothing here calls into the code under test except for plain data types.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "xmlc/corpus.hpp"
#include "xmlc/rng.hpp"

namespace xmlc::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string &tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("xmlc-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Squared-hinge SVM: exact minimum by active-set enumeration.
//
// The primal f(v) = 1/2 |v|^2 + C sum_i max(0, 1 - y_i v.z_i)^2 over the
// augmented vectors z_i = (x_i, 1) is strictly convex. For any index set S the
// quadratic that treats exactly S as active has a unique minimizer v_S, and
// v_S equals the true optimum when S is the optimum's active set. Hence
// min_S f(v_S) is the exact minimum: every f(v_S) is an upper bound and one of
// them is attained. Feasible for n <= 12.
// ---------------------------------------------------------------------------

inline std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

inline double primal_dense(const std::vector<std::vector<double>> &z, const std::vector<double> &y,
                           const std::vector<double> &v, double C) {
  double f = 0.0;
  for (double w : v) f += 0.5 * w * w;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) m += v[k] * z[i][k];
    const double slack = std::max(0.0, 1.0 - y[i] * m);
    f += C * slack * slack;
  }
  return f;
}

/// Minimum of the bias-augmented squared-hinge primal.
inline double brute_force_svm_minimum(const std::vector<std::vector<double>> &x, const std::vector<double> &y,
                                      double C) {
  const std::size_t n = x.size();
  const std::size_t d = x.empty() ? 0 : x[0].size() + 1;
  std::vector<std::vector<double>> z = x;
  for (auto &row : z) row.push_back(1.0);
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    // Stationarity of the S-quadratic: (I + 2C sum_S z z^T) v = 2C sum_S y z.
    std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
    std::vector<double> b(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) a[k][k] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(mask & (1u << i))) continue;
      for (std::size_t r = 0; r < d; ++r) {
        b[r] += 2.0 * C * y[i] * z[i][r];
        for (std::size_t c = 0; c < d; ++c) a[r][c] += 2.0 * C * z[i][r] * z[i][c];
      }
    }
    best = std::min(best, primal_dense(z, y, solve_dense(a, b), C));
  }
  return best;
}

struct ToySvmProblem {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  double C = 1.0;
};

/// Dense problem with n <= 10 points in d <= 3 dimensions and both classes.
inline ToySvmProblem random_toy_svm(std::uint64_t seed) {
  Rng rng(seed);
  ToySvmProblem p;
  const std::size_t n = 2 + rng.below(9);
  const std::size_t d = 1 + rng.below(3);
  const double cs[] = {0.1, 1.0, 10.0};
  p.C = cs[rng.below(3)];
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(d);
    for (auto &v : row) v = rng.uniform(-2.0, 2.0);
    p.x.push_back(row);
    p.y.push_back(i == 0 ? 1.0 : (i == 1 ? -1.0 : (rng.bernoulli(0.5) ? 1.0 : -1.0)));
  }
  return p;
}

// ---------------------------------------------------------------------------
// BM25 evaluated straight from the textbook formula over token lists.
// ---------------------------------------------------------------------------

struct Bm25Doc {
  std::vector<std::vector<std::string>> fields;  // one token list per field
};

inline double bm25_formula(const std::vector<Bm25Doc> &docs, const std::vector<std::string> &query,
                           std::size_t doc, const std::vector<double> &field_weights, double k1, double b) {
  const double n = static_cast<double>(docs.size());
  std::set<std::string> terms(query.begin(), query.end());
  double total = 0.0;
  for (std::size_t f = 0; f < field_weights.size(); ++f) {
    double avg = 0.0;
    for (const auto &d : docs) avg += static_cast<double>(d.fields[f].size());
    avg /= n;
    double field = 0.0;
    for (const auto &t : terms) {
      double df = 0.0;
      for (const auto &d : docs) df += std::count(d.fields[f].begin(), d.fields[f].end(), t) > 0 ? 1.0 : 0.0;
      const double tf = static_cast<double>(std::count(docs[doc].fields[f].begin(), docs[doc].fields[f].end(), t));
      if (tf == 0.0) continue;
      const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
      const double len = static_cast<double>(docs[doc].fields[f].size());
      field += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
    }
    total += field_weights[f] * field;
  }
  return total;
}

/// Three hand-written articles; vocabulary D1 "adulto" (synonym "adult"),
/// D2 "niño" (synonyms "child", "infant").
struct Bm25Fixture {
  LabelVocabulary vocab{std::vector<LabelEntry>{{"D1", "adulto", {"adult"}}, {"D2", "niño", {"child", "infant"}}}};
  std::vector<Article> articles{
      {"a", "Heart disease", "heart failure in adult patients heart", {"D1"}},
      {"b", "Child growth", "growth curves of the child and infant", {"D2"}},
      {"c", "Heart of the child", "congenital heart defects", {"D1", "D2"}},
  };
  /// Token lists by field (abstract, title, label text), written out by hand.
  std::vector<Bm25Doc> docs{
      {{{"heart", "failure", "in", "adult", "patients", "heart"}, {"heart", "disease"}, {"adulto", "adult"}}},
      {{{"growth", "curves", "of", "the", "child", "and", "infant"}, {"child", "growth"}, {"niño", "child", "infant"}}},
      {{{"congenital", "heart", "defects"},
        {"heart", "of", "the", "child"},
        {"adulto", "adult", "niño", "child", "infant"}}},
  };
};

// ---------------------------------------------------------------------------
// Multi-label metrics recomputed from a dense 0/1 confusion table.
// ---------------------------------------------------------------------------

struct BruteMetrics {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double micro_p = 0, micro_r = 0, micro_f = 0;
  double macro_p = 0, macro_r = 0, macro_f = 0;
  double eb_p = 0, eb_r = 0, eb_f = 0;
};

inline double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
inline double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

inline BruteMetrics brute_force_metrics(const std::vector<std::vector<std::uint32_t>> &pred,
                                        const std::vector<std::vector<std::uint32_t>> &gold,
                                        std::uint32_t label_space) {
  BruteMetrics m;
  const std::size_t n = pred.size();
  auto has = [](const std::vector<std::uint32_t> &s, std::uint32_t l) {
    return std::find(s.begin(), s.end(), l) != s.end();
  };
  std::vector<std::uint64_t> ltp(label_space), lfp(label_space), lfn(label_space);
  for (std::size_t a = 0; a < n; ++a) {
    std::uint64_t atp = 0, afp = 0, afn = 0;
    for (std::uint32_t l = 0; l < label_space; ++l) {
      const bool p = has(pred[a], l), g = has(gold[a], l);
      if (p && g) ++ltp[l], ++atp;
      if (p && !g) ++lfp[l], ++afp;
      if (!p && g) ++lfn[l], ++afn;
    }
    m.tp += atp, m.fp += afp, m.fn += afn;
    if (pred[a].empty() && gold[a].empty()) {
      m.eb_p += 1.0, m.eb_r += 1.0, m.eb_f += 1.0;
    } else {
      const double p = ratio(atp, atp + afp), r = ratio(atp, atp + afn);
      m.eb_p += p, m.eb_r += r, m.eb_f += harmonic(p, r);
    }
  }
  m.eb_p /= n, m.eb_r /= n, m.eb_f /= n;
  m.micro_p = ratio(m.tp, m.tp + m.fp);
  m.micro_r = ratio(m.tp, m.tp + m.fn);
  m.micro_f = harmonic(m.micro_p, m.micro_r);
  std::size_t labels = 0;
  for (std::uint32_t l = 0; l < label_space; ++l) {
    if (ltp[l] + lfp[l] + lfn[l] == 0) continue;
    ++labels;
    const double p = ratio(ltp[l], ltp[l] + lfp[l]), r = ratio(ltp[l], ltp[l] + lfn[l]);
    m.macro_p += p, m.macro_r += r, m.macro_f += harmonic(p, r);
  }
  if (labels > 0) m.macro_p /= labels, m.macro_r /= labels, m.macro_f /= labels;
  return m;
}

/// Random sorted label set drawn from [0, label_space).
inline std::vector<std::uint32_t> random_label_set(Rng &rng, std::uint32_t label_space, std::size_t max_size) {
  std::set<std::uint32_t> s;
  const std::size_t k = rng.below(max_size + 1);
  while (s.size() < std::min<std::size_t>(k, label_space)) s.insert(static_cast<std::uint32_t>(rng.below(label_space)));
  return {s.begin(), s.end()};
}

// ---------------------------------------------------------------------------
// Binary cross-entropy in long double, written the naive way.
// ---------------------------------------------------------------------------

inline long double naive_bce(const std::vector<double> &x, const std::vector<double> &y) {
  long double total = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double s = 1.0L / (1.0L + std::exp(-static_cast<long double>(x[i])));
    total += -(y[i] * std::log(s) + (1.0L - y[i]) * std::log(1.0L - s));
  }
  return total / static_cast<long double>(x.size());
}

// ---------------------------------------------------------------------------
// Small labelled fixtures.
// ---------------------------------------------------------------------------

inline LabelVocabulary make_vocab(std::size_t n_labels) {
  std::vector<LabelEntry> entries;
  for (std::size_t i = 0; i < n_labels; ++i) {
    entries.push_back({"L" + std::to_string(i), "label" + std::to_string(i), {"syn" + std::to_string(i)}});
  }
  return LabelVocabulary(std::move(entries));
}

inline Article make_article(std::string id, std::string title, std::string text, std::vector<std::string> gold) {
  std::sort(gold.begin(), gold.end());
  return Article{std::move(id), std::move(title), std::move(text), std::move(gold)};
}

}  // namespace xmlc::testing
