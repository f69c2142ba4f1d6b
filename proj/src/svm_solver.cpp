// SPDX-License-Identifier: Apache-2.0
#include "xmlc/svm_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xmlc/error.hpp"
#include "xmlc/rng.hpp"

namespace xmlc {

DualCdResult solve_squared_hinge(std::span<const SparseVector> rows, std::span<const double> y,
                                 std::size_t dim, const DualCdOptions &opt) {
  if (rows.size() != y.size()) throw Error("solver: rows and targets differ in length");
  if (!(opt.C > 0.0)) throw Error("solver: C must be positive");
  const std::size_t n = rows.size();
  const double diag = 0.5 / opt.C;
  const double bias_feature = opt.fit_bias ? 1.0 : 0.0;

  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  std::vector<double> alpha(n, 0.0);
  std::vector<double> qii(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto idx : rows[i].indices) {
      if (idx >= dim) throw Error("solver: feature index out of range");
    }
    qii[i] = rows[i].squared_norm() + bias_feature + diag;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opt.seed);

  DualCdResult result;
  for (std::uint64_t epoch = 0; epoch < opt.max_iterations; ++epoch) {
    rng.shuffle(std::span(order));
    double max_pg = 0.0;
    for (std::size_t i : order) {
      const SparseVector &x = rows[i];
      const double yi = y[i];
      const double margin = yi * (dot(x, w) + b * bias_feature);
      const double g = margin - 1.0 + diag * alpha[i];
      const double pg = alpha[i] == 0.0 ? std::min(g, 0.0) : g;
      max_pg = std::max(max_pg, std::fabs(pg));
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::max(old - g / qii[i], 0.0);
      const double step = (alpha[i] - old) * yi;
      for (std::size_t k = 0; k < x.indices.size(); ++k) w[x.indices[k]] += step * x.values[k];
      b += step * bias_feature;
    }
    result.epochs = epoch + 1;
    result.max_violation = max_pg;
    if (opt.record_objective) {
      double wnorm2 = b * b;
      for (double v : w) wnorm2 += v * v;
      double dual = 0.5 * wnorm2;
      for (double a : alpha) dual += 0.5 * diag * a * a - a;
      result.dual_objective.push_back(dual);
    }
    if (max_pg < opt.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.w = std::move(w);
  result.bias = b;
  return result;
}

double squared_hinge_primal(std::span<const SparseVector> rows, std::span<const double> y,
                            std::span<const double> w, double bias, double C, bool fit_bias) {
  double reg = 0.0;
  for (double v : w) reg += v * v;
  if (fit_bias) reg += bias * bias;
  double loss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double slack = std::max(0.0, 1.0 - y[i] * (dot(rows[i], w) + (fit_bias ? bias : 0.0)));
    loss += slack * slack;
  }
  return 0.5 * reg + C * loss;
}

}  // namespace xmlc
