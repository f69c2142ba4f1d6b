// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xmlc/featurize.hpp"

namespace xmlc {

struct DualCdOptions {
  double C = 1.0;
  /// Stop once max |projected gradient| over an epoch falls below this.
  double tolerance = 0.1;
  std::uint64_t max_iterations = 1000;
  std::uint64_t seed = 1;
  /// Appends a constant-1 feature whose weight is the bias.
  bool fit_bias = true;
  bool record_objective = false;
};

struct DualCdResult {
  /// Feature weights (size dim) and the bias (0 when fit_bias is false).
  std::vector<double> w;
  double bias = 0.0;
  std::uint64_t epochs = 0;
  bool converged = false;
  double max_violation = 0.0;
  /// Dual objective after every epoch (only with record_objective).
  std::vector<double> dual_objective;
};

/// Dual coordinate descent for the L2-regularized squared-hinge SVM
///
///   min_w  1/2 |w|^2 + C * sum_i max(0, 1 - y_i w.x_i)^2
///
/// via its diagonal-shifted dual (D_ii = 1 / 2C, no upper bound on alpha).
/// With fit_bias the bias is the weight of an appended constant-1 feature and
/// is therefore regularized like the other weights. Instances are visited in
/// a fresh seeded permutation every epoch.
DualCdResult solve_squared_hinge(std::span<const SparseVector> rows, std::span<const double> y,
                                 std::size_t dim, const DualCdOptions &opt);

/// Primal objective of the problem above for a given (w, bias).
double squared_hinge_primal(std::span<const SparseVector> rows, std::span<const double> y,
                            std::span<const double> w, double bias, double C, bool fit_bias);

}  // namespace xmlc
