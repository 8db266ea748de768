#pragma once

#include <vector>

#include "latree/kernels.hpp"

namespace latree {

struct NnlsSolution {
  // One coefficient per Gram term; the last is the intercept.
  std::vector<double> coef;
  int iterations = 0;
  bool used_fallback = false;
};

/// Minimises ||A z - y||^2 subject to z >= 0, given the normal equations of
/// A (stats.gram = A^T A, stats.xty = A^T y). Lawson-Hanson active set on a
/// power-of-two column scaling of the Gram matrix; falls back to accelerated
/// projected gradient if the active set fails to settle.
NnlsSolution solve_nnls(const kernels::GramStats& stats);

// Projected gradient only. Exposed for tests and for the fallback path.
NnlsSolution solve_nnls_projected_gradient(const kernels::GramStats& stats,
                                           int max_iterations = 200000);

// ||A z - y||^2 evaluated from the sufficient statistics.
double gram_sse(const kernels::GramStats& stats, const std::vector<double>& coef);

// Largest KKT violation, scaled by the column norm and ||y||: for z_i > 0
// |grad_i|, for z_i = 0 max(0, -grad_i).
double kkt_residual(const kernels::GramStats& stats, const std::vector<double>& coef);

}  // namespace latree
