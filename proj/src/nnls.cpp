#include "latree/nnls.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace latree {

namespace {

constexpr double kKktTolerance = 1e-10;

// Problem rescaled by exact powers of two so that unit-ish diagonals do not
// cost any rounding.
struct Scaled {
  std::size_t m = 0;
  Eigen::MatrixXd gram;
  Eigen::VectorXd xty;
  Eigen::VectorXd scale;  // 0 marks an all-zero column, pinned at 0
};

Scaled rescale(const kernels::GramStats& stats) {
  Scaled s;
  s.m = stats.terms;
  s.gram.resize(s.m, s.m);
  s.xty.resize(s.m);
  s.scale.resize(s.m);
  for (std::size_t i = 0; i < s.m; ++i) {
    const double diag = stats.at(i, i);
    s.scale[i] = diag > 0 ? std::exp2(std::round(std::log2(std::sqrt(diag)))) : 0.0;
  }
  for (std::size_t i = 0; i < s.m; ++i) {
    s.xty[i] = s.scale[i] > 0 ? stats.xty[i] / s.scale[i] : 0.0;
    for (std::size_t j = 0; j < s.m; ++j) {
      s.gram(i, j) = (s.scale[i] > 0 && s.scale[j] > 0)
                         ? stats.at(i, j) / s.scale[i] / s.scale[j]
                         : 0.0;
    }
  }
  return s;
}

std::vector<double> unscale(const Scaled& s, const Eigen::VectorXd& z) {
  std::vector<double> coef(s.m, 0.0);
  for (std::size_t i = 0; i < s.m; ++i) coef[i] = s.scale[i] > 0 ? z[i] / s.scale[i] : 0.0;
  return coef;
}

Eigen::VectorXd solve_passive(const Scaled& s, const std::vector<std::size_t>& passive) {
  const auto p = static_cast<Eigen::Index>(passive.size());
  Eigen::MatrixXd sub(p, p);
  Eigen::VectorXd rhs(p);
  for (Eigen::Index a = 0; a < p; ++a) {
    rhs[a] = s.xty[passive[a]];
    for (Eigen::Index b = 0; b < p; ++b) sub(a, b) = s.gram(passive[a], passive[b]);
  }
  Eigen::VectorXd sol = sub.ldlt().solve(rhs);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(s.m);
  for (Eigen::Index a = 0; a < p; ++a) full[passive[a]] = sol[a];
  return full;
}

bool finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

double gram_sse(const kernels::GramStats& stats, const std::vector<double>& coef) {
  double quad = 0;
  double lin = 0;
  for (std::size_t i = 0; i < stats.terms; ++i) {
    lin += coef[i] * stats.xty[i];
    for (std::size_t j = 0; j < stats.terms; ++j) quad += coef[i] * stats.at(i, j) * coef[j];
  }
  return std::max(0.0, stats.yty - 2.0 * lin + quad);
}

double kkt_residual(const kernels::GramStats& stats, const std::vector<double>& coef) {
  const double ynorm = std::sqrt(std::max(stats.yty, std::numeric_limits<double>::min()));
  double worst = 0;
  for (std::size_t i = 0; i < stats.terms; ++i) {
    const double colnorm = std::sqrt(stats.at(i, i));
    if (colnorm == 0) continue;
    double grad = -stats.xty[i];
    for (std::size_t j = 0; j < stats.terms; ++j) grad += stats.at(i, j) * coef[j];
    grad /= colnorm * ynorm;
    const double violation = coef[i] > 0 ? std::abs(grad) : std::max(0.0, -grad);
    worst = std::max(worst, violation);
  }
  return worst;
}

NnlsSolution solve_nnls(const kernels::GramStats& stats) {
  const Scaled s = rescale(stats);
  const std::size_t m = s.m;
  const double tol = kKktTolerance * std::max(s.xty.cwiseAbs().maxCoeff(), 1e-300);

  Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
  std::vector<bool> in_passive(m, false);
  std::vector<bool> blocked(m, false);
  NnlsSolution out;

  const int max_outer = 3 * static_cast<int>(m) + 10;
  bool converged = false;
  for (int outer = 0; outer < max_outer; ++outer) {
    ++out.iterations;
    const Eigen::VectorXd neg_grad = s.xty - s.gram * z;
    std::size_t pick = m;
    double best = tol;
    for (std::size_t j = 0; j < m; ++j) {
      if (in_passive[j] || blocked[j] || s.scale[j] == 0) continue;
      if (neg_grad[j] > best) {
        best = neg_grad[j];
        pick = j;
      }
    }
    if (pick == m) {
      converged = true;
      break;
    }
    in_passive[pick] = true;

    bool changed = false;
    for (std::size_t inner = 0; inner < 3 * m + 3; ++inner) {
      std::vector<std::size_t> passive;
      for (std::size_t j = 0; j < m; ++j) {
        if (in_passive[j]) passive.push_back(j);
      }
      const Eigen::VectorXd trial = solve_passive(s, passive);
      if (!finite(trial)) break;
      bool feasible = true;
      for (auto j : passive) feasible = feasible && trial[j] > 0;
      if (feasible) {
        z = trial;
        changed = true;
        break;
      }
      // Step toward the trial point until the first coordinate hits zero.
      double alpha = 1.0;
      std::size_t leaving = m;
      for (auto j : passive) {
        if (trial[j] > 0) continue;
        const double ratio = z[j] / (z[j] - trial[j]);
        if (ratio < alpha || leaving == m) {
          alpha = std::min(alpha, ratio);
          leaving = j;
        }
      }
      if (alpha <= 0 && leaving == pick) {
        // The entering variable cannot move; keep it out until z changes.
        in_passive[pick] = false;
        blocked[pick] = true;
        break;
      }
      z = z + alpha * (trial - z);
      changed = changed || alpha > 0;
      z[leaving] = 0;
      in_passive[leaving] = false;
      for (auto j : passive) {
        if (z[j] <= 0) {
          z[j] = 0;
          in_passive[j] = false;
        }
      }
    }
    if (changed) std::fill(blocked.begin(), blocked.end(), false);
  }

  if (!converged || !finite(z)) {
    auto fallback = solve_nnls_projected_gradient(stats);
    fallback.iterations += out.iterations;
    return fallback;
  }
  for (std::size_t j = 0; j < m; ++j) z[j] = std::max(0.0, z[j]);
  out.coef = unscale(s, z);
  return out;
}

NnlsSolution solve_nnls_projected_gradient(const kernels::GramStats& stats, int max_iterations) {
  const Scaled s = rescale(stats);
  const std::size_t m = s.m;
  NnlsSolution out;
  out.used_fallback = true;
  if (m == 0) return out;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.gram, Eigen::EigenvaluesOnly);
  const double lipschitz = std::max(eig.eigenvalues().maxCoeff(), 1e-300);
  const double step = 1.0 / lipschitz;
  const double tol = kKktTolerance * std::max(s.xty.cwiseAbs().maxCoeff(), 1e-300);

  Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd prev = z;
  Eigen::VectorXd look = z;
  double t = 1.0;
  auto objective = [&](const Eigen::VectorXd& v) { return 0.5 * v.dot(s.gram * v) - s.xty.dot(v); };
  double last = objective(z);
  for (int it = 0; it < max_iterations; ++it) {
    out.iterations = it + 1;
    Eigen::VectorXd next = look - step * (s.gram * look - s.xty);
    for (std::size_t j = 0; j < m; ++j) {
      if (s.scale[j] == 0 || next[j] < 0) next[j] = 0;
    }
    const double value = objective(next);
    if (value > last) {
      // Restart momentum when the objective rises.
      t = 1.0;
      look = z;
      continue;
    }
    last = value;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    look = next + ((t - 1.0) / t_next) * (next - z);
    prev = z;
    z = next;
    t = t_next;

    const Eigen::VectorXd grad = s.gram * z - s.xty;
    double violation = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (s.scale[j] == 0) continue;
      violation = std::max(violation, z[j] > 0 ? std::abs(grad[j]) : std::max(0.0, -grad[j]));
    }
    if (violation <= tol) break;
  }
  out.coef = unscale(s, z);
  return out;
}

}  // namespace latree
