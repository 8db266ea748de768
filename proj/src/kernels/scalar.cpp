#include <cmath>

#include "latree/kernels.hpp"

namespace latree::kernels::scalar {

GramStats weighted_gram(const DesignView& design, std::span<const double> weights) {
  const std::size_t k = design.columns;
  GramStats out;
  out.terms = k + 1;
  const bool unweighted = weights.empty();
  for (std::size_t r = 0; r < design.rows; ++r) {
    const double wr = unweighted ? 1.0 : weights[r];
    const double yr = design.y[r];
    std::array<double, kMaxTerms> row{};
    for (std::size_t a = 0; a < k; ++a) row[a] = design.cols[a][r];
    row[k] = 1.0;
    for (std::size_t a = 0; a <= k; ++a) {
      const double wa = wr * row[a];
      for (std::size_t b = a; b <= k; ++b) out.at(a, b) += wa * row[b];
      out.xty[a] += wa * yr;
    }
    out.yty += wr * yr * yr;
    out.weight += wr;
  }
  for (std::size_t a = 0; a <= k; ++a) {
    for (std::size_t b = 0; b < a; ++b) out.at(a, b) = out.at(b, a);
  }
  return out;
}

ResidualStats residual_stats(const DesignView& design, std::span<const double> w, double b) {
  ResidualStats out;
  for (std::size_t r = 0; r < design.rows; ++r) {
    double pred = b;
    for (std::size_t a = 0; a < design.columns; ++a) pred += w[a] * design.cols[a][r];
    const double res = pred - design.y[r];
    out.sse += res * res;
    out.sape += std::abs(res) / design.y[r];
  }
  return out;
}

}  // namespace latree::kernels::scalar
