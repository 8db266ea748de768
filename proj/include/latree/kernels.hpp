#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

// Data-parallel inner loops of tree fitting. Every kernel has a scalar
// reference implementation and, where the CPU supports it, an AVX2 variant
// selected at runtime. Results agree up to summation order.

namespace latree::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa);

// Best ISA the running CPU supports (and this build was compiled for).
Isa detected_isa();
// ISA used by the dispatching entry points; defaults to detected_isa().
Isa active_isa();
// Throws std::invalid_argument if the CPU cannot run `isa`.
void set_active_isa(Isa isa);

inline constexpr std::size_t kMaxColumns = 5;
inline constexpr std::size_t kMaxTerms = kMaxColumns + 1;

/// Column-major view of a regression design: `columns` explanatory columns of
/// length n and a response y. The intercept column is implicit.
struct DesignView {
  std::array<const double*, kMaxColumns> cols{};
  std::size_t columns = 0;
  const double* y = nullptr;
  std::size_t rows = 0;
};

/// Weighted sufficient statistics of [x, 1] against y. Term index `columns`
/// is the intercept. Only the first (columns+1) rows/cols are meaningful.
struct GramStats {
  std::size_t terms = 0;
  std::array<double, kMaxTerms * kMaxTerms> gram{};
  std::array<double, kMaxTerms> xty{};
  double yty = 0;
  double weight = 0;  // sum of row weights

  double& at(std::size_t a, std::size_t b) { return gram[a * kMaxTerms + b]; }
  double at(std::size_t a, std::size_t b) const { return gram[a * kMaxTerms + b]; }
};

struct ResidualStats {
  double sse = 0;   // sum of squared residuals
  double sape = 0;  // sum of |residual| / y
};

// Accumulates sum_r weights[r] * [x_r,1][x_r,1]^T (and the y terms).
// weights.size() must equal design.rows; an empty span means all ones.
GramStats weighted_gram(const DesignView& design, std::span<const double> weights);
// Residuals of y_hat = w.x + b over all rows.
ResidualStats residual_stats(const DesignView& design, std::span<const double> w, double b);

namespace scalar {
GramStats weighted_gram(const DesignView& design, std::span<const double> weights);
ResidualStats residual_stats(const DesignView& design, std::span<const double> w, double b);
}  // namespace scalar

#if defined(LATREE_HAVE_AVX2)
namespace avx2 {
GramStats weighted_gram(const DesignView& design, std::span<const double> weights);
ResidualStats residual_stats(const DesignView& design, std::span<const double> w, double b);
}  // namespace avx2
#endif

}  // namespace latree::kernels
