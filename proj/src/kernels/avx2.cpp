// Compiled with -mavx2 -mfma; only reached when the CPU reports AVX2.
#include <immintrin.h>

#include <cmath>

#include "latree/kernels.hpp"

namespace latree::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

template <std::size_t K>
GramStats gram_impl(const DesignView& d, std::span<const double> weights) {
  constexpr std::size_t T = K + 1;
  const bool unweighted = weights.empty();
  __m256d acc[T][T];
  __m256d xy[T];
  __m256d yy = _mm256_setzero_pd();
  for (std::size_t a = 0; a < T; ++a) {
    xy[a] = _mm256_setzero_pd();
    for (std::size_t b = 0; b < T; ++b) acc[a][b] = _mm256_setzero_pd();
  }

  const std::size_t n = d.rows;
  const std::size_t n4 = n & ~std::size_t{3};
  const __m256d ones = _mm256_set1_pd(1.0);
  for (std::size_t r = 0; r < n4; r += 4) {
    const __m256d wv = unweighted ? ones : _mm256_loadu_pd(weights.data() + r);
    const __m256d yv = _mm256_loadu_pd(d.y + r);
    __m256d row[T];
    for (std::size_t a = 0; a < K; ++a) row[a] = _mm256_loadu_pd(d.cols[a] + r);
    row[K] = ones;
    for (std::size_t a = 0; a < T; ++a) {
      const __m256d wa = _mm256_mul_pd(wv, row[a]);
      for (std::size_t b = a; b < T; ++b) acc[a][b] = _mm256_fmadd_pd(wa, row[b], acc[a][b]);
      xy[a] = _mm256_fmadd_pd(wa, yv, xy[a]);
    }
    yy = _mm256_fmadd_pd(_mm256_mul_pd(wv, yv), yv, yy);
  }

  GramStats out;
  out.terms = T;
  for (std::size_t a = 0; a < T; ++a) {
    for (std::size_t b = a; b < T; ++b) out.at(a, b) = hsum(acc[a][b]);
    out.xty[a] = hsum(xy[a]);
  }
  out.yty = hsum(yy);
  out.weight = out.at(K, K);

  for (std::size_t r = n4; r < n; ++r) {
    const double wr = unweighted ? 1.0 : weights[r];
    const double yr = d.y[r];
    double row[T];
    for (std::size_t a = 0; a < K; ++a) row[a] = d.cols[a][r];
    row[K] = 1.0;
    for (std::size_t a = 0; a < T; ++a) {
      const double wa = wr * row[a];
      for (std::size_t b = a; b < T; ++b) out.at(a, b) += wa * row[b];
      out.xty[a] += wa * yr;
    }
    out.yty += wr * yr * yr;
    out.weight += wr;
  }
  for (std::size_t a = 0; a < T; ++a) {
    for (std::size_t b = 0; b < a; ++b) out.at(a, b) = out.at(b, a);
  }
  return out;
}

template <std::size_t K>
ResidualStats residual_impl(const DesignView& d, std::span<const double> w, double b) {
  const std::size_t n = d.rows;
  const std::size_t n4 = n & ~std::size_t{3};
  __m256d wv[K > 0 ? K : 1];
  for (std::size_t a = 0; a < K; ++a) wv[a] = _mm256_set1_pd(w[a]);
  const __m256d bv = _mm256_set1_pd(b);
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  __m256d sse = _mm256_setzero_pd();
  __m256d sape = _mm256_setzero_pd();
  for (std::size_t r = 0; r < n4; r += 4) {
    __m256d pred = bv;
    for (std::size_t a = 0; a < K; ++a) pred = _mm256_fmadd_pd(wv[a], _mm256_loadu_pd(d.cols[a] + r), pred);
    const __m256d yv = _mm256_loadu_pd(d.y + r);
    const __m256d res = _mm256_sub_pd(pred, yv);
    sse = _mm256_fmadd_pd(res, res, sse);
    sape = _mm256_add_pd(sape, _mm256_div_pd(_mm256_andnot_pd(sign_mask, res), yv));
  }
  ResidualStats out{hsum(sse), hsum(sape)};
  for (std::size_t r = n4; r < n; ++r) {
    double pred = b;
    for (std::size_t a = 0; a < K; ++a) pred += w[a] * d.cols[a][r];
    const double res = pred - d.y[r];
    out.sse += res * res;
    out.sape += std::abs(res) / d.y[r];
  }
  return out;
}

}  // namespace

GramStats weighted_gram(const DesignView& design, std::span<const double> weights) {
  switch (design.columns) {
    case 0: return gram_impl<0>(design, weights);
    case 1: return gram_impl<1>(design, weights);
    case 2: return gram_impl<2>(design, weights);
    case 3: return gram_impl<3>(design, weights);
    case 4: return gram_impl<4>(design, weights);
    default: return gram_impl<5>(design, weights);
  }
}

ResidualStats residual_stats(const DesignView& design, std::span<const double> w, double b) {
  switch (design.columns) {
    case 0: return residual_impl<0>(design, w, b);
    case 1: return residual_impl<1>(design, w, b);
    case 2: return residual_impl<2>(design, w, b);
    case 3: return residual_impl<3>(design, w, b);
    case 4: return residual_impl<4>(design, w, b);
    default: return residual_impl<5>(design, w, b);
  }
}

}  // namespace latree::kernels::avx2
