#include <atomic>
#include <stdexcept>

#include "latree/kernels.hpp"

namespace latree::kernels {

namespace {

Isa probe() {
#if defined(LATREE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::Avx2;
#endif
  return Isa::Scalar;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{detected_isa()};
  return isa;
}

}  // namespace

std::string_view to_string(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa isa = probe();
  return isa;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::Avx2 && detected_isa() != Isa::Avx2) {
    throw std::invalid_argument("AVX2 kernels are not available on this CPU");
  }
  active().store(isa, std::memory_order_relaxed);
}

GramStats weighted_gram(const DesignView& design, std::span<const double> weights) {
#if defined(LATREE_HAVE_AVX2)
  if (active_isa() == Isa::Avx2) return avx2::weighted_gram(design, weights);
#endif
  return scalar::weighted_gram(design, weights);
}

ResidualStats residual_stats(const DesignView& design, std::span<const double> w, double b) {
#if defined(LATREE_HAVE_AVX2)
  if (active_isa() == Isa::Avx2) return avx2::residual_stats(design, w, b);
#endif
  return scalar::residual_stats(design, w, b);
}

}  // namespace latree::kernels
