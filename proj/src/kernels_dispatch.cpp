// Runtime ISA selection. No intrinsics in this file.

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "rexsim/kernels.hpp"

namespace rexsim::kernels {

namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && defined(REXSIM_HAVE_AVX2) && \
    (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

bool cpu_has_neon() {
#if defined(__aarch64__)
  return true;
#else
  return false;
#endif
}

Isa detect_once() {
  if (const char* env = std::getenv("REXSIM_SIMD"); env && std::strcmp(env, "scalar") == 0) {
    return Isa::Scalar;
  }
  if (cpu_has_avx2()) return Isa::Avx2;
  if (cpu_has_neon()) return Isa::Neon;
  return Isa::Scalar;
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{detect_once()};
  return slot;
}

}  // namespace

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "scalar";
}

bool available(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2: return cpu_has_avx2();
    case Isa::Neon: return cpu_has_neon();
  }
  return false;
}

Isa detected() { return detect_once(); }
Isa active() { return active_slot().load(std::memory_order_relaxed); }
void force(Isa isa) { active_slot().store(available(isa) ? isa : Isa::Scalar); }

#if defined(__x86_64__) || defined(_M_X64)
#define REXSIM_DISPATCH(fn, ...)                           \
  switch (active()) {                                      \
    case Isa::Avx2: return avx2::fn(__VA_ARGS__);          \
    default: return scalar::fn(__VA_ARGS__);               \
  }
#elif defined(__aarch64__)
#define REXSIM_DISPATCH(fn, ...)                           \
  switch (active()) {                                      \
    case Isa::Neon: return neon::fn(__VA_ARGS__);          \
    default: return scalar::fn(__VA_ARGS__);               \
  }
#else
#define REXSIM_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__);
#endif

void balance_weights(std::span<const double> p_theta, std::span<const double> p_behavior,
                     std::span<const double> p_eps, double alpha, std::span<double> out) {
  REXSIM_DISPATCH(balance_weights, p_theta, p_behavior, p_eps, alpha, out)
}

void decayed_axpy(std::span<double> x, std::span<const double> g, double lr, double decay) {
  REXSIM_DISPATCH(decayed_axpy, x, g, lr, decay)
}

void score_axpy(std::span<double> grad, std::span<const double> probs, double coef,
                std::size_t action) {
  REXSIM_DISPATCH(score_axpy, grad, probs, coef, action)
}

void shift_scale(std::span<const double> x, double shift, double temperature,
                 std::span<double> out) {
  REXSIM_DISPATCH(shift_scale, x, shift, temperature, out)
}

void divide(std::span<double> x, double denom) { REXSIM_DISPATCH(divide, x, denom) }

double max_element(std::span<const double> x) { REXSIM_DISPATCH(max_element, x) }

#undef REXSIM_DISPATCH

}  // namespace rexsim::kernels
