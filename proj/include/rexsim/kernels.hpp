#pragma once

// Data-parallel inner loops used by the policy and the correction objective.
//
// Every kernel has a scalar reference in rexsim::kernels::scalar and vector
// variants selected at runtime. Kernels are elementwise (or exact reductions
// such as max) and the vector variants perform the same IEEE operations in
// the same order, so results are bit-identical across ISAs. Do not add
// reordering reductions (sums) here without relaxing that contract.

#include <cstddef>
#include <span>
#include <string_view>

namespace rexsim::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view to_string(Isa isa);

/// Best ISA supported by this CPU and build. REXSIM_SIMD=scalar in the
/// environment forces the scalar path.
Isa detected();
/// ISA used by the dispatching entry points below.
Isa active();
/// Overrides the active ISA; falls back to Scalar if `isa` is unavailable.
void force(Isa isa);
bool available(Isa isa);

/// out[i] = (1 + alpha) * p_theta[i] / (p_behavior[i] + alpha * p_eps[i])
void balance_weights(std::span<const double> p_theta, std::span<const double> p_behavior,
                     std::span<const double> p_eps, double alpha, std::span<double> out);

/// x[i] = x[i] + lr * g[i] - (lr * decay) * x[i]
void decayed_axpy(std::span<double> x, std::span<const double> g, double lr, double decay);

/// grad[i] -= coef * probs[i]; then grad[action] += coef.
void score_axpy(std::span<double> grad, std::span<const double> probs, double coef,
                std::size_t action);

/// out[i] = (x[i] - shift) / temperature
void shift_scale(std::span<const double> x, double shift, double temperature,
                 std::span<double> out);

/// x[i] /= denom
void divide(std::span<double> x, double denom);

/// Largest element; x must be non-empty.
double max_element(std::span<const double> x);

#define REXSIM_KERNEL_DECLS                                                                   \
  void balance_weights(std::span<const double> p_theta, std::span<const double> p_behavior,  \
                       std::span<const double> p_eps, double alpha, std::span<double> out);  \
  void decayed_axpy(std::span<double> x, std::span<const double> g, double lr, double decay); \
  void score_axpy(std::span<double> grad, std::span<const double> probs, double coef,        \
                  std::size_t action);                                                        \
  void shift_scale(std::span<const double> x, double shift, double temperature,              \
                   std::span<double> out);                                                    \
  void divide(std::span<double> x, double denom);                                             \
  double max_element(std::span<const double> x);

namespace scalar {
REXSIM_KERNEL_DECLS
}
namespace avx2 {
REXSIM_KERNEL_DECLS
}
namespace neon {
REXSIM_KERNEL_DECLS
}

#undef REXSIM_KERNEL_DECLS

}  // namespace rexsim::kernels
