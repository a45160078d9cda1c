// NEON variants for aarch64. Built only on ARM targets; the dispatcher never
// selects them elsewhere. vfmaq is avoided for bit-equality with scalar.

#include "rexsim/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace rexsim::kernels::neon {

void balance_weights(std::span<const double> p_theta, std::span<const double> p_behavior,
                     std::span<const double> p_eps, double alpha, std::span<double> out) {
  const std::size_t n = out.size();
  const float64x2_t num_scale = vdupq_n_f64(1.0 + alpha);
  const float64x2_t a = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t num = vmulq_f64(num_scale, vld1q_f64(p_theta.data() + i));
    const float64x2_t den =
        vaddq_f64(vld1q_f64(p_behavior.data() + i), vmulq_f64(a, vld1q_f64(p_eps.data() + i)));
    vst1q_f64(out.data() + i, vdivq_f64(num, den));
  }
  if (i < n) {
    scalar::balance_weights(p_theta.subspan(i), p_behavior.subspan(i), p_eps.subspan(i), alpha,
                            out.subspan(i));
  }
}

void decayed_axpy(std::span<double> x, std::span<const double> g, double lr, double decay) {
  const std::size_t n = x.size();
  const float64x2_t vlr = vdupq_n_f64(lr);
  const float64x2_t shrink = vdupq_n_f64(lr * decay);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t xv = vld1q_f64(x.data() + i);
    const float64x2_t step = vmulq_f64(vlr, vld1q_f64(g.data() + i));
    vst1q_f64(x.data() + i, vsubq_f64(vaddq_f64(xv, step), vmulq_f64(shrink, xv)));
  }
  if (i < n) scalar::decayed_axpy(x.subspan(i), g.subspan(i), lr, decay);
}

void score_axpy(std::span<double> grad, std::span<const double> probs, double coef,
                std::size_t action) {
  const std::size_t n = grad.size();
  const float64x2_t c = vdupq_n_f64(coef);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(grad.data() + i,
              vsubq_f64(vld1q_f64(grad.data() + i), vmulq_f64(c, vld1q_f64(probs.data() + i))));
  }
  for (; i < n; ++i) grad[i] = grad[i] - coef * probs[i];
  grad[action] = grad[action] + coef;
}

void shift_scale(std::span<const double> x, double shift, double temperature,
                 std::span<double> out) {
  const std::size_t n = x.size();
  const float64x2_t s = vdupq_n_f64(shift);
  const float64x2_t t = vdupq_n_f64(temperature);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(out.data() + i, vdivq_f64(vsubq_f64(vld1q_f64(x.data() + i), s), t));
  }
  if (i < n) scalar::shift_scale(x.subspan(i), shift, temperature, out.subspan(i));
}

void divide(std::span<double> x, double denom) {
  const std::size_t n = x.size();
  const float64x2_t d = vdupq_n_f64(denom);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(x.data() + i, vdivq_f64(vld1q_f64(x.data() + i), d));
  if (i < n) scalar::divide(x.subspan(i), denom);
}

double max_element(std::span<const double> x) {
  // vmaxq_f64 propagates NaN differently from the scalar ternary, so stay
  // scalar here.
  return scalar::max_element(x);
}

}  // namespace rexsim::kernels::neon

#endif
