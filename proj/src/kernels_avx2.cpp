// AVX2 variants. This translation unit is compiled with -mavx2 (never -mfma:
// fused multiply-add would break bit-equality with the scalar reference).

#include "rexsim/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace rexsim::kernels::avx2 {

void balance_weights(std::span<const double> p_theta, std::span<const double> p_behavior,
                     std::span<const double> p_eps, double alpha, std::span<double> out) {
  const std::size_t n = out.size();
  const __m256d num_scale = _mm256_set1_pd(1.0 + alpha);
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d num = _mm256_mul_pd(num_scale, _mm256_loadu_pd(p_theta.data() + i));
    const __m256d den = _mm256_add_pd(_mm256_loadu_pd(p_behavior.data() + i),
                                      _mm256_mul_pd(a, _mm256_loadu_pd(p_eps.data() + i)));
    _mm256_storeu_pd(out.data() + i, _mm256_div_pd(num, den));
  }
  if (i < n) {
    scalar::balance_weights(p_theta.subspan(i), p_behavior.subspan(i), p_eps.subspan(i), alpha,
                            out.subspan(i));
  }
}

void decayed_axpy(std::span<double> x, std::span<const double> g, double lr, double decay) {
  const std::size_t n = x.size();
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d shrink = _mm256_set1_pd(lr * decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x.data() + i);
    const __m256d step = _mm256_mul_pd(vlr, _mm256_loadu_pd(g.data() + i));
    const __m256d pull = _mm256_mul_pd(shrink, xv);
    _mm256_storeu_pd(x.data() + i, _mm256_sub_pd(_mm256_add_pd(xv, step), pull));
  }
  if (i < n) scalar::decayed_axpy(x.subspan(i), g.subspan(i), lr, decay);
}

void score_axpy(std::span<double> grad, std::span<const double> probs, double coef,
                std::size_t action) {
  const std::size_t n = grad.size();
  const __m256d c = _mm256_set1_pd(coef);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_mul_pd(c, _mm256_loadu_pd(probs.data() + i));
    _mm256_storeu_pd(grad.data() + i, _mm256_sub_pd(_mm256_loadu_pd(grad.data() + i), d));
  }
  for (; i < n; ++i) grad[i] = grad[i] - coef * probs[i];
  grad[action] = grad[action] + coef;
}

void shift_scale(std::span<const double> x, double shift, double temperature,
                 std::span<double> out) {
  const std::size_t n = x.size();
  const __m256d s = _mm256_set1_pd(shift);
  const __m256d t = _mm256_set1_pd(temperature);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_sub_pd(_mm256_loadu_pd(x.data() + i), s);
    _mm256_storeu_pd(out.data() + i, _mm256_div_pd(v, t));
  }
  if (i < n) scalar::shift_scale(x.subspan(i), shift, temperature, out.subspan(i));
}

void divide(std::span<double> x, double denom) {
  const std::size_t n = x.size();
  const __m256d d = _mm256_set1_pd(denom);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x.data() + i, _mm256_div_pd(_mm256_loadu_pd(x.data() + i), d));
  }
  if (i < n) scalar::divide(x.subspan(i), denom);
}

double max_element(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 8) return scalar::max_element(x);
  __m256d m = _mm256_loadu_pd(x.data());
  std::size_t i = 4;
  for (; i + 4 <= n; i += 4) m = _mm256_max_pd(_mm256_loadu_pd(x.data() + i), m);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, m);
  double best = scalar::max_element(std::span<const double>(lanes, 4));
  for (; i < n; ++i) best = x[i] > best ? x[i] : best;
  return best;
}

}  // namespace rexsim::kernels::avx2

#endif
