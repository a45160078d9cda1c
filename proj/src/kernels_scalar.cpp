#include "rexsim/kernels.hpp"

namespace rexsim::kernels::scalar {

void balance_weights(std::span<const double> p_theta, std::span<const double> p_behavior,
                     std::span<const double> p_eps, double alpha, std::span<double> out) {
  const double num_scale = 1.0 + alpha;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double num = num_scale * p_theta[i];
    const double den = p_behavior[i] + alpha * p_eps[i];
    out[i] = num / den;
  }
}

void decayed_axpy(std::span<double> x, std::span<const double> g, double lr, double decay) {
  const double shrink = lr * decay;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double step = lr * g[i];
    const double pull = shrink * x[i];
    x[i] = (x[i] + step) - pull;
  }
}

void score_axpy(std::span<double> grad, std::span<const double> probs, double coef,
                std::size_t action) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double d = coef * probs[i];
    grad[i] = grad[i] - d;
  }
  grad[action] = grad[action] + coef;
}

void shift_scale(std::span<const double> x, double shift, double temperature,
                 std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - shift) / temperature;
}

void divide(std::span<double> x, double denom) {
  for (auto& v : x) v = v / denom;
}

double max_element(std::span<const double> x) {
  double m = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) m = x[i] > m ? x[i] : m;
  return m;
}

}  // namespace rexsim::kernels::scalar
