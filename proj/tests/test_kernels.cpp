#include <cstring>
#include <vector>

#include "doctest.h"
#include "rexsim/kernels.hpp"
#include "rexsim/rng.hpp"

using namespace rexsim;
namespace k = rexsim::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Outputs {
  std::vector<double> weights, axpy, score, shifted, divided;
  double max = 0.0;
};

Outputs run_all(k::Isa isa, const std::vector<double>& pt, const std::vector<double>& pb,
                const std::vector<double>& pe, const std::vector<double>& g, std::size_t action) {
  const k::Isa before = k::active();
  k::force(isa);
  Outputs o;
  const std::size_t n = g.size();
  o.weights.resize(n);
  k::balance_weights(pt, pb, pe, 0.12, o.weights);
  o.axpy = g;
  k::decayed_axpy(o.axpy, pt, 0.05, 0.01);
  o.score = g;
  if (n > 0) {
    k::score_axpy(o.score, pt, -0.7, action);
    o.max = k::max_element(g);
  }
  o.shifted.resize(n);
  k::shift_scale(g, 0.3, 0.7, o.shifted);
  o.divided = g;
  k::divide(o.divided, 1.7);
  k::force(before);
  return o;
}

}  // namespace

TEST_CASE("vector kernels are bit-identical to the scalar reference") {
  Rng rng(stream_key({17}));
  std::size_t compared = 0;
  for (k::Isa isa : {k::Isa::Avx2, k::Isa::Neon}) {
    if (!k::available(isa)) continue;
    CAPTURE(k::to_string(isa));
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 13u, 64u, 257u}) {
      const auto pt = random_vec(rng, n, 1e-6, 1.0);
      const auto pb = random_vec(rng, n, 1e-6, 1.0);
      const auto pe = random_vec(rng, n, 0.0, 1.0);
      const auto g = random_vec(rng, n, -3.0, 3.0);
      const std::size_t a = n ? rng.below(n) : 0;
      const Outputs ref = run_all(k::Isa::Scalar, pt, pb, pe, g, a);
      const Outputs vec = run_all(isa, pt, pb, pe, g, a);
      CHECK(same_bits(ref.weights, vec.weights));
      CHECK(same_bits(ref.axpy, vec.axpy));
      CHECK(same_bits(ref.score, vec.score));
      CHECK(same_bits(ref.shifted, vec.shifted));
      CHECK(same_bits(ref.divided, vec.divided));
      CHECK(std::memcmp(&ref.max, &vec.max, sizeof ref.max) == 0);
      ++compared;
    }
  }
  if (compared == 0) MESSAGE("no vector ISA available; scalar only");
}

TEST_CASE("scalar reference values") {
  std::vector<double> out(2);
  k::scalar::balance_weights(std::vector<double>{0.2, 0.5}, std::vector<double>{0.2, 0.5},
                             std::vector<double>{0.8, 0.0}, 0.25, out);
  CHECK(out[0] == doctest::Approx(0.625));
  CHECK(out[1] == doctest::Approx(1.25));
  std::vector<double> g{0.0, 0.0, 0.0};
  k::scalar::score_axpy(g, std::vector<double>{0.25, 0.25, 0.5}, 2.0, 1);
  CHECK(g == std::vector<double>{-0.5, 1.5, -1.0});
  CHECK(k::scalar::max_element(std::vector<double>{-3.0, 4.0, 2.0}) == 4.0);
}

TEST_CASE("dispatch honours forced selection") {
  const k::Isa before = k::active();
  k::force(k::Isa::Scalar);
  CHECK(k::active() == k::Isa::Scalar);
  k::force(k::Isa::Neon);
  CHECK(k::active() == (k::available(k::Isa::Neon) ? k::Isa::Neon : k::Isa::Scalar));
  k::force(before);
  CHECK(k::active() == before);
  CHECK(k::available(k::Isa::Scalar));
}

TEST_CASE("dispatched kernels agree with scalar under every ISA") {
  Rng rng(stream_key({18}));
  const auto logits = random_vec(rng, 37, -5.0, 5.0);
  const k::Isa before = k::active();
  std::vector<std::vector<double>> results;
  for (k::Isa isa : {k::Isa::Scalar, k::Isa::Avx2, k::Isa::Neon}) {
    if (!k::available(isa)) continue;
    k::force(isa);
    std::vector<double> out(logits.size());
    k::shift_scale(logits, k::max_element(logits), 1.3, out);
    k::divide(out, 2.5);
    results.push_back(out);
  }
  k::force(before);
  for (const auto& r : results) CHECK(same_bits(r, results.front()));
}
