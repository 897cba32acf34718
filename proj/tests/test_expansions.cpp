#include <doctest.h>

#include <cmath>
#include <random>

#include "qfmm/error.hpp"
#include "qfmm/expansions.hpp"

using namespace qfmm;

namespace {

double fact(int n) { return n <= 1 ? 1.0 : n * fact(n - 1); }
double binom(int n, int k) { return fact(n) / (fact(k) * fact(n - k)); }

// P_l^m from the explicit polynomial of P_l differentiated m times, no
// Condon-Shortley phase.
double legendre_oracle(int l, int m, double x) {
  double sum = 0.0;
  for (int k = 0; 2 * k <= l; ++k) {
    const int p = l - 2 * k;
    if (p < m) continue;
    const double c = (k % 2 ? -1.0 : 1.0) * binom(l, k) * binom(2 * l - 2 * k, l);
    sum += c * fact(p) / fact(p - m) * std::pow(x, p - m);
  }
  return std::pow(2.0, -l) * sum * std::pow(1.0 - x * x, m / 2.0);
}

Complex harmonic_oracle(int l, int m, double t, double ph) {
  const int am = std::abs(m);
  return std::sqrt(fact(l - am) / fact(l + am)) * legendre_oracle(l, am, std::cos(t)) *
         std::polar(1.0, m * ph);
}

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                   (a[2] - b[2]) * (a[2] - b[2]));
}

struct Cloud {
  std::vector<Vec3> pos;
  std::vector<double> q;
};

Cloud random_cloud(std::mt19937_64& rng, const Vec3& c, double hw, int n) {
  std::uniform_real_distribution<double> u(-hw, hw), uq(-1.0, 1.0);
  Cloud out;
  for (int i = 0; i < n; ++i) {
    out.pos.push_back({c[0] + u(rng), c[1] + u(rng), c[2] + u(rng)});
    out.q.push_back(uq(rng));
  }
  return out;
}

double direct(const Cloud& s, const Vec3& x) {
  double v = 0.0;
  for (std::size_t i = 0; i < s.pos.size(); ++i) v += s.q[i] / dist(s.pos[i], x);
  return v;
}

void check_conjugate_symmetry(const std::vector<Complex>& c, int order) {
  for (int l = 0; l <= order; ++l) {
    for (int m = 0; m <= l; ++m) {
      const Complex a = c[coeff_index(l, m)];
      const Complex b = std::conj(c[coeff_index(l, -m)]);
      REQUIRE(std::abs(a - b) <= 1e-12 * (1.0 + std::abs(a)));
    }
  }
}

}  // namespace

TEST_CASE("spherical harmonics match the explicit-polynomial oracle") {
  CHECK(eval_spherical_harmonic(0, 0, 0.3, 1.7) == Complex(1.0, 0.0));
  CHECK(std::abs(eval_spherical_harmonic(1, 0, 0.0, 0.0) - 1.0) < 1e-15);
  CHECK_THROWS_AS(eval_spherical_harmonic(2, 3, 0.1, 0.1), Error);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ut(0.0, M_PI), up(-M_PI, M_PI);
  for (int trial = 0; trial < 20; ++trial) {
    const double t = ut(rng), ph = up(rng);
    const auto table = harmonic_table(12, t, ph);
    for (int l = 0; l <= 12; ++l) {
      for (int m = -l; m <= l; ++m) {
        const Complex want = harmonic_oracle(l, m, t, ph);
        REQUIRE(std::abs(table[coeff_index(l, m)] - want) < 1e-11);
      }
      for (int m = 1; m <= l; ++m) {
        REQUIRE(table[coeff_index(l, -m)] == std::conj(table[coeff_index(l, m)]));
      }
    }
  }
}

TEST_CASE("p2m") {
  const Vec3 c{1, 2, 3};
  std::vector<Vec3> at_center{c};
  std::vector<double> one{1.0};
  const auto m = p2m(at_center, one, c, 5);
  CHECK(m.at(0, 0) == Complex(1.0));
  for (int l = 1; l <= 5; ++l) {
    for (int k = -l; k <= l; ++k) CHECK(m.at(l, k) == Complex{});
  }
  std::vector<Vec3> three{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  std::vector<double> q3{-1, -1, -1};
  CHECK(p2m(three, q3, c, 0).at(0, 0) == Complex(-3.0));

  std::vector<Vec3> dip{{1.5, 2, 3}, {0.5, 2, 3}};
  std::vector<double> qd{1.0, -1.0};
  const auto md = p2m(dip, qd, c, 2);
  CHECK(std::abs(md.at(0, 0)) < 1e-15);
  // Direct definition: M_11 = sum q r Y_1^{-1}; Y_1^{-1}(pi/2, 0) = 1/sqrt(2).
  const Complex want = 0.5 * harmonic_oracle(1, -1, M_PI / 2, 0.0) - 0.5 * harmonic_oracle(1, -1, M_PI / 2, M_PI);
  CHECK(std::abs(md.at(1, 1) - want) < 1e-15);
  CHECK(std::abs(md.at(1, 1)) > 0.5);
  CHECK_THROWS_AS(p2m(dip, qd, c, 2, 0.25), Error);
}

TEST_CASE("m2m is exact and preserves the monopole") {
  std::mt19937_64 rng(11);
  const Vec3 child{0.5, -0.25, 0.75}, par{0, 0, 0};
  const auto cloud = random_cloud(rng, child, 0.5, 6);
  const auto mc = p2m(cloud.pos, cloud.q, child, 4);
  const auto mp = m2m(mc, par);
  CHECK(std::abs(mp.at(0, 0) - mc.at(0, 0)) < 1e-14);
  check_conjugate_symmetry(mp.coeffs, 4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 20; ++i) {
    Vec3 dir{u(rng), u(rng), u(rng)};
    const double n = dist(dir, {0, 0, 0});
    const Vec3 x{dir[0] / n * 30, dir[1] / n * 30, dir[2] / n * 30};
    const double a = evaluate_multipole(mc, x), b = evaluate_multipole(mp, x);
    // Both truncated at order 4, about different centres: compare against
    // the same-order expansion of the parent built directly.
    const auto direct_parent = p2m(cloud.pos, cloud.q, par, 4);
    CHECK(std::abs(b - evaluate_multipole(direct_parent, x)) <= 1e-12 * std::abs(b) + 1e-15);
    CHECK(std::abs(a - direct(cloud, x)) < 1e-6);
  }
  for (std::size_t i = 0; i < mp.coeffs.size(); ++i) {
    const auto dp = p2m(cloud.pos, cloud.q, par, 4);
    CHECK(std::abs(mp.coeffs[i] - dp.coeffs[i]) < 1e-13);
  }
  MultipoleExpansion zero(3, child);
  CHECK(m2m(zero, par).is_zero());
  MultipoleExpansion mono(0, child);
  mono.at(0, 0) = 2.5;
  CHECK(m2m(mono, par).at(0, 0) == Complex(2.5));
}

TEST_CASE("m2l") {
  MultipoleExpansion src(0, {0, 0, 0}, 0.5);
  src.at(0, 0) = 3.0;
  const auto loc = m2l(src, {4, 0, 3}, 0.5);
  CHECK(std::abs(loc.at(0, 0) - 3.0 / 5.0) < 1e-15);
  CHECK(m2l(MultipoleExpansion(4, {0, 0, 0}, 0.5), {3, 0, 0}, 0.5).is_zero());
  CHECK_THROWS_AS(m2l(src, {1, 0, 0}, 0.5), Error);
  CHECK_THROWS_AS(m2l(src, {0, 0, 0}), Error);

  // P = 8, single distant unit charge.
  std::vector<Vec3> p{{0.3, -0.2, 0.4}};
  std::vector<double> q{1.0};
  const auto m = p2m(p, q, {0, 0, 0}, 8, 0.5);
  const Vec3 tc{2, 1, -1};
  const auto l = m2l(m, tc, 0.5);
  const double bound = truncation_error_bound(8, 3, 1.0, 1.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 20; ++i) {
    const Vec3 x = add(tc, {u(rng), u(rng), u(rng)});
    CHECK(std::abs(l2p(l, x) - 1.0 / dist(p[0], x)) < bound);
  }
  check_conjugate_symmetry(l.coeffs, 8);
}

TEST_CASE("l2l is exact") {
  std::mt19937_64 rng(5);
  const auto cloud = random_cloud(rng, {0, 0, 0}, 0.5, 5);
  const auto m = p2m(cloud.pos, cloud.q, {0, 0, 0}, 4, 0.5);
  const Vec3 pc{4, 4, 0};
  const auto lp = m2l(m, pc, 1.0);
  const Vec3 cc{4.5, 3.5, 0.5};
  const auto lc = l2l(lp, cc, 0.5);
  check_conjugate_symmetry(lc.coeffs, 4);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 20; ++i) {
    const Vec3 x = add(cc, {u(rng), u(rng), u(rng)});
    const double a = l2p(lp, x), b = l2p(lc, x);
    CHECK(std::abs(a - b) <= 1e-12 * std::abs(a));
  }
  CHECK(l2l(LocalExpansion(3, pc), cc).is_zero());
  LocalExpansion c0(0, pc);
  c0.at(0, 0) = -1.25;
  CHECK(l2l(c0, cc).at(0, 0) == Complex(-1.25));
}

TEST_CASE("l2p") {
  LocalExpansion z(3, {0, 0, 0}, 1.0);
  CHECK(l2p(z, {0.5, 0.5, 0.5}) == 0.0);
  LocalExpansion c(0, {0, 0, 0}, 1.0);
  c.at(0, 0) = 0.75;
  CHECK(l2p(c, {0.2, -0.9, 0.1}) == 0.75);
  CHECK_THROWS_AS(l2p(c, {1.5, 0, 0}), Error);

  // Full P = 6 pipeline for one source and one observer.
  const Vec3 sc{0, 0, 0}, s{0.2, 0.1, -0.3}, tc{4, 0, 0}, t{3.7, 0.3, 0.4};
  std::vector<Vec3> ps{s};
  std::vector<double> qs{1.0};
  const auto m = m2m(p2m(ps, qs, {0.25, 0.25, -0.25}, 6, 0.5), sc, 1.0);
  const auto l = l2l(m2l(m, tc, 1.0), {3.75, 0.25, 0.25}, 0.5);
  CHECK(std::abs(l2p(l, t) - 1.0 / dist(s, t)) < truncation_error_bound(6, 3, 1.0, 1.0));
}

TEST_CASE("truncation error bound") {
  CHECK(truncation_error_bound(3, 3, 1.0, 1.0) == 0.125);
  for (int p = 0; p < 20; ++p) {
    CHECK(truncation_error_bound(p + 1, 4, 8.0, 2.0) / truncation_error_bound(p, 4, 8.0, 2.0) == 0.5);
  }
  CHECK(truncation_error_bound(1000, 3, 1.0, 1.0) < 1e-300);
  CHECK_THROWS_AS(truncation_error_bound(-1, 3, 1.0, 1.0), Error);
}

TEST_CASE("far-field error decays geometrically with order") {
  std::mt19937_64 rng(99);
  std::vector<double> mean_err(12, 0.0);
  const int trials = 30;
  for (int t = 0; t < trials; ++t) {
    const auto cloud = random_cloud(rng, {0.25, 0.25, 0.25}, 0.25, 8);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const Vec3 x = add({4.5, 0.5, -3.5}, {u(rng), u(rng), u(rng)});
    const double exact = direct(cloud, x);
    for (int p = 1; p <= 11; ++p) {
      const auto m = m2m(p2m(cloud.pos, cloud.q, {0.25, 0.25, 0.25}, p, 0.25), {0, 0, 0}, 1.0);
      const auto l = l2l(m2l(m, {4, 0, -4}, 1.0), {4.5, 0.5, -3.5}, 0.5);
      mean_err[p] += std::abs(l2p(l, x) - exact) / trials;
    }
  }
  for (int p = 2; p <= 10; ++p) {
    CAPTURE(p);
    CHECK(mean_err[p + 1] / mean_err[p] <= 0.75);
  }
}

TEST_CASE("operator cache") {
  OperatorCache cache;
  auto a = cache.get(TranslationKind::ML, 2, {2, 0, 0});
  auto b = cache.get(TranslationKind::ML, 2, {2, 0, 0});
  CHECK(a == b);
  CHECK(cache.builds() == 1);
  cache.get(TranslationKind::ML, 2, {0.3, 0, 0});
  CHECK(cache.size() == 1);
}
