#include "qfmm/expansions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>

#include "qfmm/error.hpp"

namespace qfmm {

namespace {

constexpr int kMaxFactorial = 170;

double factorial(int n) {
  static const auto table = [] {
    std::array<double, kMaxFactorial + 1> t{};
    t[0] = 1.0;
    for (int i = 1; i <= kMaxFactorial; ++i) t[i] = t[i - 1] * i;
    return t;
  }();
  return table[n];
}

// Greengard-Rokhlin A_n^m = (-1)^n / sqrt((n-m)!(n+m)!).
double a_coeff(int n, int m) {
  const double s = (n % 2 == 0) ? 1.0 : -1.0;
  return s / std::sqrt(factorial(n - m) * factorial(n + m));
}

Complex ipow(int e) {
  switch (((e % 4) + 4) % 4) {
    case 0: return {1.0, 0.0};
    case 1: return {0.0, 1.0};
    case 2: return {-1.0, 0.0};
    default: return {0.0, -1.0};
  }
}

double sign_pow(int e) { return (e % 2 == 0) ? 1.0 : -1.0; }

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

double chebyshev(const Vec3& v) {
  return std::max({std::abs(v[0]), std::abs(v[1]), std::abs(v[2])});
}

void check_order(int order) {
  if (order < 0 || 2 * order > 80) fail(ErrorKind::Domain, "expansion order out of range");
}

}  // namespace

Spherical to_spherical(const Vec3& v) noexcept {
  Spherical s;
  s.r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (s.r > 0.0) s.theta = std::acos(std::clamp(v[2] / s.r, -1.0, 1.0));
  s.phi = std::atan2(v[1], v[0]);
  return s;
}

std::vector<Complex> harmonic_table(int max_l, double theta, double phi) {
  std::vector<Complex> y(coeff_count(max_l));
  const double x = std::cos(theta);
  const double s = std::sin(theta);
  // Normalised recurrence on Y-scaled Legendre values keeps magnitudes <= 1.
  std::vector<double> p(coeff_count(max_l), 0.0);
  double pmm = 1.0;  // sqrt((0)!/(2m)!) P_m^m
  for (int m = 0; m <= max_l; ++m) {
    if (m > 0) pmm *= s * std::sqrt((2.0 * m - 1.0) / (2.0 * m));
    p[coeff_index(m, m)] = pmm;
    if (m + 1 <= max_l) p[coeff_index(m + 1, m)] = x * std::sqrt(2.0 * m + 1.0) * pmm;
    for (int l = m + 2; l <= max_l; ++l) {
      const double a = (2.0 * l - 1.0) / std::sqrt(static_cast<double>(l - m) * (l + m));
      const double b = std::sqrt(static_cast<double>(l + m - 1) * (l - m - 1) /
                                 (static_cast<double>(l - m) * (l + m)));
      p[coeff_index(l, m)] = a * x * p[coeff_index(l - 1, m)] - b * p[coeff_index(l - 2, m)];
    }
  }
  for (int l = 0; l <= max_l; ++l) {
    for (int m = 0; m <= l; ++m) {
      const Complex e = std::polar(1.0, m * phi);
      y[coeff_index(l, m)] = p[coeff_index(l, m)] * e;
      y[coeff_index(l, -m)] = std::conj(y[coeff_index(l, m)]);
    }
  }
  return y;
}

Complex eval_spherical_harmonic(int l, int m, double theta, double phi) {
  if (l < 0 || std::abs(m) > l) fail(ErrorKind::Domain, "spherical harmonic needs |m| <= l");
  return harmonic_table(l, theta, phi)[coeff_index(l, m)];
}

std::vector<Complex> TranslationOperator::apply(std::span<const Complex> in) const {
  std::vector<Complex> out(coeff_count(order));
  apply_add(in, out);
  return out;
}

void TranslationOperator::apply_add(std::span<const Complex> in, std::span<Complex> out) const {
  const std::size_t n = coeff_count(order);
  if (in.size() != n || out.size() != n) fail(ErrorKind::OrderMismatch, "translation order mismatch");
  for (std::size_t r = 0; r < n; ++r) {
    Complex acc{};
    const Complex* row = matrix.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * in[c];
    out[r] += acc;
  }
}

TranslationOperator make_translation(TranslationKind kind, int order, const Vec3& displacement) {
  check_order(order);
  TranslationOperator op;
  op.kind = kind;
  op.order = order;
  op.displacement = displacement;
  const int n_coeff = coeff_count(order);
  op.matrix.assign(static_cast<std::size_t>(n_coeff) * n_coeff, Complex{});
  auto entry = [&](int j, int k, int n, int m) -> Complex& {
    return op.matrix[static_cast<std::size_t>(coeff_index(j, k)) * n_coeff + coeff_index(n, m)];
  };

  // Every formula is written in terms of the source centre seen from the
  // target centre, i.e. minus the displacement.
  const Spherical q = to_spherical({-displacement[0], -displacement[1], -displacement[2]});

  switch (kind) {
    case TranslationKind::MM: {
      const auto y = harmonic_table(order, q.theta, q.phi);
      for (int j = 0; j <= order; ++j) {
        for (int k = -j; k <= j; ++k) {
          for (int n = 0; n <= j; ++n) {
            for (int m = -n; m <= n; ++m) {
              if (std::abs(k - m) > j - n) continue;
              entry(j, k, j - n, k - m) +=
                  ipow(std::abs(k) - std::abs(m) - std::abs(k - m)) * a_coeff(n, m) *
                  a_coeff(j - n, k - m) * std::pow(q.r, n) * y[coeff_index(n, -m)] / a_coeff(j, k);
            }
          }
        }
      }
      break;
    }
    case TranslationKind::ML: {
      if (q.r == 0.0) fail(ErrorKind::Domain, "M2L between coincident centres");
      const auto y = harmonic_table(2 * order, q.theta, q.phi);
      for (int j = 0; j <= order; ++j) {
        for (int k = -j; k <= j; ++k) {
          for (int n = 0; n <= order; ++n) {
            for (int m = -n; m <= n; ++m) {
              entry(j, k, n, m) = ipow(std::abs(k - m) - std::abs(k) - std::abs(m)) *
                                  a_coeff(n, m) * a_coeff(j, k) * y[coeff_index(j + n, m - k)] /
                                  (sign_pow(n) * a_coeff(j + n, m - k) * std::pow(q.r, j + n + 1));
            }
          }
        }
      }
      break;
    }
    case TranslationKind::LL: {
      const auto y = harmonic_table(order, q.theta, q.phi);
      for (int j = 0; j <= order; ++j) {
        for (int k = -j; k <= j; ++k) {
          for (int n = j; n <= order; ++n) {
            for (int m = -n; m <= n; ++m) {
              if (std::abs(m - k) > n - j) continue;
              entry(j, k, n, m) = ipow(std::abs(m) - std::abs(m - k) - std::abs(k)) *
                                  a_coeff(n - j, m - k) * a_coeff(j, k) *
                                  y[coeff_index(n - j, m - k)] * std::pow(q.r, n - j) /
                                  (sign_pow(n + j) * a_coeff(n, m));
            }
          }
        }
      }
      break;
    }
  }
  return op;
}

std::shared_ptr<const TranslationOperator> OperatorCache::get(TranslationKind kind, int order,
                                                              const Vec3& displacement) {
  std::array<long, kMaxDim> doubled{};
  bool cacheable = true;
  for (int a = 0; a < kMaxDim; ++a) {
    const double t = 2.0 * displacement[a];
    doubled[a] = std::lround(t);
    if (static_cast<double>(doubled[a]) != t) cacheable = false;
  }
  if (!cacheable) {
    return std::make_shared<const TranslationOperator>(make_translation(kind, order, displacement));
  }
  const Key key{static_cast<int>(kind), order, doubled[0], doubled[1], doubled[2]};
  {
    std::shared_lock lock(mu_);
    if (auto it = ops_.find(key); it != ops_.end()) return it->second;
  }
  auto op = std::make_shared<const TranslationOperator>(make_translation(kind, order, displacement));
  std::unique_lock lock(mu_);
  auto [it, inserted] = ops_.emplace(key, std::move(op));
  if (inserted) ++builds_;
  return it->second;
}

std::size_t OperatorCache::size() const {
  std::shared_lock lock(mu_);
  return ops_.size();
}

std::uint64_t OperatorCache::builds() const {
  std::shared_lock lock(mu_);
  return builds_;
}

OperatorCache& default_operator_cache() {
  static OperatorCache cache;
  return cache;
}

MultipoleExpansion p2m(std::span<const Vec3> positions, std::span<const double> charges,
                       const Vec3& center, int order, double half_width) {
  check_order(order);
  if (positions.size() != charges.size()) fail(ErrorKind::Domain, "positions and charges differ in length");
  MultipoleExpansion out(order, center, half_width);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Vec3 rel = sub(positions[i], center);
    if (chebyshev(rel) > half_width) fail(ErrorKind::Domain, "source outside the expansion cube");
    const Spherical s = to_spherical(rel);
    const auto y = harmonic_table(order, s.theta, s.phi);
    double rl = 1.0;
    for (int l = 0; l <= order; ++l) {
      for (int m = -l; m <= l; ++m) out.at(l, m) += charges[i] * rl * y[coeff_index(l, -m)];
      rl *= s.r;
    }
  }
  return out;
}

MultipoleExpansion m2m(const MultipoleExpansion& child, const Vec3& parent_center,
                       double parent_half_width) {
  MultipoleExpansion out(child.order, parent_center, parent_half_width);
  const auto op = default_operator_cache().get(TranslationKind::MM, child.order,
                                               sub(parent_center, child.center));
  op->apply_add(child.coeffs, out.coeffs);
  return out;
}

LocalExpansion m2l(const MultipoleExpansion& source, const Vec3& target_center,
                   double target_half_width) {
  const Vec3 disp = sub(target_center, source.center);
  const double sep = chebyshev(disp);
  if (sep == 0.0) fail(ErrorKind::Domain, "M2L between coincident centres");
  if (std::isfinite(source.half_width) && std::isfinite(target_half_width) &&
      sep < 2.0 * (source.half_width + target_half_width)) {
    fail(ErrorKind::Domain, "M2L boxes are not well separated");
  }
  LocalExpansion out(source.order, target_center, target_half_width);
  const auto op = default_operator_cache().get(TranslationKind::ML, source.order, disp);
  op->apply_add(source.coeffs, out.coeffs);
  return out;
}

LocalExpansion l2l(const LocalExpansion& parent, const Vec3& child_center, double child_half_width) {
  LocalExpansion out(parent.order, child_center, child_half_width);
  const auto op = default_operator_cache().get(TranslationKind::LL, parent.order,
                                               sub(child_center, parent.center));
  op->apply_add(parent.coeffs, out.coeffs);
  return out;
}

template <class Kind>
void accumulate(Expansion<Kind>& dst, const Expansion<Kind>& src) {
  if (dst.order != src.order) fail(ErrorKind::OrderMismatch, "cannot add expansions of different order");
  for (std::size_t i = 0; i < dst.coeffs.size(); ++i) dst.coeffs[i] += src.coeffs[i];
}

template void accumulate(MultipoleExpansion&, const MultipoleExpansion&);
template void accumulate(LocalExpansion&, const LocalExpansion&);

double l2p(const LocalExpansion& local, const Vec3& point) {
  const Vec3 rel = sub(point, local.center);
  // Small slack: particles on a box face are inside.
  if (chebyshev(rel) > local.half_width * (1.0 + 1e-12)) {
    fail(ErrorKind::Domain, "evaluation point outside the local expansion's box");
  }
  const Spherical s = to_spherical(rel);
  const auto y = harmonic_table(local.order, s.theta, s.phi);
  Complex acc{};
  double rl = 1.0;
  for (int l = 0; l <= local.order; ++l) {
    for (int m = -l; m <= l; ++m) acc += local.at(l, m) * rl * y[coeff_index(l, m)];
    rl *= s.r;
  }
  return acc.real();
}

double evaluate_multipole(const MultipoleExpansion& m, const Vec3& point) {
  const Vec3 rel = sub(point, m.center);
  if (std::isfinite(m.half_width) && chebyshev(rel) <= m.half_width) fail(ErrorKind::Domain, "evaluation point inside the multipole's box");
  const Spherical s = to_spherical(rel);
  const auto y = harmonic_table(m.order, s.theta, s.phi);
  Complex acc{};
  double inv = 1.0 / s.r;
  for (int l = 0; l <= m.order; ++l) {
    for (int k = -l; k <= l; ++k) acc += m.at(l, k) * inv * y[coeff_index(l, k)];
    inv /= s.r;
  }
  return acc.real();
}

double contract(const LocalExpansion& local, const MultipoleExpansion& observers) {
  if (local.order != observers.order) fail(ErrorKind::OrderMismatch, "contracting expansions of different order");
  double acc = 0.0;
  for (std::size_t i = 0; i < local.coeffs.size(); ++i) {
    acc += (local.coeffs[i] * std::conj(observers.coeffs[i])).real();
  }
  return acc;
}

double truncation_error_bound(int order, int levels, double cell_volume, double g) {
  if (order < 0) fail(ErrorKind::Domain, "order must be non-negative");
  return g / std::cbrt(cell_volume) * std::ldexp(1.0, -(order - levels + 3));
}

}  // namespace qfmm
