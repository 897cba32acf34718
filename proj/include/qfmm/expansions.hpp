#pragma once

#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <tuple>
#include <vector>

#include "qfmm/grid_tree.hpp"

namespace qfmm {

using Complex = std::complex<double>;

// Harmonics use Y_l^m = sqrt((l-|m|)!/(l+|m|)!) P_l^|m|(cos t) e^{i m p} with
// no Condon-Shortley phase, so Y_0^0 = 1 and Y_l^{-m} = conj(Y_l^m).

constexpr int coeff_count(int order) noexcept { return (order + 1) * (order + 1); }
constexpr int coeff_index(int l, int m) noexcept { return l * l + l + m; }

Complex eval_spherical_harmonic(int l, int m, double theta, double phi);

/// All Y_l^m for l <= max_l, laid out by coeff_index.
std::vector<Complex> harmonic_table(int max_l, double theta, double phi);

struct Spherical {
  double r = 0.0;
  double theta = 0.0;
  double phi = 0.0;
};
Spherical to_spherical(const Vec3& v) noexcept;

struct MultipoleTag {};
struct LocalTag {};

/// Truncated expansion about `center`. half_width bounds the cube the
/// expansion describes (sources for multipoles, observers for locals); an
/// infinite half_width disables containment checks.
template <class Kind>
struct Expansion {
  int order = 0;
  Vec3 center{};
  double half_width = std::numeric_limits<double>::infinity();
  std::vector<Complex> coeffs;

  Expansion() = default;
  Expansion(int p, const Vec3& c, double hw = std::numeric_limits<double>::infinity())
      : order(p), center(c), half_width(hw), coeffs(coeff_count(p)) {}

  Complex& at(int l, int m) { return coeffs[coeff_index(l, m)]; }
  const Complex& at(int l, int m) const { return coeffs[coeff_index(l, m)]; }
  bool is_zero() const noexcept {
    for (const auto& c : coeffs) {
      if (c != Complex{}) return false;
    }
    return true;
  }
};

using MultipoleExpansion = Expansion<MultipoleTag>;
using LocalExpansion = Expansion<LocalTag>;

enum class TranslationKind { MM, ML, LL };

/// Dense (P+1)^2 x (P+1)^2 map from source to target coefficients.
struct TranslationOperator {
  TranslationKind kind = TranslationKind::MM;
  int order = 0;
  Vec3 displacement{};  // target centre minus source centre
  std::vector<Complex> matrix;

  std::vector<Complex> apply(std::span<const Complex> in) const;
  void apply_add(std::span<const Complex> in, std::span<Complex> out) const;
};

TranslationOperator make_translation(TranslationKind kind, int order, const Vec3& displacement);

/// Operators keyed by (kind, order, displacement). Displacements between box
/// centres are multiples of 1/2 grid unit and are cached; others are built on
/// demand. Lookups are safe from several threads.
class OperatorCache {
 public:
  std::shared_ptr<const TranslationOperator> get(TranslationKind kind, int order,
                                                 const Vec3& displacement);
  std::size_t size() const;
  std::uint64_t builds() const;

 private:
  using Key = std::tuple<int, int, long, long, long>;
  mutable std::shared_mutex mu_;
  std::map<Key, std::shared_ptr<const TranslationOperator>> ops_;
  std::uint64_t builds_ = 0;
};

OperatorCache& default_operator_cache();

// --- Expansion operations --------------------------------------------------

MultipoleExpansion p2m(std::span<const Vec3> positions, std::span<const double> charges,
                       const Vec3& center, int order,
                       double half_width = std::numeric_limits<double>::infinity());

MultipoleExpansion m2m(const MultipoleExpansion& child, const Vec3& parent_center,
                       double parent_half_width = std::numeric_limits<double>::infinity());

/// Throws Domain when the two cubes are not separated by at least the larger
/// of their widths along some axis.
LocalExpansion m2l(const MultipoleExpansion& source, const Vec3& target_center,
                   double target_half_width = std::numeric_limits<double>::infinity());

LocalExpansion l2l(const LocalExpansion& parent, const Vec3& child_center,
                   double child_half_width = std::numeric_limits<double>::infinity());

/// Accumulates `src` into `dst` (same order and centre).
template <class Kind>
void accumulate(Expansion<Kind>& dst, const Expansion<Kind>& src);

/// Real part of the local expansion at `point`; throws Domain when the point
/// lies outside the expansion's cube.
double l2p(const LocalExpansion& local, const Vec3& point);

/// Potential of a multipole expansion at a point outside its cube.
double evaluate_multipole(const MultipoleExpansion& m, const Vec3& point);

/// Interaction energy sum_i q_i phi(r_i) of the charges described by
/// `observers` in the field described by `local` (same centre):
/// Re sum_lm L_lm conj(M_lm).
double contract(const LocalExpansion& local, const MultipoleExpansion& observers);

/// (g / omega^(1/3)) * 2^-(order - levels + 3).
double truncation_error_bound(int order, int levels, double cell_volume, double g);

}  // namespace qfmm
