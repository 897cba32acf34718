#pragma once

#include <random>
#include <set>
#include <vector>

#include "qfmm/grid_tree.hpp"

namespace testing_support {

// Distinct uniformly random grid points with charge -1 unless mixed.
inline std::vector<qfmm::ParticleRecord> random_particles(const qfmm::GridSpec& spec, std::size_t n,
                                                          std::uint64_t seed, bool mixed = false) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<qfmm::Coord> u(0, spec.side() - 1);
  std::set<qfmm::GridPoint> used;
  std::vector<qfmm::ParticleRecord> out;
  while (out.size() < n) {
    qfmm::GridPoint p{};
    for (int a = 0; a < spec.d(); ++a) p[a] = u(rng);
    if (!used.insert(p).second) continue;
    double q = -1.0;
    if (mixed) q = (rng() % 3 == 0) ? 2.0 : -1.0;
    out.push_back({p, q, static_cast<std::int64_t>(out.size())});
  }
  return out;
}

inline double rel_err(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

}  // namespace testing_support
