#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "qfmm/grid_tree.hpp"

namespace qfmm {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) noexcept;
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

enum class Summation { Plain, Compensated };

Vec3 to_vec(const GridPoint& p) noexcept;

/// 1 / |a - b| on the unit-spaced grid.
double coulomb(const GridPoint& a, const GridPoint& b, int d) noexcept;

struct PairwiseResult {
  double total = 0.0;
  std::vector<double> per_particle;  // V_i = 1/2 sum_{j != i} q_j / r_ij, input order
  std::uint64_t pair_count = 0;
};

/// O(eta^2) double sum. Pairs are visited in ascending-id order so the result
/// does not depend on input order. Throws Singularity on coincident positions.
PairwiseResult brute_force_potential(std::span<const ParticleRecord> particles, int d,
                                     Summation mode = Summation::Plain);

struct PairAssignment {
  std::size_t i = 0;  // indices into the particle span, i < j
  std::size_t j = 0;
  bool far = false;
  int level = 0;      // interaction-list level for far pairs, leaf level for near
};

struct NearFarSplit {
  double near = 0.0;
  double far_exact = 0.0;    // far pairs with exact 1/r
  double far_box_box = 0.0;  // far pairs with the centre-to-centre kernel
  std::vector<PairAssignment> pairs;
};

/// Labels each unordered pair by the mechanism of a tree with leaves at
/// `levels`: near when the leaf boxes coincide or touch, otherwise far at the
/// shallowest level whose boxes are interaction-list partners.
NearFarSplit reference_near_far_split(std::span<const ParticleRecord> particles,
                                      const GridSpec& spec, int levels);

/// Reference FMM with dictionaries of occupied boxes: box-box far field
/// at levels 3..levels (order-P via direct P2M per box, M2L, contraction),
/// exact near field at the leaves. With levels == spec.finest_level() the
/// leaf neighbours are folded into the finest level's box pairs, matching
/// the one-particle-per-box adaptive scheme.
double reference_fmm_potential(std::span<const ParticleRecord> particles, const GridSpec& spec,
                               int levels, int order = 0);

/// Records box-pair and particle-pair contributions; audit() reports how
/// often each unordered particle pair was covered.
class PairCensus {
 public:
  void add_box_pair(int level, MortonKey a, MortonKey b);
  void add_particle_pair(std::int64_t id_a, std::int64_t id_b);

  struct Audit {
    std::uint64_t expected_pairs = 0;
    std::uint64_t exactly_once = 0;
    std::uint64_t missing = 0;
    std::uint64_t duplicated = 0;
    std::uint64_t box_pair_events = 0;
    std::uint64_t particle_pair_events = 0;
    bool exact() const noexcept { return missing == 0 && duplicated == 0; }
  };

  Audit audit(std::span<const ParticleRecord> particles, const GridSpec& spec) const;
  std::uint64_t box_pair_events() const noexcept { return box_pairs_.size(); }
  std::uint64_t particle_pair_events() const noexcept { return particle_pairs_.size(); }

 private:
  struct BoxPair {
    int level;
    MortonKey a;
    MortonKey b;
  };
  std::vector<BoxPair> box_pairs_;
  std::vector<std::pair<std::int64_t, std::int64_t>> particle_pairs_;
};

}  // namespace qfmm
