#pragma once

#include <span>
#include <vector>

#include "qfmm/grid_tree.hpp"

namespace qfmm {

class PairCensus;

/// Uniform tree with leaves at `levels`. Particles are stored sorted by
/// (Morton key, id); box data is indexed by Morton key within each level.
struct UniformTree {
  GridSpec spec{3, 0};
  int levels = 1;
  int capacity = 1;
  std::vector<ParticleRecord> particles;
  std::vector<std::size_t> input_index;  // particles[i] came from input position input_index[i]
  /// leaf_begin[k] .. leaf_begin[k+1] is the slice of `particles` in leaf k.
  std::vector<std::size_t> leaf_begin;
  /// charge[l][k] for levels 3..levels; lower levels are left empty.
  std::vector<std::vector<double>> charge;

  std::size_t leaf_count() const noexcept { return leaf_begin.size() - 1; }
  std::span<const ParticleRecord> leaf(MortonKey key) const;
};

/// Throws Capacity naming the first leaf holding more than `capacity`
/// particles, Domain for out-of-grid positions or bad depth.
UniformTree build_uniform_tree(std::span<const ParticleRecord> particles, const GridSpec& spec,
                               int levels, int capacity);

struct MonopoleResult {
  double total = 0.0;
  double far = 0.0;
  double near = 0.0;
  std::vector<double> far_by_level;  // indexed by level
};

/// Box-box monopole far field over interaction lists plus direct near field.
MonopoleResult fmm_monopole(const UniformTree& tree, PairCensus* census = nullptr);
MonopoleResult fmm_monopole(std::span<const ParticleRecord> particles, const GridSpec& spec,
                            int levels, int capacity, PairCensus* census = nullptr);

/// Pairs inside leaf `key` and between it and higher-keyed neighbour leaves.
double near_field_direct(const UniformTree& tree, MortonKey key, PairCensus* census = nullptr);

struct OrderPResult {
  double total = 0.0;
  double far = 0.0;
  double near = 0.0;
  std::vector<double> per_particle;  // V_i, input order
};

OrderPResult fmm_order_p(const UniformTree& tree, int order);
OrderPResult fmm_order_p(std::span<const ParticleRecord> particles, const GridSpec& spec, int levels,
                         int capacity, int order);

}  // namespace qfmm
