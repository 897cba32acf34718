#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <vector>

namespace qfmm {

constexpr int kMaxDim = 3;

using Coord = std::uint32_t;
using MortonKey = std::uint64_t;

/// Integer grid coordinates; axes at index >= d are ignored and kept zero.
using GridPoint = std::array<Coord, kMaxDim>;

/// Real-valued position or displacement, same axis convention as GridPoint.
using Vec3 = std::array<double, kMaxDim>;

/// A 2^n_bits-per-axis integer grid in d dimensions. Points sit at integer
/// coordinates with unit spacing.
class GridSpec {
 public:
  GridSpec(int d, int n_bits);

  int d() const noexcept { return d_; }
  int n_bits() const noexcept { return n_bits_; }
  Coord side() const noexcept { return Coord{1} << n_bits_; }
  std::uint64_t total_points() const noexcept { return std::uint64_t{1} << (d_ * n_bits_); }
  /// Deepest tree level (root = 1); boxes there hold a single grid point.
  int finest_level() const noexcept { return n_bits_ + 1; }
  bool contains(const GridPoint& p) const noexcept;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;

 private:
  int d_;
  int n_bits_;
};

/// Box in the 2^d-ary tree. Level 1 is the whole cell; coordinates at level l
/// lie in [0, 2^(l-1) - 1].
struct BoxId {
  int dim = 3;
  int level = 1;
  GridPoint coords{};

  friend auto operator<=>(const BoxId&, const BoxId&) = default;
};

struct ParticleRecord {
  GridPoint pos{};
  double charge = -1.0;
  std::int64_t id = 0;
};

/// Per-axis increments, each 0 or 2 box widths at the level they are applied.
struct ShiftVector {
  std::array<Coord, kMaxDim> z{};

  friend bool operator==(const ShiftVector&, const ShiftVector&) = default;
};

// --- Morton keys -----------------------------------------------------------

/// Interleaves `bits` bits of each of the first d coordinates, most
/// significant bit first, axis order x, y, z within each bit index.
MortonKey interleave(const GridPoint& p, int d, int bits) noexcept;
GridPoint deinterleave(MortonKey key, int d, int bits) noexcept;

MortonKey morton_encode(const GridPoint& pos, const GridSpec& spec);
GridPoint morton_decode(MortonKey key, const GridSpec& spec);

/// Every ShiftVector in the fixed iteration order: index s sets z_j = 2 when
/// bit (d-1-j) of s is set, so x varies slowest.
std::vector<ShiftVector> all_shifts(int d);

/// Morton key of pos after adding z_j * 2^(n_bits - level_bit) to each axis
/// modulo the grid side. level_bit = n_bits shifts by z grid points; for the
/// boxes of tree level l use level_bit = l - 1.
MortonKey shifted_morton_key(const GridPoint& pos, const ShiftVector& z, int level_bit,
                             const GridSpec& spec);

// --- Tree combinatorics ----------------------------------------------------

int boxes_per_axis(int level) noexcept;
std::uint64_t boxes_at_level(int d, int level) noexcept;

BoxId make_box(int d, int level, const GridPoint& coords);
BoxId box_of(const GridPoint& pos, int level, const GridSpec& spec);
/// Position of a box in the Morton order of its level.
MortonKey box_key(const BoxId& b) noexcept;
BoxId box_from_key(int d, int level, MortonKey key);

/// Edge length in grid units of the boxes at `level`.
Coord box_width(int level, const GridSpec& spec);
Vec3 box_center(const BoxId& b, const GridSpec& spec);

BoxId parent(const BoxId& b);
std::vector<BoxId> children(const BoxId& b);
/// Boxes sharing a face, edge, or vertex with b, clipped at the cell
/// boundary; sorted by box_key.
std::vector<BoxId> nearest_neighbors(const BoxId& b);
bool are_neighbors(const BoxId& a, const BoxId& b) noexcept;
/// C(NN(P(b))) - NN(b) - b, sorted by box_key. Requires level >= 3.
std::vector<BoxId> interaction_list(const BoxId& b);
bool in_interaction_list(const BoxId& a, const BoxId& b) noexcept;

/// Coulomb kernel between the centres of two same-level boxes,
/// 1 / (w * |coords_a - coords_b|).
double box_pair_kernel(const BoxId& a, const BoxId& b, const GridSpec& spec);

// --- Shifted-ordering lemma ------------------------------------------------

struct Lemma1Counterexample {
  GridPoint p{};
  GridPoint q{};
  ShiftVector z{};
  std::uint64_t separation = 0;
};

struct Lemma1Report {
  int d = 0;
  int n_bits = 0;
  std::uint64_t bound = 0;          // 4^d - 1
  std::uint64_t pairs_checked = 0;
  std::uint64_t max_separation = 0; // under the constructive shift
  std::vector<Lemma1Counterexample> counterexamples;
};

/// Upper estimate of the pairs verify_lemma1 would visit: N * 6^d.
std::uint64_t lemma1_pair_budget(const GridSpec& spec) noexcept;

/// Exhaustively checks, for every p and every q with |p_j/2 - q_j/2| <= 1
/// (integer division), that z = 2|p/4 - q/4| keeps the shifted Morton keys
/// within 4^d - 1 of each other. Throws Domain when the pair estimate
/// exceeds max_pairs.
Lemma1Report verify_lemma1(const GridSpec& spec, std::uint64_t max_pairs = 50'000'000);

}  // namespace qfmm
