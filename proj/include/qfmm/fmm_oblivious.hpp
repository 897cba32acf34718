#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "qfmm/expansions.hpp"
#include "qfmm/grid_tree.hpp"

namespace qfmm {

class PairCensus;

// --- Instrumentation ---------------------------------------------------------

enum class Phase : std::uint8_t { Sort, Distribute, Aggregate, Shift, Copy, Potential, NearField };
constexpr std::size_t kPhaseCount = 7;
const char* to_string(Phase p) noexcept;

struct OpCounts {
  std::uint64_t comparators = 0;
  std::uint64_t controlled_swaps = 0;
  std::uint64_t additions = 0;
  std::uint64_t multiplications = 0;
  std::uint64_t table_lookups = 0;
  std::uint64_t tests = 0;  // equality / membership tests outside sorting networks

  std::uint64_t total() const noexcept {
    return comparators + controlled_swaps + additions + multiplications + table_lookups + tests;
  }
  OpCounts& operator+=(const OpCounts& o) noexcept;
  friend bool operator==(const OpCounts&, const OpCounts&) = default;
};

struct ResourceCounters {
  std::array<OpCounts, kPhaseCount> by_phase{};

  OpCounts& operator[](Phase p) noexcept { return by_phase[static_cast<std::size_t>(p)]; }
  const OpCounts& operator[](Phase p) const noexcept { return by_phase[static_cast<std::size_t>(p)]; }
  OpCounts totals() const noexcept;
  void reset() noexcept { by_phase = {}; }
};

struct CounterReport {
  OpCounts totals;
  std::array<OpCounts, kPhaseCount> by_phase{};
  Phase dominant = Phase::Sort;  // phase with the largest operation total
};

CounterReport snapshot_counters(const ResourceCounters& counters);

enum class TraceOp : std::uint8_t { Compare, Swap, Copy, Add, Multiply, Lookup, Test };
const char* to_string(TraceOp op) noexcept;

struct TraceEntry {
  Phase phase;
  TraceOp op;
  std::uint32_t a;
  std::uint32_t b;
  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

/// Sequence of (phase, op, index, index) accesses. Every controlled operation
/// is recorded whether or not its control fired.
class AccessTrace {
 public:
  void record(Phase phase, TraceOp op, std::uint64_t a, std::uint64_t b);
  const std::vector<TraceEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  /// Little-endian packed records, 10 bytes each.
  std::vector<std::uint8_t> bytes() const;
  /// Bytes of the entries belonging to one phase.
  std::vector<std::uint8_t> bytes(Phase phase) const;
  void write_csv(std::ostream& os) const;

 private:
  std::vector<TraceEntry> entries_;
};

struct AddedPair {
  int level = 0;
  int shift = 0;
  MortonKey a = 0;  // unshifted box keys, a added while visiting b
  MortonKey b = 0;
};

/// Per-run instrumentation. Counters are always kept; the rest is optional.
struct Instruments {
  ResourceCounters counters;
  AccessTrace* trace = nullptr;
  PairCensus* census = nullptr;
  std::vector<AddedPair>* added_pairs = nullptr;

  void count(Phase p, TraceOp op, std::uint64_t a, std::uint64_t b, std::uint64_t n = 1);
};

// --- Registers and sorting networks -----------------------------------------

struct ParticleRegister {
  MortonKey pos = 0;  // interleaved coordinate bits; zero when empty
  bool occupied = false;
  double charge = 0.0;
  std::int64_t origin = -1;

  friend bool operator==(const ParticleRegister&, const ParticleRegister&) = default;
};

using RegisterArray = std::vector<ParticleRegister>;

/// Key order (not occupied, pos, origin): occupied registers pack left.
bool register_less(const ParticleRegister& a, const ParticleRegister& b) noexcept;

struct Comparator {
  std::uint32_t lo;
  std::uint32_t hi;
};

struct SortSchedule {
  std::size_t length = 0;
  std::vector<Comparator> comparators;
};

/// Bitonic network with every comparator ascending; comparators touching
/// indices past `length` are dropped. Depends on `length` only.
SortSchedule make_sort_schedule(std::size_t length);
/// Shared, lazily built schedules; safe from several threads.
const SortSchedule& sort_schedule(std::size_t length);

/// Which comparators swapped, so the permutation can be undone.
struct SortRecord {
  std::size_t offset = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> swapped;
};

/// Payload rows moved together with the registers: `stride` values per
/// register, laid out by absolute register index.
struct PayloadView {
  std::span<Complex> values;
  std::size_t stride = 0;
};

SortRecord oblivious_sort(RegisterArray& regs, std::size_t offset, std::size_t length,
                          Instruments& ins, Phase phase = Phase::Sort, PayloadView payload = {});
SortRecord oblivious_sort(RegisterArray& regs, Instruments& ins, PayloadView payload = {});
/// Replays the recorded swaps in reverse order.
void invert_sort(RegisterArray& regs, const SortRecord& rec, Instruments& ins,
                 Phase phase = Phase::Sort, PayloadView payload = {});

// --- Uniform mode ------------------------------------------------------------

/// n_b * c registers: the particles (occupied, input order) then empties.
/// Throws Capacity when there are more particles than registers.
RegisterArray make_uniform_registers(std::span<const ParticleRecord> particles,
                                     const GridSpec& spec, int levels, int capacity);

/// Moves every occupied register into the c-register block of its leaf box
/// by bisecting the interleaved key range. `rows`, when given, receives the
/// array after each round of region sorts (one row per bisection plus the
/// final per-leaf sort). Throws Distribution when a half overflows.
void distribute_to_boxes(RegisterArray& regs, const GridSpec& spec, int levels, int capacity,
                         Instruments& ins, std::vector<RegisterArray>* rows = nullptr);

struct ObliviousResult {
  double total = 0.0;
  double far = 0.0;
  double near = 0.0;
  std::vector<double> far_by_level;  // indexed by level
  bool scratch_restored = false;
};

/// Distributes the registers, then runs the monopole FMM over the fixed box
/// layout with occupancy-controlled updates.
ObliviousResult uniform_potential(std::span<const ParticleRecord> particles, const GridSpec& spec,
                                  int levels, int capacity, Instruments& ins);

// --- Adaptive mode -----------------------------------------------------------

/// One register per particle, input order.
RegisterArray make_adaptive_registers(std::span<const ParticleRecord> particles,
                                      const GridSpec& spec);

/// Q(j, b): information on the region given by the leading b interleaved
/// bits of register j, for b in [stop_bits, top_bits]. Order 0 stores the
/// charge; order P > 0 stores multipole coefficients about the region centre.
struct ChargeLadder {
  int order = 0;
  int stop_bits = 0;
  int top_bits = 0;
  std::size_t count = 0;  // registers
  std::vector<std::vector<Complex>> rows;  // rows[b], count * coeff_count(order)

  std::size_t stride() const noexcept { return static_cast<std::size_t>(coeff_count(order)); }
  std::span<Complex> row(int bits) { return rows.at(bits); }
  std::span<const Complex> row(int bits) const { return rows.at(bits); }
  const Complex& at(std::size_t j, int bits) const { return rows.at(bits)[j * stride()]; }
};

/// Centre of the region spanned by the leading `bits` interleaved bits of key.
Vec3 region_center(MortonKey key, int bits, const GridSpec& spec);

/// Requires registers sorted by key with pairwise distinct positions (throws
/// Domain otherwise).
ChargeLadder aggregate_charges(const RegisterArray& regs, const GridSpec& spec, int order,
                               int stop_bits, Instruments& ins);
/// Runs the aggregation backwards, returning every ladder row to zero
/// except the leaf row, which is cleared last.
void uncompute_charges(ChargeLadder& ladder, const RegisterArray& regs, const GridSpec& spec,
                       Instruments& ins);

/// Q_k(j, l) for k in [1, K]; slot (j, k) holds the payload of the box k
/// positions before j's box in the current ordering, when that box is occupied.
struct NeighbourBuffers {
  int K = 0;
  std::size_t stride = 1;
  std::size_t count = 0;
  std::vector<Complex> values;       // (j * (K + 1) + k) * stride
  std::vector<std::uint8_t> valid;   // j * (K + 1) + k

  std::span<const Complex> slot(std::size_t j, int k) const {
    return std::span<const Complex>(values).subspan((j * (K + 1) + k) * stride, stride);
  }
  bool has(std::size_t j, int k) const { return valid[j * (K + 1) + k] != 0; }
  bool is_clear() const;
};

/// Box number of register j at `level` from its (possibly shifted) key.
MortonKey register_box(const ParticleRegister& r, int level, const GridSpec& spec) noexcept;

/// `own` holds Q(j, l) for the current register order (stride values each).
NeighbourBuffers copy_k_neighbors(const RegisterArray& regs, std::span<const Complex> own,
                                  std::size_t stride, int level, int K, const GridSpec& spec,
                                  Instruments& ins);
void uncopy_k_neighbors(NeighbourBuffers& buf, const RegisterArray& regs,
                        std::span<const Complex> own, int level, const GridSpec& spec,
                        Instruments& ins);

/// Decides whether a level-l box pair was already reachable under an
/// earlier shift: captured under shift s iff the shifted box keys differ by
/// at most K.
class DedupTracker {
 public:
  DedupTracker(const GridSpec& spec, int K);
  bool captured(const BoxId& a, const BoxId& b, std::size_t shift) const;
  bool already_added(const BoxId& a, const BoxId& b, std::size_t shift) const;

 private:
  int d_;
  int K_;
  std::vector<ShiftVector> shifts_;
};

struct ObliviousOptions {
  int order = 0;  // 0 or higher; the box-box energy uses M2L for order > 0
  int K = -1;     // neighbour window, default 4^d - 1
};

ObliviousResult compute_potential(std::span<const ParticleRecord> particles, const GridSpec& spec,
                                  const ObliviousOptions& opts, Instruments& ins);

}  // namespace qfmm
