#include "qfmm/fmm_oblivious.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>
#include <tuple>

#include "qfmm/error.hpp"
#include "qfmm/oracle.hpp"

namespace qfmm {

// --- Instrumentation ---------------------------------------------------------

const char* to_string(Phase p) noexcept {
  switch (p) {
    case Phase::Sort: return "sort";
    case Phase::Distribute: return "distribute";
    case Phase::Aggregate: return "aggregate";
    case Phase::Shift: return "shift";
    case Phase::Copy: return "copy";
    case Phase::Potential: return "potential";
    case Phase::NearField: return "near_field";
  }
  return "unknown";
}

const char* to_string(TraceOp op) noexcept {
  switch (op) {
    case TraceOp::Compare: return "compare";
    case TraceOp::Swap: return "swap";
    case TraceOp::Copy: return "copy";
    case TraceOp::Add: return "add";
    case TraceOp::Multiply: return "multiply";
    case TraceOp::Lookup: return "lookup";
    case TraceOp::Test: return "test";
  }
  return "unknown";
}

OpCounts& OpCounts::operator+=(const OpCounts& o) noexcept {
  comparators += o.comparators;
  controlled_swaps += o.controlled_swaps;
  additions += o.additions;
  multiplications += o.multiplications;
  table_lookups += o.table_lookups;
  tests += o.tests;
  return *this;
}

OpCounts ResourceCounters::totals() const noexcept {
  OpCounts t;
  for (const auto& p : by_phase) t += p;
  return t;
}

CounterReport snapshot_counters(const ResourceCounters& counters) {
  CounterReport r;
  r.by_phase = counters.by_phase;
  r.totals = counters.totals();
  std::uint64_t best = 0;
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    if (r.by_phase[i].total() > best) {
      best = r.by_phase[i].total();
      r.dominant = static_cast<Phase>(i);
    }
  }
  return r;
}

void AccessTrace::record(Phase phase, TraceOp op, std::uint64_t a, std::uint64_t b) {
  entries_.push_back({phase, op, static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)});
}

namespace {

void pack(std::vector<std::uint8_t>& out, const TraceEntry& e) {
  out.push_back(static_cast<std::uint8_t>(e.phase));
  out.push_back(static_cast<std::uint8_t>(e.op));
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(e.a >> s));
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(e.b >> s));
}

}  // namespace

std::vector<std::uint8_t> AccessTrace::bytes() const {
  std::vector<std::uint8_t> out;
  out.reserve(entries_.size() * 10);
  for (const auto& e : entries_) pack(out, e);
  return out;
}

std::vector<std::uint8_t> AccessTrace::bytes(Phase phase) const {
  std::vector<std::uint8_t> out;
  for (const auto& e : entries_) {
    if (e.phase == phase) pack(out, e);
  }
  return out;
}

void AccessTrace::write_csv(std::ostream& os) const {
  os << "phase,op,a,b\n";
  for (const auto& e : entries_) {
    os << to_string(e.phase) << ',' << to_string(e.op) << ',' << e.a << ',' << e.b << '\n';
  }
}

void Instruments::count(Phase p, TraceOp op, std::uint64_t a, std::uint64_t b, std::uint64_t n) {
  OpCounts& c = counters[p];
  switch (op) {
    case TraceOp::Compare: c.comparators += n; break;
    case TraceOp::Swap: c.controlled_swaps += n; break;
    case TraceOp::Copy:
    case TraceOp::Add: c.additions += n; break;
    case TraceOp::Multiply: c.multiplications += n; break;
    case TraceOp::Lookup: c.table_lookups += n; break;
    case TraceOp::Test: c.tests += n; break;
  }
  if (trace) trace->record(p, op, a, b);
}

// --- Sorting networks --------------------------------------------------------

bool register_less(const ParticleRegister& a, const ParticleRegister& b) noexcept {
  return std::make_tuple(!a.occupied, a.pos, a.origin) < std::make_tuple(!b.occupied, b.pos, b.origin);
}

SortSchedule make_sort_schedule(std::size_t length) {
  SortSchedule s;
  s.length = length;
  std::size_t m = 1;
  while (m < length) m <<= 1;
  auto add = [&](std::size_t lo, std::size_t hi) {
    if (hi < length) s.comparators.push_back({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(hi)});
  };
  for (std::size_t k = 2; k <= m; k <<= 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t off = i & (k - 1);
      if (off < k / 2) add(i, i - off + k - 1 - off);
    }
    for (std::size_t j = k >> 2; j > 0; j >>= 1) {
      for (std::size_t i = 0; i < m; ++i) {
        if ((i & j) == 0) add(i, i + j);
      }
    }
  }
  return s;
}

const SortSchedule& sort_schedule(std::size_t length) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<SortSchedule>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[length];
  if (!slot) slot = std::make_unique<SortSchedule>(make_sort_schedule(length));
  return *slot;
}

namespace {

void swap_registers(RegisterArray& regs, std::size_t i, std::size_t l, PayloadView payload) {
  std::swap(regs[i], regs[l]);
  if (payload.stride != 0) {
    std::swap_ranges(payload.values.begin() + i * payload.stride,
                     payload.values.begin() + (i + 1) * payload.stride,
                     payload.values.begin() + l * payload.stride);
  }
}

}  // namespace

SortRecord oblivious_sort(RegisterArray& regs, std::size_t offset, std::size_t length,
                          Instruments& ins, Phase phase, PayloadView payload) {
  if (offset + length > regs.size()) fail(ErrorKind::Domain, "sort range outside the register array");
  const SortSchedule& s = sort_schedule(length);
  SortRecord rec{offset, length, std::vector<std::uint8_t>(s.comparators.size(), 0)};
  for (std::size_t c = 0; c < s.comparators.size(); ++c) {
    const std::size_t i = offset + s.comparators[c].lo, l = offset + s.comparators[c].hi;
    ins.count(phase, TraceOp::Compare, i, l);
    ins.count(phase, TraceOp::Swap, i, l);
    if (register_less(regs[l], regs[i])) {
      swap_registers(regs, i, l, payload);
      rec.swapped[c] = 1;
    }
  }
  return rec;
}

SortRecord oblivious_sort(RegisterArray& regs, Instruments& ins, PayloadView payload) {
  return oblivious_sort(regs, 0, regs.size(), ins, Phase::Sort, payload);
}

void invert_sort(RegisterArray& regs, const SortRecord& rec, Instruments& ins, Phase phase,
                 PayloadView payload) {
  const SortSchedule& s = sort_schedule(rec.length);
  for (std::size_t c = s.comparators.size(); c-- > 0;) {
    const std::size_t i = rec.offset + s.comparators[c].lo, l = rec.offset + s.comparators[c].hi;
    ins.count(phase, TraceOp::Compare, i, l);
    ins.count(phase, TraceOp::Swap, i, l);
    if (rec.swapped[c]) swap_registers(regs, i, l, payload);
  }
}

// --- Uniform mode ------------------------------------------------------------

RegisterArray make_uniform_registers(std::span<const ParticleRecord> particles,
                                     const GridSpec& spec, int levels, int capacity) {
  if (levels < 1 || levels > spec.finest_level()) fail(ErrorKind::Domain, "tree depth out of range");
  if (capacity < 1) fail(ErrorKind::Domain, "leaf capacity must be positive");
  const std::size_t n = static_cast<std::size_t>(boxes_at_level(spec.d(), levels)) * capacity;
  if (particles.size() > n) {
    std::ostringstream os;
    os << particles.size() << " particles exceed the " << n << " registers of the uniform layout";
    fail(ErrorKind::Capacity, os.str());
  }
  RegisterArray regs(n);
  for (std::size_t i = 0; i < particles.size(); ++i) {
    regs[i] = {morton_encode(particles[i].pos, spec), true, particles[i].charge, particles[i].id};
  }
  return regs;
}

namespace {

struct DistributionStep {
  SortRecord sort;            // used when is_sort
  bool is_sort = true;
  std::size_t j0 = 0;
  std::size_t half = 0;
  std::vector<std::uint8_t> swapped;
};

void distribute_impl(RegisterArray& regs, const GridSpec& spec, int levels, int capacity,
                     Instruments& ins, std::vector<RegisterArray>* rows,
                     std::vector<DistributionStep>* steps) {
  const int splits = spec.d() * (levels - 1);
  const std::size_t c = static_cast<std::size_t>(capacity);
  if (regs.size() != (c << splits)) fail(ErrorKind::Domain, "register array does not match n_b * c");
  const MortonKey leaf_keys = spec.total_points() >> splits;

  for (int s = 0; s < splits; ++s) {
    const std::size_t w = c << (splits - s);
    const std::size_t half = w / 2;
    const std::size_t regions = std::size_t{1} << s;
    for (std::size_t b = 0; b < regions; ++b) {
      auto rec = oblivious_sort(regs, b * w, w, ins, Phase::Distribute);
      if (steps) steps->push_back({std::move(rec), true, 0, 0, {}});
    }
    if (rows) rows->push_back(regs);
    for (std::size_t b = 0; b < regions; ++b) {
      const std::size_t j0 = b * w;
      const MortonKey threshold = static_cast<MortonKey>((j0 + half) / c) * leaf_keys;
      std::size_t left = 0, right = 0;
      for (std::size_t j = j0; j < j0 + w; ++j) {
        if (regs[j].occupied) ++(regs[j].pos < threshold ? left : right);
      }
      if (left > half || right > half) {
        std::ostringstream os;
        os << "bisection " << s + 1 << " of " << splits << ", region " << b << ": "
           << std::max(left, right) << " particles for a half of " << half << " registers";
        fail(ErrorKind::Distribution, os.str());
      }
      DistributionStep step;
      step.is_sort = false;
      step.j0 = j0;
      step.half = half;
      step.swapped.assign(half, 0);
      for (std::size_t j = j0; j < j0 + half; ++j) {
        ins.count(Phase::Distribute, TraceOp::Compare, j, j + half);
        ins.count(Phase::Distribute, TraceOp::Swap, j, j + half);
        if (regs[j].occupied && regs[j].pos >= threshold) {
          if (regs[j + half].occupied) {
            fail(ErrorKind::Distribution, "swap would overwrite an occupied register");
          }
          std::swap(regs[j], regs[j + half]);
          step.swapped[j - j0] = 1;
        }
      }
      if (steps) steps->push_back(std::move(step));
    }
  }
  for (std::size_t b = 0; b < (std::size_t{1} << splits); ++b) {
    auto rec = oblivious_sort(regs, b * c, c, ins, Phase::Distribute);
    if (steps) steps->push_back({std::move(rec), true, 0, 0, {}});
  }
  if (rows) rows->push_back(regs);
}

void undistribute(RegisterArray& regs, const std::vector<DistributionStep>& steps, Instruments& ins) {
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    if (it->is_sort) {
      invert_sort(regs, it->sort, ins, Phase::Distribute);
      continue;
    }
    for (std::size_t j = it->j0 + it->half; j-- > it->j0;) {
      ins.count(Phase::Distribute, TraceOp::Compare, j, j + it->half);
      ins.count(Phase::Distribute, TraceOp::Swap, j, j + it->half);
      if (it->swapped[j - it->j0]) std::swap(regs[j], regs[j + it->half]);
    }
  }
}

// Box-box kernel values and M2L operators keyed by level and displacement,
// built on first use.
class FarFieldTable {
 public:
  FarFieldTable(const GridSpec& spec, int order) : spec_(spec), order_(order) {}

  struct Entry {
    double phi = 0.0;
    std::shared_ptr<const TranslationOperator> op;
  };

  const Entry& get(const BoxId& a, const BoxId& b) {
    std::array<long, kMaxDim> delta{};
    for (int ax = 0; ax < a.dim; ++ax) {
      delta[ax] = static_cast<long>(b.coords[ax]) - static_cast<long>(a.coords[ax]);
    }
    const auto key = std::make_tuple(a.level, delta[0], delta[1], delta[2]);
    auto it = table_.find(key);
    if (it != table_.end()) return it->second;
    Entry e;
    e.phi = box_pair_kernel(a, b, spec_);
    if (order_ > 0 && in_interaction_list(a, b)) {
      const Vec3 ca = box_center(a, spec_), cb = box_center(b, spec_);
      e.op = default_operator_cache().get(TranslationKind::ML, order_,
                                          {cb[0] - ca[0], cb[1] - ca[1], cb[2] - ca[2]});
    }
    return table_.emplace(key, std::move(e)).first->second;
  }

 private:
  GridSpec spec_;
  int order_;
  std::map<std::tuple<int, long, long, long>, Entry> table_;
};

}  // namespace

void distribute_to_boxes(RegisterArray& regs, const GridSpec& spec, int levels, int capacity,
                         Instruments& ins, std::vector<RegisterArray>* rows) {
  distribute_impl(regs, spec, levels, capacity, ins, rows, nullptr);
}

ObliviousResult uniform_potential(std::span<const ParticleRecord> particles, const GridSpec& spec,
                                  int levels, int capacity, Instruments& ins) {
  const int d = spec.d();
  const int L = levels;
  RegisterArray regs = make_uniform_registers(particles, spec, levels, capacity);
  const RegisterArray initial = regs;
  std::vector<DistributionStep> steps;
  distribute_impl(regs, spec, levels, capacity, ins, nullptr, &steps);

  const std::size_t c = static_cast<std::size_t>(capacity);
  const std::uint64_t n_leaves = boxes_at_level(d, L);
  FarFieldTable table(spec, 0);
  ObliviousResult out;
  out.far_by_level.assign(L + 1, 0.0);
  double v = 0.0;

  if (L >= 3) {
    std::vector<std::vector<double>> q(L + 1);
    q[L].assign(n_leaves, 0.0);
    for (std::uint64_t k = 0; k < n_leaves; ++k) {
      for (std::size_t r = 0; r < c; ++r) {
        const std::size_t idx = k * c + r;
        ins.count(Phase::Aggregate, TraceOp::Add, idx, k);
        if (regs[idx].occupied) q[L][k] += regs[idx].charge;
      }
    }
    for (int l = L - 1; l >= 3; --l) {
      q[l].assign(boxes_at_level(d, l), 0.0);
      for (std::size_t k = 0; k < q[l].size(); ++k) {
        for (std::size_t ch = 0; ch < (std::size_t{1} << d); ++ch) {
          ins.count(Phase::Aggregate, TraceOp::Add, k, (k << d) + ch);
          q[l][k] += q[l + 1][(k << d) + ch];
        }
      }
    }
    for (int l = 3; l <= L; ++l) {
      for (MortonKey kb = 0; kb < q[l].size(); ++kb) {
        const BoxId b = box_from_key(d, l, kb);
        double vb = 0.0;
        for (const BoxId& a : interaction_list(b)) {
          const MortonKey ka = box_key(a);
          if (ka <= kb) continue;
          ins.count(Phase::Potential, TraceOp::Lookup, kb, ka);
          ins.count(Phase::Potential, TraceOp::Multiply, kb, ka);
          const double phi = table.get(a, b).phi;
          vb += q[l][kb] * phi * q[l][ka];
          if (ins.census) ins.census->add_box_pair(l, kb, ka);
        }
        v += vb;
        out.far_by_level[l] += vb;
        out.far += vb;
      }
    }
  }

  auto pair_term = [&](std::size_t x, std::size_t y, double& vb) {
    ins.count(Phase::NearField, TraceOp::Multiply, x, y);
    const ParticleRegister& rx = regs[x];
    const ParticleRegister& ry = regs[y];
    if (!rx.occupied || !ry.occupied) return;
    if (rx.pos == ry.pos) fail(ErrorKind::Singularity, "two particles share a grid point");
    vb += rx.charge * coulomb(morton_decode(rx.pos, spec), morton_decode(ry.pos, spec), d) * ry.charge;
    if (ins.census) ins.census->add_particle_pair(rx.origin, ry.origin);
  };
  for (MortonKey kb = 0; kb < n_leaves; ++kb) {
    const auto nn = nearest_neighbors(box_from_key(d, L, kb));
    double vb = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      const std::size_t x = kb * c + i;
      for (std::size_t j = i + 1; j < c; ++j) pair_term(x, kb * c + j, vb);
      for (const BoxId& nbox : nn) {
        const MortonKey kn = box_key(nbox);
        if (kn <= kb) continue;
        for (std::size_t j = 0; j < c; ++j) pair_term(x, kn * c + j, vb);
      }
    }
    v += vb;
    out.near += vb;
  }
  out.total = v;

  undistribute(regs, steps, ins);
  out.scratch_restored = regs == initial;
  return out;
}

// --- Adaptive mode -----------------------------------------------------------

RegisterArray make_adaptive_registers(std::span<const ParticleRecord> particles,
                                      const GridSpec& spec) {
  RegisterArray regs(particles.size());
  for (std::size_t i = 0; i < particles.size(); ++i) {
    regs[i] = {morton_encode(particles[i].pos, spec), true, particles[i].charge, particles[i].id};
  }
  return regs;
}

Vec3 region_center(MortonKey key, int bits, const GridSpec& spec) {
  const int d = spec.d();
  const GridPoint p = deinterleave(key, d, spec.n_bits());
  Vec3 c{};
  for (int a = 0; a < d; ++a) {
    const int used = (bits + d - 1 - a) / d;
    const double width = static_cast<double>(spec.side() >> used);
    const double prefix = static_cast<double>(p[a] >> (spec.n_bits() - used));
    c[a] = prefix * width + (width - 1.0) / 2.0;
  }
  return c;
}

namespace {

struct LadderOps {
  const RegisterArray& regs;
  const GridSpec& spec;
  ChargeLadder& ladder;
  Instruments& ins;
  int total_bits;

  MortonKey box(std::size_t j, int bits) const {
    return bits == 0 ? 0 : regs[j].pos >> (total_bits - bits);
  }

  Complex* at(int bits, std::size_t j) { return ladder.rows[bits].data() + j * ladder.stride(); }

  // dst(j_dst, bits) += sign * src(j_src, src_bits) re-expanded about the
  // centre of j_dst's region at `bits`.
  void charge_cost(std::size_t j_dst, std::size_t j_src) {
    const std::size_t n = ladder.stride();
    ins.count(Phase::Aggregate, TraceOp::Add, j_dst, j_src, n);
    if (ladder.order > 0) ins.count(Phase::Aggregate, TraceOp::Multiply, j_dst, j_src, n * n);
  }

  void add(int bits, std::size_t j_dst, int src_bits, std::size_t j_src, double sign) {
    const std::size_t n = ladder.stride();
    Complex* dst = at(bits, j_dst);
    const Complex* src = at(src_bits, j_src);
    if (ladder.order == 0 || src_bits == bits) {
      for (std::size_t i = 0; i < n; ++i) dst[i] += sign * src[i];
      return;
    }
    const Vec3 from = region_center(regs[j_src].pos, src_bits, spec);
    const Vec3 to = region_center(regs[j_dst].pos, bits, spec);
    const auto op = default_operator_cache().get(TranslationKind::MM, ladder.order,
                                                 {to[0] - from[0], to[1] - from[1], to[2] - from[2]});
    const auto moved = op->apply(std::span<const Complex>(src, n));
    for (std::size_t i = 0; i < n; ++i) dst[i] += sign * moved[i];
  }

  void forward_step(int b, std::size_t j, double sign) {
    ins.count(Phase::Aggregate, TraceOp::Test, j, j + 1);
    charge_cost(j + 1, j);
    if (box(j + 1, b) != box(j, b)) return;
    if (box(j + 1, b + 1) != box(j, b + 1)) {
      add(b, j + 1, b + 1, j, sign);
    } else if (box(j, b + 1) % 2 == 1) {
      add(b, j + 1, b, j, sign);
    }
  }

  void backward_step(int b, std::size_t j, double sign) {
    ins.count(Phase::Aggregate, TraceOp::Test, j, j + 1);
    charge_cost(j, j + 1);
    if (box(j, b) != box(j + 1, b)) return;
    if (box(j, b + 1) != box(j + 1, b + 1)) {
      add(b, j, b + 1, j + 1, sign);
    } else if (box(j, b + 1) % 2 == 0) {
      add(b, j, b, j + 1, sign);
    }
  }
};

}  // namespace

ChargeLadder aggregate_charges(const RegisterArray& regs, const GridSpec& spec, int order,
                               int stop_bits, Instruments& ins) {
  const int top = spec.d() * spec.n_bits();
  if (order < 0) fail(ErrorKind::Domain, "order must be non-negative");
  if (stop_bits < 0 || stop_bits > top) fail(ErrorKind::Domain, "ladder depth out of range");
  for (std::size_t j = 1; j < regs.size(); ++j) {
    if (regs[j].pos == regs[j - 1].pos) {
      std::ostringstream os;
      os << "particles " << regs[j - 1].origin << " and " << regs[j].origin << " share a grid point";
      fail(ErrorKind::Domain, os.str());
    }
    if (regs[j].pos < regs[j - 1].pos) fail(ErrorKind::Domain, "registers are not sorted by Morton key");
  }
  ChargeLadder ladder;
  ladder.order = order;
  ladder.stop_bits = stop_bits;
  ladder.top_bits = top;
  ladder.count = regs.size();
  ladder.rows.assign(top + 1, {});
  for (int b = stop_bits; b <= top; ++b) ladder.rows[b].assign(regs.size() * ladder.stride(), Complex{});

  LadderOps ops{regs, spec, ladder, ins, top};
  const std::size_t n = regs.size();
  for (std::size_t j = 0; j < n; ++j) {
    ins.count(Phase::Aggregate, TraceOp::Copy, j, j);
    *ops.at(top, j) = regs[j].charge;
  }
  for (int b = top - 1; b >= stop_bits; --b) {
    for (std::size_t j = 0; j + 1 < n; ++j) ops.forward_step(b, j, 1.0);
    for (std::size_t j = n - 1; n > 0 && j-- > 0;) ops.backward_step(b, j, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
      ops.charge_cost(j, j);
      ops.add(b, j, b + 1, j, 1.0);
    }
  }
  return ladder;
}

void uncompute_charges(ChargeLadder& ladder, const RegisterArray& regs, const GridSpec& spec,
                       Instruments& ins) {
  LadderOps ops{regs, spec, ladder, ins, ladder.top_bits};
  const std::size_t n = regs.size();
  for (int b = ladder.stop_bits; b < ladder.top_bits; ++b) {
    for (std::size_t j = n; j-- > 0;) {
      ops.charge_cost(j, j);
      ops.add(b, j, b + 1, j, -1.0);
    }
    for (std::size_t j = 0; j + 1 < n; ++j) ops.backward_step(b, j, -1.0);
    for (std::size_t j = n - 1; n > 0 && j-- > 0;) ops.forward_step(b, j, -1.0);
  }
  for (std::size_t j = n; j-- > 0;) {
    ins.count(Phase::Aggregate, TraceOp::Copy, j, j);
    *ops.at(ladder.top_bits, j) -= regs[j].charge;
  }
}

bool NeighbourBuffers::is_clear() const {
  return std::all_of(values.begin(), values.end(), [](const Complex& c) { return c == Complex{}; }) &&
         std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v == 0; });
}

MortonKey register_box(const ParticleRegister& r, int level, const GridSpec& spec) noexcept {
  return r.pos >> (spec.d() * (spec.n_bits() - (level - 1)));
}

namespace {

void copy_pass(NeighbourBuffers& buf, const RegisterArray& regs, std::span<const Complex> own,
               int level, const GridSpec& spec, Instruments& ins, std::size_t j, double sign) {
  const int K = buf.K;
  const std::size_t stride = buf.stride;
  const MortonKey bj = register_box(regs[j], level, spec);
  const MortonKey bn = register_box(regs[j + 1], level, spec);
  ins.count(Phase::Copy, TraceOp::Test, j, j + 1);
  for (int k = 1; k <= K; ++k) ins.count(Phase::Copy, TraceOp::Copy, j + 1, k, stride);
  auto slot = [&](std::size_t r, int k) { return buf.values.data() + (r * (K + 1) + k) * stride; };
  auto flag = [&](std::size_t r, int k) -> std::uint8_t& { return buf.valid[r * (K + 1) + k]; };
  if (bn == bj) {
    for (int k = 1; k <= K; ++k) {
      Complex* dst = slot(j + 1, k);
      const Complex* src = slot(j, k);
      for (std::size_t i = 0; i < stride; ++i) dst[i] += sign * src[i];
      flag(j + 1, k) ^= flag(j, k);
    }
  } else if (bn > bj && bn - bj <= static_cast<MortonKey>(K)) {
    const int dk = static_cast<int>(bn - bj);
    for (int k = dk; k <= K; ++k) {
      Complex* dst = slot(j + 1, k);
      const Complex* src = k == dk ? own.data() + j * stride : slot(j, k - dk);
      for (std::size_t i = 0; i < stride; ++i) dst[i] += sign * src[i];
      flag(j + 1, k) ^= k == dk ? 1 : flag(j, k - dk);
    }
  }
}

}  // namespace

NeighbourBuffers copy_k_neighbors(const RegisterArray& regs, std::span<const Complex> own,
                                  std::size_t stride, int level, int K, const GridSpec& spec,
                                  Instruments& ins) {
  if (K < 0) fail(ErrorKind::Domain, "neighbour window must be non-negative");
  if (own.size() != regs.size() * stride) fail(ErrorKind::Domain, "payload does not match the registers");
  NeighbourBuffers buf;
  buf.K = K;
  buf.stride = stride;
  buf.count = regs.size();
  buf.values.assign(regs.size() * (K + 1) * stride, Complex{});
  buf.valid.assign(regs.size() * (K + 1), 0);
  for (std::size_t j = 0; j + 1 < regs.size(); ++j) copy_pass(buf, regs, own, level, spec, ins, j, 1.0);
  return buf;
}

void uncopy_k_neighbors(NeighbourBuffers& buf, const RegisterArray& regs,
                        std::span<const Complex> own, int level, const GridSpec& spec,
                        Instruments& ins) {
  for (std::size_t j = regs.size(); j-- > 1;) copy_pass(buf, regs, own, level, spec, ins, j - 1, -1.0);
}

DedupTracker::DedupTracker(const GridSpec& spec, int K)
    : d_(spec.d()), K_(K), shifts_(all_shifts(spec.d())) {}

namespace {

MortonKey shifted_box_key(const BoxId& b, const ShiftVector& z) {
  const Coord mask = static_cast<Coord>(boxes_per_axis(b.level)) - 1;
  GridPoint c{};
  for (int a = 0; a < b.dim; ++a) c[a] = (b.coords[a] + z.z[a]) & mask;
  return interleave(c, b.dim, b.level - 1);
}

}  // namespace

bool DedupTracker::captured(const BoxId& a, const BoxId& b, std::size_t shift) const {
  const MortonKey ka = shifted_box_key(a, shifts_.at(shift));
  const MortonKey kb = shifted_box_key(b, shifts_.at(shift));
  return (ka > kb ? ka - kb : kb - ka) <= static_cast<MortonKey>(K_);
}

bool DedupTracker::already_added(const BoxId& a, const BoxId& b, std::size_t shift) const {
  for (std::size_t s = 0; s < shift; ++s) {
    if (captured(a, b, s)) return true;
  }
  return false;
}

namespace {

void apply_shift(RegisterArray& regs, const ShiftVector& z, int level_bit, const GridSpec& spec,
                 bool subtract, Instruments& ins) {
  const int d = spec.d();
  const Coord mask = spec.side() - 1;
  for (std::size_t j = 0; j < regs.size(); ++j) {
    GridPoint p = deinterleave(regs[j].pos, d, spec.n_bits());
    for (int a = 0; a < d; ++a) {
      ins.count(Phase::Shift, TraceOp::Add, j, a);
      const Coord inc = static_cast<Coord>((std::uint64_t{z.z[a]} << (spec.n_bits() - level_bit)) & mask);
      p[a] = (subtract ? p[a] - inc : p[a] + inc) & mask;
    }
    regs[j].pos = interleave(p, d, spec.n_bits());
  }
}

BoxId unshift_box(MortonKey shifted, const ShiftVector& z, int level, int d) {
  GridPoint c = deinterleave(shifted, d, level - 1);
  const Coord mask = static_cast<Coord>(boxes_per_axis(level)) - 1;
  for (int a = 0; a < d; ++a) c[a] = (c[a] - z.z[a]) & mask;
  return BoxId{d, level, c};
}

bool nearly_zero(const std::vector<Complex>& row, double tol) {
  return std::all_of(row.begin(), row.end(), [&](const Complex& c) { return std::abs(c) <= tol; });
}

}  // namespace

ObliviousResult compute_potential(std::span<const ParticleRecord> particles, const GridSpec& spec,
                                  const ObliviousOptions& opts, Instruments& ins) {
  const int d = spec.d();
  if (spec.n_bits() < 2) fail(ErrorKind::Domain, "the adaptive scheme needs at least 2 bits per axis");
  if (opts.order < 0) fail(ErrorKind::Domain, "order must be non-negative");
  const int K = opts.K < 0 ? (1 << (2 * d)) - 1 : opts.K;
  const int L = spec.finest_level();
  const int order = opts.order;

  RegisterArray regs = make_adaptive_registers(particles, spec);
  const RegisterArray initial = regs;
  ObliviousResult out;
  out.far_by_level.assign(L + 1, 0.0);
  if (regs.empty()) {
    out.scratch_restored = true;
    return out;
  }

  const SortRecord base = oblivious_sort(regs, ins);
  ChargeLadder ladder = aggregate_charges(regs, spec, order, 2 * d, ins);
  const std::size_t stride = ladder.stride();
  const std::uint64_t mult_cost = order == 0 ? 1 : stride * stride + stride;
  FarFieldTable table(spec, order);
  DedupTracker dedup(spec, K);
  const auto shifts = all_shifts(d);
  bool restored = true;
  double v = 0.0;

  for (int l = 3; l <= L; ++l) {
    auto& row = ladder.rows[d * (l - 1)];
    const PayloadView view{row, stride};
    for (std::size_t s = 0; s < shifts.size(); ++s) {
      const ShiftVector& z = shifts[s];
      apply_shift(regs, z, l - 1, spec, false, ins);
      const SortRecord rec = oblivious_sort(regs, 0, regs.size(), ins, Phase::Sort, view);
      NeighbourBuffers buf = copy_k_neighbors(regs, row, stride, l, K, spec, ins);

      for (std::size_t j = 0; j < regs.size(); ++j) {
        const MortonKey bj = register_box(regs[j], l, spec);
        ins.count(Phase::Potential, TraceOp::Test, j, j == 0 ? j : j - 1);
        const bool first = j == 0 || register_box(regs[j - 1], l, spec) != bj;
        const BoxId b = unshift_box(bj, z, l, d);
        const Complex* mb = row.data() + j * stride;
        for (int k = 1; k <= K; ++k) {
          ins.count(Phase::Potential, TraceOp::Test, j, k);
          ins.count(Phase::Potential, TraceOp::Lookup, j, k);
          ins.count(Phase::Potential, TraceOp::Multiply, j, k, mult_cost);
          if (!first || !buf.has(j, k)) continue;
          const BoxId a = unshift_box(bj - k, z, l, d);
          const bool listed = in_interaction_list(a, b);
          if (!listed && !(l == L && are_neighbors(a, b))) continue;
          if (dedup.already_added(a, b, s)) continue;
          const auto& entry = table.get(a, b);
          const auto ma = buf.slot(j, k);
          double e = 0.0;
          if (order == 0 || !listed) {
            e = mb[0].real() * entry.phi * ma[0].real();
          } else {
            const auto local = entry.op->apply(ma);
            for (std::size_t i = 0; i < stride; ++i) e += (local[i] * std::conj(mb[i])).real();
          }
          v += e;
          if (listed) {
            out.far += e;
            out.far_by_level[l] += e;
          } else {
            out.near += e;
          }
          if (ins.census) ins.census->add_box_pair(l, box_key(a), box_key(b));
          if (ins.added_pairs) ins.added_pairs->push_back({l, static_cast<int>(s), box_key(a), box_key(b)});
        }
      }

      uncopy_k_neighbors(buf, regs, row, l, spec, ins);
      restored = restored && buf.is_clear();
      invert_sort(regs, rec, ins, Phase::Sort, view);
      apply_shift(regs, z, l - 1, spec, true, ins);
    }
  }

  uncompute_charges(ladder, regs, spec, ins);
  invert_sort(regs, base, ins);
  for (int b = ladder.stop_bits; b <= ladder.top_bits; ++b) {
    restored = restored && nearly_zero(ladder.rows[b], order == 0 ? 0.0 : 1e-9);
  }
  out.scratch_restored = restored && regs == initial;
  out.total = v;
  return out;
}

}  // namespace qfmm
