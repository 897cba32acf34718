#include "qfmm/grid_tree.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qfmm/error.hpp"

namespace qfmm {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Distribution: return "distribution";
    case ErrorKind::Singularity: return "singularity";
    case ErrorKind::OrderMismatch: return "order-mismatch";
    case ErrorKind::Input: return "input";
  }
  return "unknown";
}

GridSpec::GridSpec(int d, int n_bits) : d_(d), n_bits_(n_bits) {
  if (d < 1 || d > kMaxDim) fail(ErrorKind::Domain, "grid dimension must be 1, 2 or 3");
  if (n_bits < 0 || n_bits > 20 || d * n_bits > 60) {
    fail(ErrorKind::Domain, "grid bits per axis out of range");
  }
}

bool GridSpec::contains(const GridPoint& p) const noexcept {
  for (int a = 0; a < d_; ++a) {
    if (p[a] >= side()) return false;
  }
  for (int a = d_; a < kMaxDim; ++a) {
    if (p[a] != 0) return false;
  }
  return true;
}

MortonKey interleave(const GridPoint& p, int d, int bits) noexcept {
  MortonKey key = 0;
  for (int k = bits - 1; k >= 0; --k) {
    for (int a = 0; a < d; ++a) key = (key << 1) | ((p[a] >> k) & 1u);
  }
  return key;
}

GridPoint deinterleave(MortonKey key, int d, int bits) noexcept {
  GridPoint p{};
  for (int k = 0; k < bits; ++k) {
    for (int a = d - 1; a >= 0; --a) {
      p[a] |= static_cast<Coord>(key & 1u) << k;
      key >>= 1;
    }
  }
  return p;
}

MortonKey morton_encode(const GridPoint& pos, const GridSpec& spec) {
  if (!spec.contains(pos)) fail(ErrorKind::Domain, "position outside the grid");
  return interleave(pos, spec.d(), spec.n_bits());
}

GridPoint morton_decode(MortonKey key, const GridSpec& spec) {
  if (key >= spec.total_points()) fail(ErrorKind::Domain, "Morton key outside the grid");
  return deinterleave(key, spec.d(), spec.n_bits());
}

std::vector<ShiftVector> all_shifts(int d) {
  std::vector<ShiftVector> out;
  for (unsigned s = 0; s < (1u << d); ++s) {
    ShiftVector z;
    for (int a = 0; a < d; ++a) z.z[a] = ((s >> (d - 1 - a)) & 1u) ? 2 : 0;
    out.push_back(z);
  }
  return out;
}

MortonKey shifted_morton_key(const GridPoint& pos, const ShiftVector& z, int level_bit,
                             const GridSpec& spec) {
  if (!spec.contains(pos)) fail(ErrorKind::Domain, "position outside the grid");
  if (level_bit < 0 || level_bit > spec.n_bits()) fail(ErrorKind::Domain, "shift level out of range");
  GridPoint shifted = pos;
  const Coord mask = spec.side() - 1;
  for (int a = 0; a < kMaxDim; ++a) {
    if (z.z[a] != 0 && z.z[a] != 2) fail(ErrorKind::Domain, "shift entries must be 0 or 2");
    if (a >= spec.d()) {
      if (z.z[a] != 0) fail(ErrorKind::Domain, "shift on an unused axis");
      continue;
    }
    // Wide arithmetic: 2 << n_bits does not fit Coord when n_bits is 31.
    const std::uint64_t inc = std::uint64_t{z.z[a]} << (spec.n_bits() - level_bit);
    shifted[a] = static_cast<Coord>((pos[a] + inc) & mask);
  }
  return interleave(shifted, spec.d(), spec.n_bits());
}

int boxes_per_axis(int level) noexcept { return 1 << (level - 1); }

std::uint64_t boxes_at_level(int d, int level) noexcept {
  return std::uint64_t{1} << (d * (level - 1));
}

BoxId make_box(int d, int level, const GridPoint& coords) {
  if (d < 1 || d > kMaxDim) fail(ErrorKind::Domain, "box dimension must be 1, 2 or 3");
  if (level < 1 || level > 21) fail(ErrorKind::Domain, "box level out of range");
  for (int a = 0; a < kMaxDim; ++a) {
    const bool ok = a < d ? coords[a] < static_cast<Coord>(boxes_per_axis(level)) : coords[a] == 0;
    if (!ok) fail(ErrorKind::Domain, "box coordinates outside level");
  }
  return BoxId{d, level, coords};
}

BoxId box_of(const GridPoint& pos, int level, const GridSpec& spec) {
  if (!spec.contains(pos)) fail(ErrorKind::Domain, "position outside the grid");
  if (level < 1 || level > spec.finest_level()) fail(ErrorKind::Domain, "level deeper than the grid");
  GridPoint c{};
  const int drop = spec.n_bits() - (level - 1);
  for (int a = 0; a < spec.d(); ++a) c[a] = pos[a] >> drop;
  return BoxId{spec.d(), level, c};
}

MortonKey box_key(const BoxId& b) noexcept { return interleave(b.coords, b.dim, b.level - 1); }

BoxId box_from_key(int d, int level, MortonKey key) {
  if (key >= boxes_at_level(d, level)) fail(ErrorKind::Domain, "box key outside level");
  return BoxId{d, level, deinterleave(key, d, level - 1)};
}

Coord box_width(int level, const GridSpec& spec) {
  if (level < 1 || level > spec.finest_level()) fail(ErrorKind::Domain, "level deeper than the grid");
  return spec.side() >> (level - 1);
}

Vec3 box_center(const BoxId& b, const GridSpec& spec) {
  const double w = box_width(b.level, spec);
  Vec3 c{};
  for (int a = 0; a < b.dim; ++a) c[a] = b.coords[a] * w + (w - 1.0) / 2.0;
  return c;
}

BoxId parent(const BoxId& b) {
  if (b.level < 2) fail(ErrorKind::Domain, "the root box has no parent");
  BoxId p = b;
  p.level = b.level - 1;
  for (int a = 0; a < b.dim; ++a) p.coords[a] = b.coords[a] >> 1;
  return p;
}

std::vector<BoxId> children(const BoxId& b) {
  std::vector<BoxId> out;
  out.reserve(std::size_t{1} << b.dim);
  for (unsigned s = 0; s < (1u << b.dim); ++s) {
    BoxId c = b;
    c.level = b.level + 1;
    for (int a = 0; a < b.dim; ++a) c.coords[a] = (b.coords[a] << 1) | ((s >> (b.dim - 1 - a)) & 1u);
    out.push_back(c);
  }
  // Child order above already follows the Morton order of the child level.
  return out;
}

namespace {

// Boxes at b's level whose coordinates differ from b's by [lo, hi] per axis,
// clipped to the level.
template <class Keep>
std::vector<BoxId> boxes_in_window(const BoxId& b, const std::array<long, kMaxDim>& lo,
                                   const std::array<long, kMaxDim>& hi, Keep keep) {
  std::vector<BoxId> out;
  const long n = boxes_per_axis(b.level);
  std::array<long, kMaxDim> from{}, to{};
  for (int a = 0; a < kMaxDim; ++a) {
    if (a < b.dim) {
      from[a] = std::max(0L, lo[a]);
      to[a] = std::min(n - 1, hi[a]);
    }
  }
  for (long x = from[0]; x <= to[0]; ++x) {
    for (long y = from[1]; y <= to[1]; ++y) {
      for (long z = from[2]; z <= to[2]; ++z) {
        BoxId c = b;
        c.coords = {static_cast<Coord>(x), static_cast<Coord>(y), static_cast<Coord>(z)};
        if (keep(c)) out.push_back(c);
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const BoxId& u, const BoxId& v) { return box_key(u) < box_key(v); });
  return out;
}

long coord_gap(const BoxId& a, const BoxId& b, int axis) noexcept {
  return std::labs(static_cast<long>(a.coords[axis]) - static_cast<long>(b.coords[axis]));
}

}  // namespace

bool are_neighbors(const BoxId& a, const BoxId& b) noexcept {
  if (a.level != b.level || a.dim != b.dim || a.coords == b.coords) return false;
  for (int ax = 0; ax < a.dim; ++ax) {
    if (coord_gap(a, b, ax) > 1) return false;
  }
  return true;
}

std::vector<BoxId> nearest_neighbors(const BoxId& b) {
  std::array<long, kMaxDim> lo{}, hi{};
  for (int a = 0; a < b.dim; ++a) {
    lo[a] = static_cast<long>(b.coords[a]) - 1;
    hi[a] = static_cast<long>(b.coords[a]) + 1;
  }
  return boxes_in_window(b, lo, hi, [&](const BoxId& c) { return c.coords != b.coords; });
}

bool in_interaction_list(const BoxId& a, const BoxId& b) noexcept {
  if (a.level != b.level || a.dim != b.dim || a.level < 3) return false;
  if (a.coords == b.coords || are_neighbors(a, b)) return false;
  for (int ax = 0; ax < a.dim; ++ax) {
    if (std::labs(static_cast<long>(a.coords[ax] >> 1) - static_cast<long>(b.coords[ax] >> 1)) > 1) {
      return false;
    }
  }
  return true;
}

std::vector<BoxId> interaction_list(const BoxId& b) {
  if (b.level < 3) fail(ErrorKind::Domain, "interaction lists start at level 3");
  std::array<long, kMaxDim> lo{}, hi{};
  for (int a = 0; a < b.dim; ++a) {
    const long pc = b.coords[a] >> 1;
    lo[a] = 2 * (pc - 1);
    hi[a] = 2 * (pc + 1) + 1;
  }
  return boxes_in_window(b, lo, hi, [&](const BoxId& c) {
    return c.coords != b.coords && !are_neighbors(c, b);
  });
}

double box_pair_kernel(const BoxId& a, const BoxId& b, const GridSpec& spec) {
  double s = 0.0;
  for (int ax = 0; ax < a.dim; ++ax) {
    const double diff = static_cast<double>(coord_gap(a, b, ax));
    s += diff * diff;
  }
  return 1.0 / (static_cast<double>(box_width(a.level, spec)) * std::sqrt(s));
}

std::uint64_t lemma1_pair_budget(const GridSpec& spec) noexcept {
  std::uint64_t per_point = 1;
  for (int a = 0; a < spec.d(); ++a) per_point *= 6;
  return spec.total_points() * per_point;
}

Lemma1Report verify_lemma1(const GridSpec& spec, std::uint64_t max_pairs) {
  if (lemma1_pair_budget(spec) > max_pairs) {
    std::ostringstream os;
    os << "exhaustive check needs about " << lemma1_pair_budget(spec) << " pairs, budget is "
       << max_pairs << "; lower n_bits or d";
    fail(ErrorKind::Domain, os.str());
  }
  const int d = spec.d();
  Lemma1Report rep;
  rep.d = d;
  rep.n_bits = spec.n_bits();
  rep.bound = (std::uint64_t{1} << (2 * d)) - 1;
  const long side = spec.side();

  for (MortonKey pk = 0; pk < spec.total_points(); ++pk) {
    const GridPoint p = deinterleave(pk, d, spec.n_bits());
    // q ranges over the pairs of grid points around p at granularity 2.
    std::array<long, kMaxDim> lo{}, hi{};
    for (int a = 0; a < d; ++a) {
      const long half = p[a] / 2;
      lo[a] = std::max(0L, 2 * (half - 1));
      hi[a] = std::min(side - 1, 2 * (half + 1) + 1);
    }
    for (long x = lo[0]; x <= hi[0]; ++x) {
      for (long y = lo[1]; y <= hi[1]; ++y) {
        for (long zc = lo[2]; zc <= hi[2]; ++zc) {
          const GridPoint q{static_cast<Coord>(x), static_cast<Coord>(y), static_cast<Coord>(zc)};
          ShiftVector z;
          for (int a = 0; a < d; ++a) {
            z.z[a] = 2 * static_cast<Coord>(std::labs(static_cast<long>(p[a] / 4) -
                                                      static_cast<long>(q[a] / 4)));
          }
          const MortonKey mp = shifted_morton_key(p, z, spec.n_bits(), spec);
          const MortonKey mq = shifted_morton_key(q, z, spec.n_bits(), spec);
          const std::uint64_t sep = mp > mq ? mp - mq : mq - mp;
          ++rep.pairs_checked;
          rep.max_separation = std::max(rep.max_separation, sep);
          if (sep > rep.bound) rep.counterexamples.push_back({p, q, z, sep});
        }
      }
    }
  }
  return rep;
}

}  // namespace qfmm
