#include "qfmm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "qfmm/error.hpp"
#include "qfmm/expansions.hpp"

namespace qfmm {

void CompensatedSum::add(double x) noexcept {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    comp_ += (sum_ - t) + x;
  } else {
    comp_ += (x - t) + sum_;
  }
  sum_ = t;
}

Vec3 to_vec(const GridPoint& p) noexcept {
  return {static_cast<double>(p[0]), static_cast<double>(p[1]), static_cast<double>(p[2])};
}

double coulomb(const GridPoint& a, const GridPoint& b, int d) noexcept {
  double s = 0.0;
  for (int ax = 0; ax < d; ++ax) {
    const double diff = static_cast<double>(a[ax]) - static_cast<double>(b[ax]);
    s += diff * diff;
  }
  return 1.0 / std::sqrt(s);
}

namespace {

std::vector<std::size_t> order_by_id(std::span<const ParticleRecord> particles) {
  std::vector<std::size_t> idx(particles.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return particles[a].id < particles[b].id; });
  return idx;
}

[[noreturn]] void coincident(const ParticleRecord& a, const ParticleRecord& b) {
  std::ostringstream os;
  os << "particles " << a.id << " and " << b.id << " share position (" << a.pos[0] << ","
     << a.pos[1] << "," << a.pos[2] << ")";
  fail(ErrorKind::Singularity, os.str());
}

bool same_or_touching(const BoxId& a, const BoxId& b) { return a == b || are_neighbors(a, b); }

}  // namespace

PairwiseResult brute_force_potential(std::span<const ParticleRecord> particles, int d,
                                     Summation mode) {
  const std::size_t n = particles.size();
  const auto idx = order_by_id(particles);
  std::vector<CompensatedSum> vc(mode == Summation::Compensated ? n : 0);
  std::vector<double> vp(n, 0.0);
  CompensatedSum tc;
  double tp = 0.0;
  PairwiseResult out;
  for (std::size_t a = 0; a < n; ++a) {
    const ParticleRecord& pi = particles[idx[a]];
    for (std::size_t b = a + 1; b < n; ++b) {
      const ParticleRecord& pj = particles[idx[b]];
      if (pi.pos == pj.pos) coincident(pi, pj);
      const double phi = coulomb(pi.pos, pj.pos, d);
      const double e = pi.charge * phi * pj.charge;
      if (mode == Summation::Compensated) {
        vc[idx[a]].add(0.5 * phi * pj.charge);
        vc[idx[b]].add(0.5 * phi * pi.charge);
        tc.add(e);
      } else {
        vp[idx[a]] += 0.5 * phi * pj.charge;
        vp[idx[b]] += 0.5 * phi * pi.charge;
        tp += e;
      }
      ++out.pair_count;
    }
  }
  if (mode == Summation::Compensated) {
    for (std::size_t i = 0; i < n; ++i) vp[i] = vc[i].value();
    tp = tc.value();
  }
  out.total = tp;
  out.per_particle = std::move(vp);
  return out;
}

NearFarSplit reference_near_far_split(std::span<const ParticleRecord> particles,
                                      const GridSpec& spec, int levels) {
  if (levels < 1 || levels > spec.finest_level()) fail(ErrorKind::Domain, "tree depth out of range");
  const std::size_t n = particles.size();
  const auto idx = order_by_id(particles);
  NearFarSplit out;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const std::size_t i = std::min(idx[a], idx[b]), j = std::max(idx[a], idx[b]);
      const ParticleRecord& pi = particles[i];
      const ParticleRecord& pj = particles[j];
      if (pi.pos == pj.pos) coincident(pi, pj);
      PairAssignment pa{i, j, false, levels};
      for (int l = 3; l <= levels; ++l) {
        const BoxId bi = box_of(pi.pos, l, spec), bj = box_of(pj.pos, l, spec);
        if (!same_or_touching(bi, bj)) {
          pa.far = true;
          pa.level = l;
          break;
        }
      }
      const double exact = pi.charge * coulomb(pi.pos, pj.pos, spec.d()) * pj.charge;
      if (pa.far) {
        out.far_exact += exact;
        out.far_box_box += pi.charge * pj.charge *
                           box_pair_kernel(box_of(pi.pos, pa.level, spec),
                                           box_of(pj.pos, pa.level, spec), spec);
      } else {
        out.near += exact;
      }
      out.pairs.push_back(pa);
    }
  }
  return out;
}

double reference_fmm_potential(std::span<const ParticleRecord> particles, const GridSpec& spec,
                               int levels, int order) {
  if (levels < 1 || levels > spec.finest_level()) fail(ErrorKind::Domain, "tree depth out of range");
  if (order < 0) fail(ErrorKind::Domain, "order must be non-negative");
  const int d = spec.d();
  const bool adaptive = levels == spec.finest_level();
  double v = 0.0;

  auto occupancy = [&](int level) {
    std::map<MortonKey, std::vector<std::size_t>> boxes;
    for (std::size_t i = 0; i < particles.size(); ++i) {
      boxes[box_key(box_of(particles[i].pos, level, spec))].push_back(i);
    }
    return boxes;
  };
  auto charge_of = [&](const std::vector<std::size_t>& members) {
    double q = 0.0;
    for (std::size_t i : members) q += particles[i].charge;
    return q;
  };

  for (int l = 3; l <= levels; ++l) {
    const auto boxes = occupancy(l);
    const double hw = box_width(l, spec) / 2.0;
    std::map<MortonKey, MultipoleExpansion> mult;
    if (order > 0) {
      for (const auto& [key, members] : boxes) {
        std::vector<Vec3> pos;
        std::vector<double> q;
        for (std::size_t i : members) {
          pos.push_back(to_vec(particles[i].pos));
          q.push_back(particles[i].charge);
        }
        mult.emplace(key, p2m(pos, q, box_center(box_from_key(d, l, key), spec), order, hw));
      }
    }
    for (const auto& [kb, mb] : boxes) {
      const BoxId b = box_from_key(d, l, kb);
      std::vector<BoxId> partners = interaction_list(b);
      if (adaptive && l == levels) {
        const auto nn = nearest_neighbors(b);
        partners.insert(partners.end(), nn.begin(), nn.end());
      }
      for (const BoxId& a : partners) {
        const MortonKey ka = box_key(a);
        if (ka <= kb) continue;
        const auto it = boxes.find(ka);
        if (it == boxes.end()) continue;
        if (order == 0 || !in_interaction_list(a, b)) {
          v += charge_of(mb) * box_pair_kernel(a, b, spec) * charge_of(it->second);
        } else {
          const auto& ma = mult.at(ka);
          v += contract(m2l(ma, box_center(b, spec), hw), mult.at(kb));
        }
      }
    }
  }

  if (!adaptive) {
    const auto leaves = occupancy(levels);
    for (const auto& [kb, mb] : leaves) {
      for (std::size_t x = 0; x < mb.size(); ++x) {
        for (std::size_t y = x + 1; y < mb.size(); ++y) {
          const auto& p = particles[mb[x]];
          const auto& q = particles[mb[y]];
          if (p.pos == q.pos) coincident(p, q);
          v += p.charge * coulomb(p.pos, q.pos, d) * q.charge;
        }
      }
      for (const BoxId& a : nearest_neighbors(box_from_key(d, levels, kb))) {
        if (box_key(a) <= kb) continue;
        const auto it = leaves.find(box_key(a));
        if (it == leaves.end()) continue;
        for (std::size_t x : mb) {
          for (std::size_t y : it->second) {
            v += particles[x].charge * coulomb(particles[x].pos, particles[y].pos, d) *
                 particles[y].charge;
          }
        }
      }
    }
  }
  return v;
}

void PairCensus::add_box_pair(int level, MortonKey a, MortonKey b) {
  box_pairs_.push_back({level, a, b});
}

void PairCensus::add_particle_pair(std::int64_t id_a, std::int64_t id_b) {
  particle_pairs_.emplace_back(id_a, id_b);
}

PairCensus::Audit PairCensus::audit(std::span<const ParticleRecord> particles,
                                    const GridSpec& spec) const {
  const std::size_t n = particles.size();
  std::unordered_map<std::int64_t, std::size_t> by_id;
  for (std::size_t i = 0; i < n; ++i) {
    if (!by_id.emplace(particles[i].id, i).second) fail(ErrorKind::Input, "duplicate particle id");
  }
  std::vector<std::uint32_t> hits(n * n, 0);
  auto hit = [&](std::size_t i, std::size_t j) {
    if (i == j) {
      ++hits[i * n + i];  // self pairs are always an error
      return;
    }
    ++hits[std::min(i, j) * n + std::max(i, j)];
  };

  std::map<int, std::map<MortonKey, std::vector<std::size_t>>> members;
  for (const auto& bp : box_pairs_) {
    auto [it, fresh] = members.try_emplace(bp.level);
    if (fresh) {
      for (std::size_t i = 0; i < n; ++i) {
        it->second[box_key(box_of(particles[i].pos, bp.level, spec))].push_back(i);
      }
    }
    const auto& lv = it->second;
    const auto ia = lv.find(bp.a), ib = lv.find(bp.b);
    if (ia == lv.end() || ib == lv.end()) continue;
    if (bp.a == bp.b) {
      for (std::size_t x : ia->second) hit(x, x);
      continue;
    }
    for (std::size_t x : ia->second) {
      for (std::size_t y : ib->second) hit(x, y);
    }
  }
  for (const auto& [a, b] : particle_pairs_) {
    const auto ia = by_id.find(a), ib = by_id.find(b);
    if (ia == by_id.end() || ib == by_id.end()) fail(ErrorKind::Input, "census names an unknown particle");
    hit(ia->second, ib->second);
  }

  Audit out;
  out.expected_pairs = n * (n - 1) / 2;
  out.box_pair_events = box_pairs_.size();
  out.particle_pair_events = particle_pairs_.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (hits[i * n + i] != 0) out.duplicated += hits[i * n + i];
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto h = hits[i * n + j];
      if (h == 0) ++out.missing;
      else if (h == 1) ++out.exactly_once;
      else ++out.duplicated;
    }
  }
  return out;
}

}  // namespace qfmm
