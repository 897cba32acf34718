#include "qfmm/fmm_classical.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "qfmm/error.hpp"
#include "qfmm/expansions.hpp"
#include "qfmm/oracle.hpp"

namespace qfmm {

std::span<const ParticleRecord> UniformTree::leaf(MortonKey key) const {
  if (key >= leaf_count()) fail(ErrorKind::Domain, "leaf key outside the tree");
  return std::span<const ParticleRecord>(particles).subspan(leaf_begin[key],
                                                            leaf_begin[key + 1] - leaf_begin[key]);
}

UniformTree build_uniform_tree(std::span<const ParticleRecord> particles, const GridSpec& spec,
                               int levels, int capacity) {
  if (levels < 1 || levels > spec.finest_level()) fail(ErrorKind::Domain, "tree depth out of range");
  if (capacity < 1) fail(ErrorKind::Domain, "leaf capacity must be positive");
  const int d = spec.d();
  UniformTree t;
  t.spec = spec;
  t.levels = levels;
  t.capacity = capacity;

  std::vector<MortonKey> keys(particles.size());
  for (std::size_t i = 0; i < particles.size(); ++i) keys[i] = morton_encode(particles[i].pos, spec);
  t.input_index.resize(particles.size());
  std::iota(t.input_index.begin(), t.input_index.end(), 0);
  std::sort(t.input_index.begin(), t.input_index.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : particles[a].id < particles[b].id;
  });
  for (std::size_t i : t.input_index) t.particles.push_back(particles[i]);

  const std::uint64_t n_leaves = boxes_at_level(d, levels);
  const int drop = d * (spec.n_bits() - (levels - 1));
  t.leaf_begin.assign(n_leaves + 1, 0);
  for (std::size_t i : t.input_index) ++t.leaf_begin[(keys[i] >> drop) + 1];
  for (std::uint64_t k = 0; k < n_leaves; ++k) {
    const std::size_t count = t.leaf_begin[k + 1];
    if (count > static_cast<std::size_t>(capacity)) {
      const BoxId b = box_from_key(d, levels, k);
      std::ostringstream os;
      os << "leaf box (" << b.coords[0] << "," << b.coords[1] << "," << b.coords[2] << ") at level "
         << levels << " holds " << count << " particles, capacity is " << capacity;
      fail(ErrorKind::Capacity, os.str());
    }
    t.leaf_begin[k + 1] += t.leaf_begin[k];
  }

  t.charge.assign(levels + 1, {});
  if (levels >= 3) {
    auto& leafq = t.charge[levels];
    leafq.assign(n_leaves, 0.0);
    for (std::uint64_t k = 0; k < n_leaves; ++k) {
      for (std::size_t i = t.leaf_begin[k]; i < t.leaf_begin[k + 1]; ++i) leafq[k] += t.particles[i].charge;
    }
    for (int l = levels - 1; l >= 3; --l) {
      auto& q = t.charge[l];
      q.assign(boxes_at_level(d, l), 0.0);
      const auto& fine = t.charge[l + 1];
      // Children of box k are the 2^d consecutive keys starting at k << d.
      for (std::size_t k = 0; k < q.size(); ++k) {
        for (std::size_t c = 0; c < (std::size_t{1} << d); ++c) q[k] += fine[(k << d) + c];
      }
    }
  }
  return t;
}

double near_field_direct(const UniformTree& tree, MortonKey key, PairCensus* census) {
  const int d = tree.spec.d();
  const auto mine = tree.leaf(key);
  const BoxId b = box_from_key(d, tree.levels, key);
  const auto nn = nearest_neighbors(b);
  double vb = 0.0;
  for (std::size_t i = 0; i < mine.size(); ++i) {
    for (std::size_t j = i + 1; j < mine.size(); ++j) {
      if (mine[i].pos == mine[j].pos) fail(ErrorKind::Singularity, "two particles share a grid point");
      vb += mine[i].charge * coulomb(mine[i].pos, mine[j].pos, d) * mine[j].charge;
      if (census) census->add_particle_pair(mine[i].id, mine[j].id);
    }
    for (const BoxId& n : nn) {
      const MortonKey kn = box_key(n);
      if (kn <= key) continue;
      for (const ParticleRecord& pj : tree.leaf(kn)) {
        vb += mine[i].charge * coulomb(mine[i].pos, pj.pos, d) * pj.charge;
        if (census) census->add_particle_pair(mine[i].id, pj.id);
      }
    }
  }
  return vb;
}

MonopoleResult fmm_monopole(const UniformTree& tree, PairCensus* census) {
  const int d = tree.spec.d();
  MonopoleResult out;
  out.far_by_level.assign(tree.levels + 1, 0.0);
  double v = 0.0;
  for (int l = 3; l <= tree.levels; ++l) {
    const auto& q = tree.charge[l];
    for (MortonKey kb = 0; kb < q.size(); ++kb) {
      const BoxId b = box_from_key(d, l, kb);
      double vb = 0.0;
      for (const BoxId& a : interaction_list(b)) {
        const MortonKey ka = box_key(a);
        if (ka <= kb) continue;
        vb += q[kb] * box_pair_kernel(a, b, tree.spec) * q[ka];
        if (census) census->add_box_pair(l, kb, ka);
      }
      v += vb;
      out.far_by_level[l] += vb;
      out.far += vb;
    }
  }
  for (MortonKey kb = 0; kb < tree.leaf_count(); ++kb) {
    const double vb = near_field_direct(tree, kb, census);
    v += vb;
    out.near += vb;
  }
  out.total = v;
  return out;
}

MonopoleResult fmm_monopole(std::span<const ParticleRecord> particles, const GridSpec& spec,
                            int levels, int capacity, PairCensus* census) {
  return fmm_monopole(build_uniform_tree(particles, spec, levels, capacity), census);
}

OrderPResult fmm_order_p(const UniformTree& tree, int order) {
  if (order < 0) fail(ErrorKind::Domain, "order must be non-negative");
  const int d = tree.spec.d();
  const int L = tree.levels;
  const std::size_t n = tree.particles.size();
  std::vector<double> far(n, 0.0), near(n, 0.0);

  if (L >= 3) {
    // Multipoles of occupied boxes, leaves first then upward.
    std::vector<std::unordered_map<MortonKey, MultipoleExpansion>> mult(L + 1);
    const double leaf_hw = box_width(L, tree.spec) / 2.0;
    for (MortonKey k = 0; k < tree.leaf_count(); ++k) {
      const auto ps = tree.leaf(k);
      if (ps.empty()) continue;
      std::vector<Vec3> pos;
      std::vector<double> q;
      for (const auto& p : ps) {
        pos.push_back(to_vec(p.pos));
        q.push_back(p.charge);
      }
      mult[L].emplace(k, p2m(pos, q, box_center(box_from_key(d, L, k), tree.spec), order, leaf_hw));
    }
    for (int l = L - 1; l >= 3; --l) {
      const double hw = box_width(l, tree.spec) / 2.0;
      std::map<MortonKey, std::vector<MortonKey>> kids;
      for (const auto& [k, m] : mult[l + 1]) kids[k >> d].push_back(k);
      for (auto& [pk, ks] : kids) {
        std::sort(ks.begin(), ks.end());
        MultipoleExpansion acc(order, box_center(box_from_key(d, l, pk), tree.spec), hw);
        for (MortonKey ck : ks) accumulate(acc, m2m(mult[l + 1].at(ck), acc.center, hw));
        mult[l].emplace(pk, std::move(acc));
      }
    }

    // Locals for occupied boxes: inherited from the parent plus M2L.
    std::vector<std::unordered_map<MortonKey, LocalExpansion>> local(L + 1);
    for (int l = 3; l <= L; ++l) {
      const double hw = box_width(l, tree.spec) / 2.0;
      std::vector<MortonKey> targets;
      for (const auto& [k, m] : mult[l]) targets.push_back(k);
      std::sort(targets.begin(), targets.end());
      for (MortonKey kb : targets) {
        const BoxId b = box_from_key(d, l, kb);
        const Vec3 c = box_center(b, tree.spec);
        LocalExpansion acc(order, c, hw);
        if (l > 3) acc = l2l(local[l - 1].at(kb >> d), c, hw);
        for (const BoxId& a : interaction_list(b)) {
          const auto it = mult[l].find(box_key(a));
          if (it == mult[l].end()) continue;
          accumulate(acc, m2l(it->second, c, hw));
        }
        local[l].emplace(kb, std::move(acc));
      }
    }
    for (MortonKey k = 0; k < tree.leaf_count(); ++k) {
      for (std::size_t i = tree.leaf_begin[k]; i < tree.leaf_begin[k + 1]; ++i) {
        far[i] = l2p(local[L].at(k), to_vec(tree.particles[i].pos));
      }
    }
  }

  for (MortonKey k = 0; k < tree.leaf_count(); ++k) {
    const BoxId b = box_from_key(d, L, k);
    auto others = nearest_neighbors(b);
    others.push_back(b);
    for (std::size_t i = tree.leaf_begin[k]; i < tree.leaf_begin[k + 1]; ++i) {
      const ParticleRecord& pi = tree.particles[i];
      for (const BoxId& o : others) {
        for (const ParticleRecord& pj : tree.leaf(box_key(o))) {
          if (&pj == &pi) continue;
          if (pj.pos == pi.pos) fail(ErrorKind::Singularity, "two particles share a grid point");
          near[i] += coulomb(pi.pos, pj.pos, d) * pj.charge;
        }
      }
    }
  }

  OrderPResult out;
  out.per_particle.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double q = tree.particles[i].charge;
    out.per_particle[tree.input_index[i]] = 0.5 * (far[i] + near[i]);
    out.far += 0.5 * q * far[i];
    out.near += 0.5 * q * near[i];
  }
  out.total = out.far + out.near;
  return out;
}

OrderPResult fmm_order_p(std::span<const ParticleRecord> particles, const GridSpec& spec, int levels,
                         int capacity, int order) {
  return fmm_order_p(build_uniform_tree(particles, spec, levels, capacity), order);
}

}  // namespace qfmm
