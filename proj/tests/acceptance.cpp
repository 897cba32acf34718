#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "qfmm/error.hpp"
#include "qfmm/fmm_classical.hpp"
#include "qfmm/fmm_oblivious.hpp"
#include "qfmm/grid_tree.hpp"
#include "qfmm/oracle.hpp"
#include "qfmm/resource_model.hpp"
#include "support.hpp"

using namespace qfmm;
using testing_support::random_particles;
using testing_support::rel_err;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Random particles with at most c per leaf box at level L.
std::vector<ParticleRecord> capped_particles(const GridSpec& s, std::size_t n, int L, int c,
                                             std::uint64_t seed) {
  std::vector<ParticleRecord> out;
  std::map<MortonKey, int> fill;
  for (const auto& p : random_particles(s, 4 * n + 64, seed, true)) {
    if (out.size() == n) break;
    auto& f = fill[box_key(box_of(p.pos, L, s))];
    if (f == c) continue;
    ++f;
    out.push_back({p.pos, p.charge, static_cast<std::int64_t>(out.size())});
  }
  return out;
}

Outcome oracle_equivalence() {
  const GridSpec s(3, 5);
  const int sizes[] = {16, 64, 256, 512};
  double worst = 0.0, slowest = 0.0;
  bool restored = true;
  for (int i = 0; i < 50; ++i) {
    const int eta = sizes[i % 4];
    const int order = i % 5 == 4 ? 2 : 0;
    const auto ps = random_particles(s, eta, 1000 + i, true);
    const auto t0 = std::chrono::steady_clock::now();
    Instruments ins;
    const auto r = compute_potential(ps, s, {order, -1}, ins);
    const double ref = reference_fmm_potential(ps, s, s.finest_level(), order);
    slowest = std::max(slowest,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    worst = std::max(worst, rel_err(r.total, ref));
    restored = restored && r.scratch_restored;
  }
  return {worst <= 1e-12 && restored && slowest < 120.0,
          fmt("50 instances, max rel err %.2e, slowest %.2fs, scratch restored %s", worst, slowest,
              restored ? "yes" : "no")};
}

Outcome approximation_quality() {
  const GridSpec s(3, 5);
  const int eta = 256, L = 3, instances = 10, pmax = 11;
  std::vector<double> err(pmax + 1, 0.0);
  double total10 = 0.0;
  for (int t = 0; t < instances; ++t) {
    const auto ps = random_particles(s, eta, 500 + t);
    const auto ex = brute_force_potential(ps, 3, Summation::Compensated);
    for (int p = 2; p <= pmax; ++p) {
      const auto r = fmm_order_p(ps, s, L, eta, p);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const double e = r.per_particle[i] - ex.per_particle[i];
        num += e * e;
        den += ex.per_particle[i] * ex.per_particle[i];
      }
      err[p] += std::sqrt(num / den) / instances;
      if (p == 10) total10 = std::max(total10, rel_err(r.total, ex.total));
    }
  }
  double worst_ratio = 0.0;
  for (int p = 2; p < pmax; ++p) worst_ratio = std::max(worst_ratio, err[p + 1] / err[p]);
  return {worst_ratio <= 0.75 && total10 <= 1e-5,
          fmt("max error(P+1)/error(P) over P=2..10 is %.3f, P=10 rel err %.2e", worst_ratio, total10)};
}

Outcome lemma1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t counterexamples = 0;
  bool within = true;
  for (int d = 1; d <= 3; ++d) {
    for (int n = 2; n <= 4; ++n) {
      const auto rep = verify_lemma1(GridSpec(d, n));
      counterexamples += rep.counterexamples.size();
      within = within && rep.max_separation <= rep.bound;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {counterexamples == 0 && within && secs <= 60.0,
          fmt("%zu counterexamples, separations within 4^d-1: %s, %.2fs", counterexamples,
              within ? "yes" : "no", secs)};
}

Outcome scaling() {
  const GridSpec s(3, 6);
  std::vector<double> etas, ops, pairs;
  for (int eta = 64; eta <= 4096; eta *= 2) {
    const auto ps = random_particles(s, eta, 77);
    Instruments ins;
    compute_potential(ps, s, {}, ins);
    const auto t = ins.counters.totals();
    etas.push_back(eta);
    ops.push_back(static_cast<double>(t.comparators + t.controlled_swaps));
    pairs.push_back(static_cast<double>(brute_force_potential(ps, 3).pair_count));
  }
  const auto fo = fit_power_law(etas, ops);
  const auto fb = fit_power_law(etas, pairs);
  return {fo.slope >= 1.0 && fo.slope <= 1.35 && std::abs(fb.slope - 2.0) <= 0.1,
          fmt("comparator+swap slope %.3f, brute-force slope %.3f", fo.slope, fb.slope)};
}

Outcome obliviousness() {
  bool same = true;
  std::size_t entries = 0;
  auto compare = [&](const AccessTrace& a, const AccessTrace& b) {
    for (std::size_t p = 0; p < kPhaseCount; ++p) {
      same = same && a.bytes(static_cast<Phase>(p)) == b.bytes(static_cast<Phase>(p));
    }
    same = same && a.bytes() == b.bytes();
    entries += a.size();
  };
  for (int order : {0, 2}) {
    const GridSpec s(3, 4);
    AccessTrace ta, tb;
    Instruments ia, ib;
    ia.trace = &ta;
    ib.trace = &tb;
    compute_potential(random_particles(s, 48, 1, false), s, {order, -1}, ia);
    compute_potential(random_particles(s, 48, 2, true), s, {order, -1}, ib);
    compare(ta, tb);
  }
  {
    const GridSpec s(3, 4);
    AccessTrace ta, tb;
    Instruments ia, ib;
    ia.trace = &ta;
    ib.trace = &tb;
    uniform_potential(capped_particles(s, 40, 3, 3, 5), s, 3, 3, ia);
    uniform_potential(capped_particles(s, 40, 3, 3, 6), s, 3, 3, ib);
    compare(ta, tb);
  }
  return {same, fmt("adaptive (P=0,2) and uniform traces identical per phase: %s, %zu entries",
                    same ? "yes" : "no", entries)};
}

Outcome pair_census() {
  bool exact = true;
  std::size_t runs = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const GridSpec s(3, 4);
    const auto ps = capped_particles(s, 150 + 10 * seed, 4, 3, seed);
    {
      PairCensus c;
      fmm_monopole(ps, s, 4, 3, &c);
      exact = exact && c.audit(ps, s).exact();
    }
    {
      PairCensus c;
      Instruments ins;
      ins.census = &c;
      uniform_potential(ps, s, 4, 3, ins);
      exact = exact && c.audit(ps, s).exact();
    }
    for (int order : {0, 2}) {
      PairCensus c;
      Instruments ins;
      ins.census = &c;
      compute_potential(ps, s, {order, -1}, ins);
      exact = exact && c.audit(ps, s).exact();
    }
    runs += 4;
  }
  return {exact, fmt("%zu audited runs (classical, uniform, adaptive P=0/2), all exact: %s", runs,
                     exact ? "yes" : "no")};
}

Outcome geometry() {
  const BoxId interior = make_box(3, 4, {3, 4, 3});
  const std::size_t n_interior = interaction_list(interior).size();
  bool symmetric = true;
  std::size_t max_nn = 0;
  for (int l = 3; l <= 6; ++l) {
    for (MortonKey k = 0; k < boxes_at_level(3, l); ++k) {
      const BoxId b = box_from_key(3, l, k);
      max_nn = std::max(max_nn, nearest_neighbors(b).size());
      for (const BoxId& a : interaction_list(b)) {
        symmetric = symmetric && in_interaction_list(b, a);
      }
    }
  }
  return {n_interior == 189 && symmetric && max_nn <= 26,
          fmt("interior |I| = %zu, symmetric: %s, max |NN| = %zu", n_interior,
              symmetric ? "yes" : "no", max_nn)};
}

Outcome resource_model() {
  const auto linear = [](const SimulationParams& p) { return p.eta; };
  auto sweep = [&](bool vary_eta, double fixed, double lo, double hi) {
    std::vector<double> x, y;
    for (double v = lo; v <= hi * 1.0001; v *= 10) {
      SimulationParams p;
      p.eta = vary_eta ? v : fixed;
      p.N = vary_eta ? fixed : v;
      p.omega = p.eta;
      p.k = std::numeric_limits<double>::infinity();
      x.push_back(v);
      y.push_back(total_complexity(p, linear).total);
    }
    return fit_power_law(x, y).slope;
  };
  const double s_eta_nu = sweep(true, 1e6, 1e4, 1e8);
  const double s_n_nu = sweep(false, 1e8, 1e3, 1e9);
  const double s_eta_tau = sweep(true, 1e24, 1, 1e4);
  const double s_n_tau = sweep(false, 10, 1e9, 1e18);
  const bool slopes = std::abs(s_eta_nu - 4.0 / 3) <= 0.05 && std::abs(s_n_nu - 1.0 / 3) <= 0.05 &&
                      std::abs(s_eta_tau - 1.0 / 3) <= 0.05 && std::abs(s_n_tau - 2.0 / 3) <= 0.05;

  bool cheapest_below = true, not_cheapest_at7 = true;
  for (double eta : {10.0, 100.0, 1000.0}) {
    for (double e = 1.5; e < 6.0; e += 0.5) {
      SimulationParams p;
      p.eta = eta;
      p.N = std::pow(eta, e);
      const auto t = table1_compare(p);
      cheapest_below = cheapest_below && t.below_crossover && t.this_work_cheapest;
    }
    SimulationParams p;
    p.eta = eta;
    p.N = std::pow(eta, 7.0);
    not_cheapest_at7 = not_cheapest_at7 && !table1_compare(p).this_work_cheapest;
  }
  return {slopes && cheapest_below && not_cheapest_at7,
          fmt("slopes %.3f %.3f %.3f %.3f (want 4/3 1/3 1/3 2/3); cheapest for N<eta^6: %s; "
              "not cheapest at N=eta^7: %s",
              s_eta_nu, s_n_nu, s_eta_tau, s_n_tau, cheapest_below ? "yes" : "no",
              not_cheapest_at7 ? "yes" : "no")};
}

Outcome register_layout() {
  const GridSpec s(1, 4);
  std::vector<ParticleRecord> ps;
  for (Coord x : {13, 2, 7, 5}) ps.push_back({{x}, -1.0, static_cast<std::int64_t>(ps.size())});
  auto regs = make_uniform_registers(ps, s, 3, 3);
  Instruments ins;
  std::vector<RegisterArray> rows;
  distribute_to_boxes(regs, s, 3, 3, ins, &rows);
  const std::vector<std::vector<long>> expect{
      {2, 5, 7, 13, -1, -1, -1, -1, -1, -1, -1, -1},
      {2, 5, 7, -1, -1, -1, 13, -1, -1, -1, -1, -1},
      {2, -1, -1, 5, 7, -1, -1, -1, -1, 13, -1, -1},
  };
  bool match = rows.size() == expect.size();
  for (std::size_t r = 0; match && r < rows.size(); ++r) {
    for (std::size_t j = 0; j < rows[r].size(); ++j) {
      const long got = rows[r][j].occupied ? static_cast<long>(rows[r][j].pos) : -1;
      match = match && got == expect[r][j];
    }
  }
  return {match, fmt("%zu register rows compared", rows.size())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"approximation quality", approximation_quality},
      {"shifted ordering exhaustive", lemma1},
      {"scaling", scaling},
      {"obliviousness", obliviousness},
      {"pair census", pair_census},
      {"interaction-list geometry", geometry},
      {"resource model", resource_model},
      {"distribution register layout", register_layout},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
