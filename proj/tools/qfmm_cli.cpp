#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "particle_file.hpp"
#include "qfmm/error.hpp"
#include "qfmm/fmm_classical.hpp"
#include "qfmm/fmm_oblivious.hpp"
#include "qfmm/oracle.hpp"
#include "qfmm/resource_model.hpp"

using namespace qfmm;
using namespace qfmm::cli;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kOther = 1, kInput = 2, kPrecondition = 3, kTolerance = 4 };

struct ToleranceFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorKind k) { return k == ErrorKind::Input ? kInput : kPrecondition; }

// --- Backends ----------------------------------------------------------------

const std::vector<std::string> kBackends{"oracle", "classical-monopole", "classical-orderP", "oblivious"};

struct RunConfig {
  int levels = 0;    // 0 picks a depth from the particle count
  int capacity = 0;  // 0 uses the fullest leaf
  int order = 0;
  int K = -1;
  std::string mode = "adaptive";  // oblivious: adaptive | uniform
  bool compensated = true;
};

struct Resolved {
  int levels = 0;
  int capacity = 0;
};

Resolved resolve_tree(const ParticleFile& f, const RunConfig& cfg) {
  const GridSpec spec = f.spec();
  const int d = f.d;
  Resolved r;
  r.levels = cfg.levels;
  if (r.levels == 0) {
    r.levels = std::min(3, spec.finest_level());
    while (r.levels < spec.finest_level() &&
           static_cast<double>(boxes_at_level(d, r.levels)) * 4.0 < static_cast<double>(f.particles.size())) {
      ++r.levels;
    }
  }
  if (r.levels < 1 || r.levels > spec.finest_level()) fail(ErrorKind::Input, "levels out of range for this grid");
  r.capacity = cfg.capacity;
  if (r.capacity == 0) {
    std::map<MortonKey, int> occ;
    int most = 1;
    for (const auto& p : f.particles) most = std::max(most, ++occ[box_key(box_of(p.pos, r.levels, spec))]);
    r.capacity = most;
  }
  return r;
}

json counters_json(const ResourceCounters& c) {
  auto one = [](const OpCounts& o) {
    return json{{"comparators", o.comparators}, {"controlled_swaps", o.controlled_swaps},
                {"additions", o.additions},     {"multiplications", o.multiplications},
                {"table_lookups", o.table_lookups}, {"tests", o.tests}, {"total", o.total()}};
  };
  const auto rep = snapshot_counters(c);
  json by_phase = json::object();
  for (std::size_t p = 0; p < kPhaseCount; ++p) by_phase[to_string(static_cast<Phase>(p))] = one(rep.by_phase[p]);
  return {{"totals", one(rep.totals)}, {"by_phase", by_phase}, {"dominant", to_string(rep.dominant)}};
}

struct BackendResult {
  std::string backend;
  double V = 0.0;
  std::optional<double> reference;  // dictionary FMM with the same split (oblivious only)
  json details = json::object();
  double seconds = 0.0;
};

BackendResult run_backend(const std::string& name, const ParticleFile& f, const RunConfig& cfg,
                          AccessTrace* trace = nullptr, PairCensus* census = nullptr) {
  const GridSpec spec = f.spec();
  const auto t0 = std::chrono::steady_clock::now();
  BackendResult r;
  r.backend = name;
  if (name == "oracle") {
    const auto res = brute_force_potential(f.particles, f.d,
                                           cfg.compensated ? Summation::Compensated : Summation::Plain);
    r.V = res.total;
    r.details["pairs"] = res.pair_count;
  } else if (name == "classical-monopole") {
    const auto t = resolve_tree(f, cfg);
    const auto res = fmm_monopole(f.particles, spec, t.levels, t.capacity, census);
    r.V = res.total;
    r.details = {{"levels", t.levels}, {"capacity", t.capacity}, {"far", res.far}, {"near", res.near}};
  } else if (name == "classical-orderP") {
    const auto t = resolve_tree(f, cfg);
    const auto res = fmm_order_p(f.particles, spec, t.levels, t.capacity, cfg.order);
    r.V = res.total;
    r.details = {{"levels", t.levels}, {"capacity", t.capacity}, {"order", cfg.order},
                 {"far", res.far}, {"near", res.near}};
  } else if (name == "oblivious") {
    Instruments ins;
    ins.trace = trace;
    ins.census = census;
    ObliviousResult res;
    if (cfg.mode == "uniform") {
      const auto t = resolve_tree(f, cfg);
      res = uniform_potential(f.particles, spec, t.levels, t.capacity, ins);
      r.details = {{"mode", "uniform"}, {"levels", t.levels}, {"capacity", t.capacity}};
      r.reference = fmm_monopole(f.particles, spec, t.levels, t.capacity).total;
    } else if (cfg.mode == "adaptive") {
      res = compute_potential(f.particles, spec, {cfg.order, cfg.K}, ins);
      r.details = {{"mode", "adaptive"}, {"order", cfg.order},
                   {"K", cfg.K < 0 ? (1 << (2 * f.d)) - 1 : cfg.K}};
      r.reference = reference_fmm_potential(f.particles, spec, spec.finest_level(), cfg.order);
    } else {
      fail(ErrorKind::Input, "mode must be adaptive or uniform");
    }
    r.V = res.total;
    r.details["far"] = res.far;
    r.details["near"] = res.near;
    r.details["scratch_restored"] = res.scratch_restored;
    r.details["counters"] = counters_json(ins.counters);
  } else {
    fail(ErrorKind::Input, "unknown backend '" + name + "'");
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

double rel_diff(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

json options_json(const RunConfig& cfg) {
  return {{"levels", cfg.levels}, {"capacity", cfg.capacity}, {"order", cfg.order}, {"K", cfg.K},
          {"mode", cfg.mode}, {"compensated_oracle", cfg.compensated}};
}

json config_json(const std::string& input, const ParticleFile& f) {
  json c{{"input", input}, {"d", f.d}, {"n_bits", f.n_bits}, {"count", f.particles.size()},
         {"charges", f.charges}};
  if (!f.distribution.empty()) c["distribution"] = f.distribution;
  c["seed"] = f.seed ? json(*f.seed) : json(nullptr);
  return c;
}

void emit(const json& j, bool as_json, const std::function<void()>& text) {
  if (as_json) {
    std::cout << j.dump(2) << '\n';
  } else {
    text();
  }
}

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) fail(ErrorKind::Input, "cannot write '" + path + "'");
  return file;
}

int worker_count() {
  if (const char* env = std::getenv("QFMM_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// --- Commands ------------------------------------------------------------------

int cmd_gen(const GenOptions& opt, const std::string& out, bool as_json) {
  const auto f = generate(opt);
  std::ofstream file;
  write_particles(open_output(out, file), f);
  if (as_json && !out.empty() && out != "-") {
    std::cout << json{{"output", out}, {"count", f.particles.size()}, {"distribution", f.distribution},
                      {"seed", opt.seed}}.dump(2) << '\n';
  }
  return kOk;
}

int cmd_run(const std::string& input, const std::string& backend, const RunConfig& cfg,
            bool with_oracle, const std::string& trace_path, bool timing, bool as_json) {
  const auto f = read_particles(input);
  AccessTrace trace;
  const auto r = run_backend(backend, f, cfg, trace_path.empty() ? nullptr : &trace);
  json rep{{"format", "qfmm-report"}, {"version", 1}, {"config", config_json(input, f)}};
  rep["config"]["backend"] = backend;
  rep["config"]["options"] = options_json(cfg);
  rep["V"] = r.V;
  rep["details"] = r.details;
  if (r.reference) {
    rep["reference_fmm_V"] = *r.reference;
    rep["reference_rel_error"] = rel_diff(r.V, *r.reference);
  }
  std::optional<double> oracle;
  if (with_oracle) {
    oracle = backend == "oracle" ? r.V : run_backend("oracle", f, cfg).V;
    rep["oracle_V"] = *oracle;
    rep["abs_error"] = std::abs(r.V - *oracle);
    rep["rel_error"] = rel_diff(r.V, *oracle);
  }
  if (timing) rep["wall_seconds"] = r.seconds;
  if (!trace_path.empty()) {
    std::ofstream tf(trace_path);
    if (!tf) fail(ErrorKind::Input, "cannot write '" + trace_path + "'");
    trace.write_csv(tf);
    rep["trace"] = {{"path", trace_path}, {"entries", trace.size()}};
  }
  emit(rep, as_json, [&] {
    std::cout << std::setprecision(17) << "backend " << backend << "\nV " << r.V << '\n';
    if (r.reference) std::cout << "reference FMM V " << *r.reference << '\n';
    if (oracle) {
      std::cout << "oracle V " << *oracle << "\nrelative error " << std::setprecision(3)
                << rel_diff(r.V, *oracle) << '\n';
    }
    if (r.details.contains("counters")) {
      const auto& t = r.details["counters"]["totals"];
      std::cout << "comparators " << t["comparators"] << ", controlled swaps " << t["controlled_swaps"]
                << ", multiplications " << t["multiplications"] << '\n';
    }
    if (timing) std::cout << "wall time " << std::setprecision(3) << r.seconds << " s\n";
  });
  return kOk;
}

struct CompareOptions {
  std::vector<std::string> backends = kBackends;
  double rtol = 5e-2;
  double atol = 1e-12;
  double exact_rtol = 1e-12;
  int p_sweep = -1;
};

int cmd_compare(const std::string& input, const RunConfig& cfg, const CompareOptions& opt, bool as_json) {
  const auto f = read_particles(input);
  std::map<std::string, BackendResult> results;
  for (const auto& b : opt.backends) results[b] = run_backend(b, f, cfg);
  const double oracle = results.count("oracle") ? results["oracle"].V : run_backend("oracle", f, cfg).V;

  struct Cell {
    std::string name;
    double value;
    double limit;
    bool pass;
  };
  std::vector<Cell> cells;
  auto within = [](double a, double b, double rtol, double atol) {
    return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b)) + atol;
  };
  for (const auto& b : opt.backends) {
    if (b == "oracle") continue;
    const double v = results[b].V;
    cells.push_back({b + " vs oracle", rel_diff(v, oracle), opt.rtol, within(v, oracle, opt.rtol, opt.atol)});
    if (results[b].reference) {
      const double ref = *results[b].reference;
      cells.push_back({b + " vs reference FMM", rel_diff(v, ref), opt.exact_rtol,
                       within(v, ref, opt.exact_rtol, opt.atol)});
    }
  }
  if (results.count("classical-orderP") && results.count("classical-monopole") && cfg.order == 0) {
    const double a = results["classical-orderP"].V, b = results["classical-monopole"].V;
    cells.push_back({"classical-orderP vs classical-monopole", rel_diff(a, b), opt.exact_rtol,
                     within(a, b, 1e-10, opt.atol)});
  }

  json rep{{"format", "qfmm-compare"}, {"version", 1}, {"config", config_json(input, f)}};
  rep["config"]["options"] = options_json(cfg);
  rep["oracle_V"] = oracle;
  json vals = json::object();
  for (const auto& b : opt.backends) vals[b] = results[b].V;
  rep["V"] = vals;
  json matrix = json::array();
  bool ok = true;
  for (const auto& c : cells) {
    matrix.push_back({{"check", c.name}, {"rel_error", c.value}, {"tolerance", c.limit}, {"pass", c.pass}});
    ok = ok && c.pass;
  }
  rep["checks"] = matrix;
  json sweep = json::array();
  if (opt.p_sweep >= 0) {
    RunConfig c = cfg;
    for (int p = 0; p <= opt.p_sweep; ++p) {
      c.order = p;
      const double v = run_backend("classical-orderP", f, c).V;
      sweep.push_back({{"P", p}, {"V", v}, {"rel_error", rel_diff(v, oracle)}});
    }
    rep["p_sweep"] = sweep;
  }
  rep["pass"] = ok;
  emit(rep, as_json, [&] {
    std::cout << std::setprecision(17) << "oracle V " << oracle << '\n';
    for (const auto& b : opt.backends) std::cout << "  " << std::left << std::setw(20) << b << ' ' << results[b].V << '\n';
    std::cout << std::setprecision(3);
    for (const auto& c : cells) {
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": rel error " << c.value << " (tolerance "
                << c.limit << ")\n";
    }
    if (!sweep.empty()) {
      std::cout << "P,V,rel_error\n" << std::setprecision(12);
      for (const auto& s : sweep) std::cout << s["P"] << ',' << s["V"].get<double>() << ',' << s["rel_error"].get<double>() << '\n';
    }
  });
  if (!ok) {
    for (const auto& c : cells) {
      if (!c.pass) throw ToleranceFailure("tolerance exceeded: " + c.name);
    }
  }
  return kOk;
}

int cmd_lemma(int d, int n_bits, std::uint64_t budget, bool as_json) {
  const GridSpec spec(d, n_bits);
  const auto rep = verify_lemma1(spec, budget);
  json j{{"d", d}, {"n_bits", n_bits}, {"pairs_checked", rep.pairs_checked},
         {"counterexamples", rep.counterexamples.size()}, {"max_separation", rep.max_separation},
         {"bound", rep.bound}, {"holds", rep.counterexamples.empty() && rep.max_separation <= rep.bound}};
  emit(j, as_json, [&] {
    std::cout << "d=" << d << " n_bits=" << n_bits << ": " << rep.pairs_checked << " pairs, "
              << rep.counterexamples.size() << " counterexamples, max separation " << rep.max_separation
              << " (bound " << rep.bound << ")\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(rep.counterexamples.size(), 10); ++i) {
      const auto& c = rep.counterexamples[i];
      std::cout << "  p=(" << c.p[0] << "," << c.p[1] << "," << c.p[2] << ") q=(" << c.q[0] << "," << c.q[1]
                << "," << c.q[2] << ") separation " << c.separation << '\n';
    }
  });
  return rep.counterexamples.empty() ? kOk : kTolerance;
}

struct ScaleRow {
  std::size_t eta;
  std::uint64_t seed;
  OpCounts counts;
  double ops = 0.0;
};

int cmd_scale(const std::string& backend, std::vector<std::size_t> etas, int seeds, int d, int n_bits,
              std::uint64_t base_seed, const RunConfig& cfg, const std::string& out, bool as_json) {
  if (!std::is_sorted(etas.begin(), etas.end())) fail(ErrorKind::Input, "eta list must be ascending");
  if (seeds < 1) fail(ErrorKind::Input, "need at least one seed");
  std::vector<ScaleRow> rows;
  for (auto eta : etas) {
    for (int s = 0; s < seeds; ++s) rows.push_back({eta, base_seed + static_cast<std::uint64_t>(s), {}, 0.0});
  }
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::size_t next = 0;
  std::mutex next_mu;
  auto work = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(next_mu);
        if (next >= rows.size()) return;
        i = next++;
      }
      try {
        GenOptions g;
        g.eta = rows[i].eta;
        g.d = d;
        g.n_bits = n_bits;
        g.seed = rows[i].seed;
        const auto f = generate(g);
        if (backend == "oblivious") {
          Instruments ins;
          if (cfg.mode == "uniform") {
            const auto t = resolve_tree(f, cfg);
            uniform_potential(f.particles, f.spec(), t.levels, t.capacity, ins);
          } else {
            compute_potential(f.particles, f.spec(), {cfg.order, cfg.K}, ins);
          }
          rows[i].counts = ins.counters.totals();
          rows[i].ops = static_cast<double>(rows[i].counts.comparators + rows[i].counts.controlled_swaps);
        } else if (backend == "oracle") {
          rows[i].ops = static_cast<double>(brute_force_potential(f.particles, d).pair_count);
        } else if (backend == "classical-monopole") {
          PairCensus census;
          run_backend(backend, f, cfg, nullptr, &census);
          rows[i].ops = static_cast<double>(census.box_pair_events() + census.particle_pair_events());
        } else {
          fail(ErrorKind::Input, "scale supports oblivious, oracle and classical-monopole");
        }
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min<int>(worker_count(), static_cast<int>(rows.size()));
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  std::vector<double> xs, ys;
  std::map<std::size_t, std::pair<double, int>> mean;
  for (const auto& r : rows) {
    auto& m = mean[r.eta];
    m.first += r.ops;
    ++m.second;
  }
  for (const auto& [eta, m] : mean) {
    xs.push_back(static_cast<double>(eta));
    ys.push_back(m.first / m.second);
  }
  const auto fit = fit_power_law(xs, ys);

  std::ofstream file;
  std::ostream& os = open_output(out, file);
  os << "eta,seed,ops,comparators,controlled_swaps,additions,multiplications,table_lookups,tests\n";
  for (const auto& r : rows) {
    os << r.eta << ',' << r.seed << ',' << std::setprecision(17) << r.ops << ',' << r.counts.comparators << ','
       << r.counts.controlled_swaps << ',' << r.counts.additions << ',' << r.counts.multiplications << ','
       << r.counts.table_lookups << ',' << r.counts.tests << '\n';
  }
  json j{{"backend", backend}, {"d", d}, {"n_bits", n_bits}, {"points", xs.size()}};
  if (fit.defined()) {
    j["slope"] = fit.slope;
    j["slope_ci95"] = {fit.slope - 1.96 * fit.slope_stderr, fit.slope + 1.96 * fit.slope_stderr};
    j["prefactor"] = std::exp(fit.intercept);
  } else {
    j["slope"] = nullptr;
  }
  const bool csv_on_stdout = out.empty() || out == "-";
  if (as_json && !csv_on_stdout) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::ostream& meta = csv_on_stdout ? std::cerr : std::cout;
    if (fit.defined()) {
      meta << "# slope " << std::setprecision(4) << fit.slope << " (95% CI " << j["slope_ci95"][0].get<double>()
           << " .. " << j["slope_ci95"][1].get<double>() << ")\n";
    } else {
      meta << "# slope undefined: fewer than two distinct eta values\n";
    }
  }
  return kOk;
}

SimulationParams params_from_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Input, "cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Input, std::string("malformed params file: ") + e.what());
  }
  SimulationParams p;
  const std::map<std::string, double*> fields{{"eta", &p.eta},         {"zeta", &p.zeta}, {"N", &p.N},
                                             {"omega", &p.omega},     {"t", &p.t},       {"epsilon", &p.epsilon},
                                             {"k", &p.k},             {"c_nu", &p.c_nu}, {"c_tau", &p.c_tau}};
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto f = fields.find(it.key());
    if (f == fields.end()) fail(ErrorKind::Input, "unknown parameter '" + it.key() + "'");
    if (it.value().is_string() && it.value() == "inf") {
      *f->second = std::numeric_limits<double>::infinity();
    } else if (it.value().is_number()) {
      *f->second = it.value().get<double>();
    } else {
      fail(ErrorKind::Input, "parameter '" + it.key() + "' must be a number");
    }
  }
  return p;
}

int cmd_estimate(SimulationParams p, const std::string& csv_out, bool as_json) {
  p.validate();
  const auto r = total_complexity(p);
  json rows = json::array();
  for (const auto& row : r.table.rows) {
    rows.push_back({{"year", row.year}, {"reference", row.reference}, {"innovation", row.innovation},
                    {"scaling", row.scaling}, {"cost", row.cost}, {"rank", row.rank}, {"this_work", row.this_work}});
  }
  json j{{"params", {{"eta", p.eta}, {"zeta", p.zeta}, {"N", p.N}, {"omega", p.omega}, {"t", p.t},
                     {"epsilon", p.epsilon}, {"k", std::isinf(p.k) ? json("inf") : json(p.k)},
                     {"c_nu", p.c_nu}, {"c_tau", p.c_tau}}},
         {"norms", {{"nu", r.norms.nu}, {"tau", r.norms.tau}}},
         {"trotter_steps", r.steps},
         {"per_step_cost", r.per_step_cost},
         {"total", r.total},
         {"leading_terms", {{"nu", r.nu_term}, {"tau", r.tau_term}, {"dominant", r.dominant},
                            {"exponents", "t eta^{5/3} N^{1/3} / Omega^{1/3} + t eta N^{2/3} / Omega^{2/3}"}}},
         {"table1", {{"rows", rows}, {"this_work_cheapest", r.table.this_work_cheapest},
                     {"below_crossover", r.table.below_crossover}, {"note", r.table.note}}}};
  if (!csv_out.empty()) {
    std::ofstream file;
    std::ostream& os = open_output(csv_out, file);
    os << "rank,year,reference,innovation,scaling,cost,this_work\n" << std::setprecision(6);
    std::vector<const Table1Row*> sorted;
    for (const auto& row : r.table.rows) sorted.push_back(&row);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->rank < b->rank; });
    for (const auto* row : sorted) {
      os << row->rank << ',' << row->year << ",\"" << row->reference << "\",\"" << row->innovation << "\",\""
         << row->scaling << "\"," << row->cost << ',' << (row->this_work ? 1 : 0) << '\n';
    }
  }
  emit(j, as_json, [&] {
    std::cout << std::setprecision(6) << "||nu||_1 = " << r.norms.nu << ", ||tau||_1 = " << r.norms.tau << '\n'
              << "Trotter steps " << r.steps << ", per-step FMM cost " << r.per_step_cost << ", total " << r.total
              << '\n'
              << "leading terms: eta^{5/3} N^{1/3} t/Omega^{1/3} = " << r.nu_term
              << ", eta N^{2/3} t/Omega^{2/3} = " << r.tau_term << " (" << r.dominant << " dominates)\n"
              << "Method comparison, " << r.table.note << ":\n";
    std::vector<const Table1Row*> sorted;
    for (const auto& row : r.table.rows) sorted.push_back(&row);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->rank < b->rank; });
    for (const auto* row : sorted) {
      std::cout << "  " << std::setw(2) << row->rank << ". " << std::setw(12) << row->cost << "  " << row->year
                << ' ' << row->reference << " (" << row->innovation << ")" << (row->this_work ? "  <--" : "")
                << '\n';
    }
    std::cout << (r.table.below_crossover ? "N < eta^6" : "N >= eta^6") << '\n';
  });
  return kOk;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fast multipole potentials with oblivious data access"};
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "Machine-readable output on stdout");

  RunConfig cfg;
  auto add_run_options = [&](CLI::App* sub) {
    sub->add_option("-L,--levels", cfg.levels, "Tree depth for uniform trees (0 = automatic)");
    sub->add_option("-c,--capacity", cfg.capacity, "Leaf capacity (0 = fullest leaf)");
    sub->add_option("-P,--order", cfg.order, "Expansion order");
    sub->add_option("-K,--window", cfg.K, "Neighbour window for the adaptive scheme (default 4^d - 1)");
    sub->add_option("--mode", cfg.mode, "Oblivious mode")->check(CLI::IsMember({"adaptive", "uniform"}));
    sub->add_flag("!--plain-sum", cfg.compensated, "Plain instead of compensated oracle summation");
  };

  GenOptions gen;
  std::string gen_dist = "uniform", gen_out;
  auto* g = app.add_subcommand("gen", "Generate a particle file");
  g->add_option("--dist", gen_dist, "uniform, clustered or shell")->check(CLI::IsMember({"uniform", "clustered", "shell"}));
  g->add_option("-n,--eta", gen.eta, "Number of particles")->required();
  g->add_option("-d,--dim", gen.d, "Dimension")->check(CLI::Range(1, 3));
  g->add_option("-b,--n-bits", gen.n_bits, "Bits per axis")->check(CLI::Range(0, 21));
  g->add_option("-s,--seed", gen.seed, "Seed for mt19937_64");
  g->add_option("--blobs", gen.blobs, "Blob count for clustered sets");
  g->add_option("--charges", gen.charges, "electrons, mixed or zero");
  g->add_option("-o,--output", gen_out, "Output path (default stdout)");

  std::string run_input, run_backend_name = "oblivious", trace_path;
  bool no_oracle = false, no_timing = false;
  auto* r = app.add_subcommand("run", "Evaluate the potential energy with one backend");
  r->add_option("input", run_input, "Particle file")->required();
  r->add_option("-B,--backend", run_backend_name, "Backend")->check(CLI::IsMember(kBackends));
  r->add_flag("--no-oracle", no_oracle, "Skip the brute-force comparison");
  r->add_flag("--no-timing", no_timing, "Omit wall time so reports are byte-identical");
  r->add_option("--trace", trace_path, "Write the oblivious access trace as CSV");
  add_run_options(r);

  std::string cmp_input, cmp_backends;
  CompareOptions cmp;
  auto* c = app.add_subcommand("compare", "Cross-check backends against the oracle and each other");
  c->add_option("input", cmp_input, "Particle file")->required();
  c->add_option("--backends", cmp_backends, "Comma-separated backends (default all)");
  c->add_option("--rtol", cmp.rtol, "Relative tolerance against the oracle");
  c->add_option("--atol", cmp.atol, "Absolute tolerance");
  c->add_option("--exact-rtol", cmp.exact_rtol, "Tolerance for exact-equivalence checks");
  c->add_option("--p-sweep", cmp.p_sweep, "Also sweep classical order P = 0..MAX");
  add_run_options(c);

  int lemma_d = 3, lemma_bits = 3;
  std::uint64_t lemma_budget = 50'000'000;
  auto* l = app.add_subcommand("lemma-verify", "Exhaustively check the shifted Morton ordering lemma");
  l->add_option("-d,--dim", lemma_d, "Dimension")->check(CLI::Range(1, 3));
  l->add_option("-b,--n-bits", lemma_bits, "Bits per axis")->check(CLI::Range(1, 21));
  l->add_option("--budget", lemma_budget, "Maximum number of pairs to visit");

  std::string scale_backend = "oblivious", scale_etas = "64,128,256,512,1024", scale_out;
  int scale_seeds = 1, scale_d = 3, scale_bits = 6;
  std::uint64_t scale_seed = 1;
  auto* s = app.add_subcommand("scale", "Operation counts over a range of particle numbers");
  s->add_option("-B,--backend", scale_backend, "oblivious, oracle or classical-monopole");
  s->add_option("--etas", scale_etas, "Ascending comma-separated particle counts");
  s->add_option("--seeds", scale_seeds, "Instances per count");
  s->add_option("-s,--seed", scale_seed, "First seed");
  s->add_option("-d,--dim", scale_d, "Dimension")->check(CLI::Range(1, 3));
  s->add_option("-b,--n-bits", scale_bits, "Bits per axis")->check(CLI::Range(2, 21));
  s->add_option("-o,--output", scale_out, "CSV output path (default stdout)");
  add_run_options(s);

  SimulationParams est;
  std::string est_params, est_csv;
  auto* e = app.add_subcommand("estimate", "Evaluate the complexity model and the method comparison");
  e->add_option("--params", est_params, "JSON file with eta, zeta, N, omega, t, epsilon, k, c_nu, c_tau");
  e->add_option("--eta", est.eta);
  e->add_option("--N", est.N);
  e->add_option("--omega", est.omega);
  e->add_option("--t", est.t);
  e->add_option("--epsilon", est.epsilon);
  e->add_option("--k", est.k);
  e->add_option("--csv", est_csv, "Write the ranked comparison table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kInput;
  }

  try {
    if (*g) {
      gen.dist = parse_distribution(gen_dist);
      return cmd_gen(gen, gen_out, as_json);
    }
    if (*r) return cmd_run(run_input, run_backend_name, cfg, !no_oracle, trace_path, !no_timing, as_json);
    if (*c) {
      if (!cmp_backends.empty()) {
        cmp.backends = split_list(cmp_backends);
        for (const auto& b : cmp.backends) {
          if (std::find(kBackends.begin(), kBackends.end(), b) == kBackends.end()) {
            fail(ErrorKind::Input, "unknown backend '" + b + "'");
          }
        }
      }
      return cmd_compare(cmp_input, cfg, cmp, as_json);
    }
    if (*l) return cmd_lemma(lemma_d, lemma_bits, lemma_budget, as_json);
    if (*s) {
      std::vector<std::size_t> etas;
      for (const auto& item : split_list(scale_etas)) etas.push_back(std::stoul(item));
      return cmd_scale(scale_backend, etas, scale_seeds, scale_d, scale_bits, scale_seed, cfg, scale_out, as_json);
    }
    if (*e) {
      SimulationParams p = est_params.empty() ? SimulationParams{} : params_from_json(est_params);
      for (const auto& [flag, field] : std::vector<std::pair<const char*, double*>>{
               {"--eta", &p.eta}, {"--N", &p.N}, {"--omega", &p.omega}, {"--t", &p.t},
               {"--epsilon", &p.epsilon}, {"--k", &p.k}}) {
        const auto* opt = e->get_option(flag);
        if (opt->count() > 0) *field = opt->as<double>();
      }
      return cmd_estimate(p, est_csv, as_json);
    }
  } catch (const Error& err) {
    std::cerr << "error (" << to_string(err.kind()) << "): " << err.what() << '\n';
    return exit_code(err.kind());
  } catch (const ToleranceFailure& err) {
    std::cerr << err.what() << '\n';
    return kTolerance;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kOther;
  }
  return kOther;
}
