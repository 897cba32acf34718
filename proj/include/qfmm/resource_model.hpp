#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace qfmm {

/// Physical and algorithmic parameters. All big-O constants default to 1.
struct SimulationParams {
  double eta = 1.0;      // electrons
  double zeta = 0.0;     // nuclei
  double N = 1.0;        // grid points
  double omega = 1.0;    // cell volume
  double t = 1.0;        // evolution time
  double epsilon = 1e-3; // target precision
  double k = 2.0;        // product formula order; infinity allowed
  double c_nu = 1.0;
  double c_tau = 1.0;

  /// Throws Input unless every value is positive (zeta >= 0) and k >= 1.
  void validate() const;
};

struct Norms {
  double nu = 0.0;   // ||nu||_{1,[eta]}
  double tau = 0.0;  // ||tau||_1
};

Norms norms(const SimulationParams& p);

/// t^{1+1/k} (nu + tau)^{1-1/k} (tau nu eta / eps)^{1/k}; t (nu + tau) for k = inf.
double trotter_steps(const SimulationParams& p);

/// (nu + tau)^{k-1} tau nu eta t^{k+1}: spectral-norm error of one
/// order-k product formula over time t, constants 1.
double product_formula_error(const SimulationParams& p);

/// Per-step cost as a function of the parameters.
using FmmCostModel = std::function<double(const SimulationParams&)>;

/// eta log eta log N log(1/eps), each logarithm base 2 and at least 1.
double analytic_fmm_cost(const SimulationParams& p);

struct PowerLawFit {
  double slope = 0.0;
  double intercept = 0.0;   // natural log of the prefactor
  double slope_stderr = 0.0;
  std::size_t points = 0;
  bool defined() const noexcept { return points >= 2; }
};

/// Least-squares fit of log y = intercept + slope log x. Fewer than two
/// distinct x values leave the fit undefined.
PowerLawFit fit_power_law(std::span<const double> x, std::span<const double> y);

/// Cost model c * eta^slope from measured per-step operation counts.
FmmCostModel measured_cost_model(std::span<const double> eta, std::span<const double> ops);

struct Table1Row {
  int year = 0;
  std::string reference;
  std::string innovation;
  std::string scaling;
  double cost = 0.0;
  int rank = 0;  // 1 = cheapest
  bool this_work = false;
};

struct Table1Comparison {
  std::vector<Table1Row> rows;
  std::size_t cheapest = 0;
  bool this_work_cheapest = false;
  bool below_crossover = false;  // N < eta^6
  std::string note;
};

/// Evaluates every row with t replaced by 1/epsilon, constants 1 and the
/// o(1) and polylog factors dropped.
Table1Comparison table1_compare(const SimulationParams& p);

struct ComplexityReport {
  SimulationParams params;
  Norms norms;
  double steps = 0.0;
  double per_step_cost = 0.0;
  double total = 0.0;       // steps * per_step_cost
  double nu_term = 0.0;     // t eta^{5/3} N^{1/3} / omega^{1/3}
  double tau_term = 0.0;    // t eta N^{2/3} / omega^{2/3}
  std::string dominant;     // "nu" or "tau"
  Table1Comparison table;
};

ComplexityReport total_complexity(const SimulationParams& p,
                                  const FmmCostModel& cost = analytic_fmm_cost);

}  // namespace qfmm
