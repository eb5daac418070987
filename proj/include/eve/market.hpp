#pragma once

// Dual-decomposition pricing: per-aggregator subproblems, price updates, billing.

#include "eve/grid.hpp"
#include "eve/resources.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace eve::ledger {
class Ledger;
}

namespace eve::market {

struct Prosumer {
  std::string id;
  grid::BusId bus = 0;
  resources::AssetModel asset;
  double budget = 0.0;
  bool budget_exempt = false;  // the utility supplier at the root
  bool eligible = true;
};

struct Aggregator {
  grid::RegionId id = 0;
  std::vector<Prosumer> prosumers;
};

struct PriceVector {
  Eigen::VectorXd lambda;
  int k = 0;
};

struct ProsumerSolution {
  Eigen::VectorXd p;
  double cost = 0.0;
  double stationarity = 0.0;
  int iterations = 0;
};

struct ScheduleMatrix {
  Eigen::MatrixXd P;  // one row per prosumer
  std::vector<double> stationarity;
  Eigen::VectorXd aggregate() const;
};

struct PricingConfig {
  double alpha_hat = 0.05;
  int max_iterations = 500;   // k-bar
  double timeout_s = 30.0;    // tau-bar
  double epsilon = 1e-4;
  double balance_tol = 1e-3;
  int cycle_window = 10;
  double smoothing = 0.0;     // delta/2 ||p||^2 added to controllable non-slack assets
};

/// Ineligible prosumers are pinned to a zero profile when that is feasible for them and are
/// otherwise solved without their budget row.
/// Throws Error{Infeasible | SolverStall}.
ProsumerSolution solve_prosumer(const Prosumer& prosumer, const Eigen::VectorXd& lambda,
                                double smoothing = 0.0);
ScheduleMatrix solve_subproblem(const Aggregator& aggregator, const Eigen::VectorXd& lambda,
                                double smoothing = 0.0);

double step_size(double alpha_hat, int k);

/// Throws Error{MissingAggregator} if any aggregate is absent.
Eigen::VectorXd price_update(const Eigen::VectorXd& lambda,
                             const std::vector<std::optional<Eigen::VectorXd>>& aggregates,
                             double alpha);

bool check_convergence(const Eigen::VectorXd& next, const Eigen::VectorXd& prev, double eps);

/// True when the last `window` prices revisit an earlier value (period 2 to window/2).
bool detect_cycle(const std::vector<Eigen::VectorXd>& history, int window, double tol);

struct BillingEntry {
  std::string prosumer;
  double before = 0.0;
  double delta = 0.0;
  double after = 0.0;
};

/// r_b <- r_b + p_b' lambda for every prosumer row.
std::vector<BillingEntry> billing_update(std::vector<Aggregator>& aggregators,
                                         const std::vector<ScheduleMatrix>& schedules,
                                         const Eigen::VectorXd& lambda);

enum class PricingStatus { Converged, IterationLimit, Timeout, Recycled, Empty };
std::string_view to_string(PricingStatus s);

struct PricingResult {
  PricingStatus status = PricingStatus::Empty;
  Eigen::VectorXd lambda;
  std::vector<Eigen::VectorXd> lambda_trace;  // lambda_0 .. lambda_final
  std::vector<ScheduleMatrix> schedules;      // per aggregator, same order as input
  std::vector<BillingEntry> billing;
  int iterations = 0;
  double balance_residual = 0.0;
  double alpha_hat_final = 0.0;
  std::vector<std::string> warnings;
};

enum class ExecutionMode { Deterministic, Concurrent };

/// Runs one task per actor. Deterministic mode runs them in order on the caller's thread.
void run_actors(ExecutionMode mode, const std::vector<std::function<void()>>& tasks);

struct PricingContext {
  ledger::Ledger* global = nullptr;
  std::vector<ledger::Ledger*> local;   // one per aggregator, same order
  int window = 0;
  ExecutionMode mode = ExecutionMode::Deterministic;
  std::vector<grid::RegionId> silent;   // aggregators that never post a round
  std::optional<PricingResult> previous;  // recycled on timeout
  std::optional<Eigen::VectorXd> lambda0;
};

/// Algorithms 1-2 with aggregates exchanged through the global ledger when one is given.
/// Budgets are updated in place on convergence.
PricingResult run_pricing(std::vector<Aggregator>& aggregators, const PricingConfig& cfg,
                          const PricingContext& ctx, int T);

/// Centralised reference: one joint convex program with the balance constraint.
struct CentralResult {
  Eigen::VectorXd lambda;  // balance multiplier in the same sign convention
  std::vector<Eigen::MatrixXd> schedules;
  double objective = 0.0;
};
CentralResult solve_centralized(const std::vector<Aggregator>& aggregators, int T,
                                bool with_budgets, const Eigen::VectorXd& budget_lambda,
                                double smoothing = 0.0);

/// Sum of asset costs, plus the smoothing term when `smoothing` > 0.
double total_cost(const std::vector<Aggregator>& aggregators,
                  const std::vector<Eigen::MatrixXd>& schedules, double smoothing = 0.0);
double total_cost(const std::vector<Aggregator>& aggregators,
                  const std::vector<ScheduleMatrix>& schedules, double smoothing = 0.0);

/// True for assets that receive the smoothing term.
bool smoothed(const resources::AssetModel& asset);

}  // namespace eve::market
