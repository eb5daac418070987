#pragma once

// Scenario loading, the solving-window lifecycle and metrics output.

#include "eve/grid.hpp"
#include "eve/json_io.hpp"
#include "eve/ledger.hpp"
#include "eve/market.hpp"
#include "eve/resources.hpp"
#include "eve/verification.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace eve::orchestrator {

using eve::to_json;

struct ProsumerSpec {
  std::string id;
  grid::BusId bus = 0;
  resources::AssetKind kind = resources::AssetKind::InflexibleLoad;
  resources::AssetParams params;
  double budget = 0.0;
};

struct GridSpec {
  // MATPOWER case. Relative paths are tried against the scenario directory, then the data dir.
  std::string file;
  grid::MatpowerOptions options;
  std::map<grid::BusId, grid::RegionId> heads;  // subtree heads defining the partition
  std::vector<grid::SensorShare> sensor_sharing;
  std::optional<grid::GridTopology> topology;   // used instead of `file` when set
};

struct NoiseSpec {
  double variance = 1.0;        // per sensor, MW^2 (MVAr^2, p.u.^2 for voltages)
  double sensor_fraction = 1.0; // share of interior variables carrying a sensor
};

struct ScenarioConfig {
  std::string name;
  GridSpec grid;
  std::vector<ProsumerSpec> roster;
  int T = 6;
  double interval_minutes = 10.0;
  int windows = 1;
  NoiseSpec noise;
  std::string attack = "none";  // see adversary::parse_attack
  int attack_window = -1;       // window whose data is attacked; -1 for every window
  market::PricingConfig pricing;
  verification::VerificationConfig verification;
  std::uint64_t seed = 1;
  double penalty_rate = 1.0;      // per MW of deviation per interval
  double penalty_deadband = 3.0;  // in noise standard deviations
  double power_factor = 0.85;     // reactive injections follow q = p tan(acos pf)

  std::string base_dir;  // where relative grid paths resolve; not serialized
};

json to_json(const ProsumerSpec& p);
ProsumerSpec prosumer_from_json(const json& j);  // throws Error{ParseError | InvalidParams}

json to_json(const ScenarioConfig& cfg);
/// Throws Error{ParseError | InvalidParams}.
ScenarioConfig scenario_from_json(const json& j, const std::string& base_dir = ".");
ScenarioConfig load_scenario(const std::string& path);
void save_scenario(const ScenarioConfig& cfg, const std::string& path);

/// The partitioned topology described by the grid spec. Throws Error{IoFailure | ParseError}.
grid::GridTopology resolve_topology(const ScenarioConfig& cfg);

/// Checks T >= 1, one bus per prosumer, unique ids and a single slack at the root.
/// Throws Error{InvalidParams}.
void validate_scenario(const ScenarioConfig& cfg, const grid::RadialNetwork& net);

/// Asset-kind shares used by the generator (slack excluded).
std::map<resources::AssetKind, double> default_mix();

/// Number of prosumers of each kind for `count` prosumers (largest remainder rounding).
std::map<resources::AssetKind, int> kind_counts(const std::map<resources::AssetKind, double>& mix,
                                               int count);

/// Built-in templates: "case141x7" and "toy3". Throws Error{UnknownTemplate}.
ScenarioConfig generate_scenario(const std::string& name, std::uint64_t seed);

// ---- window lifecycle ----

struct Penalty {
  std::string account;  // prosumer id, or "agg<n>" for an identified attacker
  grid::BusId bus = 0;  // 0 for aggregator penalties
  double amount = 0.0;
  double before = 0.0;
  double after = 0.0;
};

struct VerificationStage {
  int window = -1;  // the window whose measurements were verified
  std::vector<grid::BusId> bus_ids;  // row labels of the bus matrices
  verification::VerificationReport report;
  Eigen::MatrixXd pstar;  // bus rows x T
  Eigen::MatrixXd truth;  // bus injections actually delivered, bus rows x T
  std::vector<Penalty> penalties;
  std::vector<std::string> stealth;  // description of a constructed stealth vector, if any
};

struct WindowReport {
  int window = 0;
  market::PricingStatus pricing = market::PricingStatus::Empty;
  std::vector<Eigen::VectorXd> lambda_trace;
  Eigen::VectorXd lambda;
  int iterations = 0;
  double balance_residual = 0.0;
  std::vector<std::string> prosumers;              // dispatch row order
  std::vector<resources::AssetKind> kinds;
  std::vector<grid::BusId> buses;
  Eigen::MatrixXd dispatch;                        // prosumer rows x T
  std::vector<market::BillingEntry> billing;
  std::optional<VerificationStage> verification;   // absent in window 0
  std::vector<std::string> ineligible;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;
};

struct RunOptions {
  market::ExecutionMode mode = market::ExecutionMode::Deterministic;
  std::optional<std::string> journal_dir;  // writes gl.jsonl and agg<n>.jsonl when set
};

/// Holds the network, ledgers, accounts and the measurements of the previous window.
class Simulation {
 public:
  explicit Simulation(ScenarioConfig cfg, RunOptions opts = {});
  ~Simulation();
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  /// Bids, verification of window i-1 with penalties, pricing and dispatch for window i,
  /// then delivery and metering. Windows must be run in order.
  WindowReport run_window(int i);
  std::vector<WindowReport> run(int windows);

  /// Verifies the most recently delivered window now (used by `eve verify`).
  VerificationStage verify_last();

  const ScenarioConfig& config() const { return cfg_; }
  const grid::RadialNetwork& network() const;
  const grid::SensorPlacement& sensors() const;
  ledger::Ledger& global();
  ledger::Ledger& local(grid::RegionId n);
  const std::vector<market::Aggregator>& aggregators() const;
  const std::map<std::string, double>& aggregator_accounts() const;

  /// Ground truth of the last delivered window: var_count rows x T.
  const Eigen::MatrixXd& last_truth() const;
  /// Noise-free sensor values of the last delivered window (sensor rows x T).
  const Eigen::MatrixXd& last_clean_measurements() const;

  struct Impl;

 private:
  ScenarioConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

// ---- metrics ----

struct MoneySummary {
  double payments = 0.0;   // sum of positive p'lambda (consumers pay)
  double receipts = 0.0;   // sum of negative p'lambda, as a positive number
  double penalties = 0.0;
  double imbalance = 0.0;  // lambda' sum(p)
};

MoneySummary money(const WindowReport& r);

/// Writes lambda.csv, resources.csv, tieline.csv, trust.csv, deviations.csv and
/// summary.json. Throws Error{IoFailure | InvalidParams}.
void emit_metrics(const std::vector<WindowReport>& reports, const std::string& out_dir);
json summary_json(const std::vector<WindowReport>& reports);

}  // namespace eve::orchestrator
