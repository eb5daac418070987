#pragma once

// Decentralized state verification: per-region ADMM regression over measurements,
// schedules and linearized physics, plus disagreement-based attacker detection.

#include "eve/adversary.hpp"
#include "eve/grid.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace eve::ledger {
class Ledger;
}

namespace eve::verification {

enum class InitMode { Backfill, Zero };

struct VerificationConfig {
  double c1 = 0.5;  // measurement fit
  double c2 = 0.5;  // physics
  double c3 = 0.5;  // schedule
  double c4 = 0.5;  // consensus penalty
  double eps = 1e-3;     // T1 tolerance on the x-step
  double eps_pi = 1e-3;  // T2 stability tolerance on pi
  double beta = 2.0;     // T2 threshold multiplier
  double eps_B = 1e-16;  // denominator guard when normalizing disagreements
  double eig_tol = 1e-10;
  int eig_max_iters = 1000;
  double alpha_power = 1.0;  // alpha_k = 1 / k^alpha_power
  int max_iterations = 3000;
  InitMode init = InitMode::Backfill;
  // T2 only fires once the x-steps stop shrinking: the largest step over the last
  // `stall_window` iterations is at least `stall_ratio` times the one before.
  int burn_in = 20;
  int stall_window = 20;
  double stall_ratio = 0.5;
  int max_removals = -1;  // -1: N - 2

  void validate() const;  // throws Error{InvalidParams}
  static VerificationConfig strict();
};

double alpha_k(int k, double power = 1.0);

// ---- ADMM ----

/// Neighbour id -> shared slice (rows follow RegionMatrices::shared[neighbour], columns are
/// intervals).
using Slices = std::map<grid::RegionId, Eigen::MatrixXd>;

struct RegionState {
  grid::RegionMatrices m;
  Eigen::MatrixXd z;         // measured rows x T
  Eigen::VectorXd variance;  // per measured row
  Eigen::MatrixXd pstar;     // injection rows x T
  Eigen::MatrixXd x, psi, ups;  // l_n x T
  std::vector<std::size_t> orphaned;  // local coords shared only with removed regions
  int k = 0;

  Eigen::Index horizon() const { return z.cols(); }
};

/// Holds the factorized x-update system of one region.
class RegionSolver {
 public:
  /// Throws Error{SingularSystem} when the system is not positive definite.
  RegionSolver(const RegionState& s, const VerificationConfig& cfg);

  Eigen::MatrixXd solve(const Eigen::MatrixXd& ups) const;
  const Eigen::MatrixXd& system() const { return M_; }
  const Eigen::MatrixXd& fixed_rhs() const { return rhs_; }

 private:
  Eigen::MatrixXd M_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::MatrixXd rhs_;  // c1 S_A' inv(Sigma) z + c3 S_P' p*
  Eigen::VectorXd c4D_;
};

/// Measurement backfill (zeros on unmeasured coordinates) or all zeros.
Eigen::MatrixXd initial_x(const RegionState& s, InitMode mode);

/// Slices this region sends, keyed by receiver.
Slices outgoing(const RegionState& s);
Eigen::MatrixXd shared_slice(const RegionState& s, grid::RegionId neighbour);

/// Average of the neighbours' copies, zero where no neighbour shares the coordinate.
Eigen::MatrixXd consensus_average(const grid::RegionMatrices& m, const Slices& incoming,
                                  Eigen::Index horizon);

void admm_init(RegionState& s, Eigen::MatrixXd x0, const Slices& incoming);
Eigen::MatrixXd admm_x_update(const RegionState& s, const RegionSolver& solver);
/// Advances psi and ups with the neighbours' slices of x_{k+1}, then stores x_{k+1}.
void admm_consensus_update(RegionState& s, Eigen::MatrixXd x_next, const Slices& incoming);

// ---- detection ----

/// One smoothing step of the running disagreement between two copies of a shared slice.
double disagreement_update(double d, const Eigen::MatrixXd& own, const Eigen::MatrixXd& other,
                           double alpha);

/// Row-normalized disagreement matrix.
Eigen::MatrixXd normalize_disagreement(const Eigen::MatrixXd& d, double eps_B);

struct TrustResult {
  Eigen::VectorXd pi;
  int iterations = 0;
};

/// Left principal eigenvector of B (sum 1). Throws Error{NoConvergence}.
TrustResult trust_scores(const Eigen::MatrixXd& B, double tol = 1e-10, int max_iters = 1000);
TrustResult trust_scores(const Eigen::MatrixXd& d, const VerificationConfig& cfg);

/// Mean and std of pi without entry m.
std::pair<double, double> excluded_stats(const Eigen::VectorXd& pi, Eigen::Index m);
/// Index whose score exceeds the excluded threshold the most, if any does.
std::optional<Eigen::Index> t2_candidate(const Eigen::VectorXd& pi, double beta);

enum class Termination { Continue, Converged, AttackerIdentified };

struct TerminationCheck {
  Termination kind = Termination::Continue;
  std::optional<Eigen::Index> attacker;
};

/// `steps` holds the max x-step (over regions) of every iteration so far; `pis` the trust
/// vectors. T1 has priority over T2.
TerminationCheck check_termination(const std::vector<double>& steps,
                                   const std::vector<Eigen::VectorXd>& pis,
                                   const VerificationConfig& cfg);
bool stalled(const std::vector<double>& steps, const VerificationConfig& cfg);

// ---- end to end ----

struct VerificationProblem {
  const grid::RadialNetwork* net = nullptr;
  grid::SensorPlacement sensors;
  Eigen::MatrixXd z;         // sensors.vars rows x T
  Eigen::VectorXd variance;  // per sensor
  Eigen::MatrixXd pstar;     // bus index rows x T
  std::set<grid::RegionId> regions;  // empty: all
};

struct Exchange {
  ledger::Ledger* gl = nullptr;  // null: in-memory message passing
  int window = 0;
  adversary::AttackSpec attack;  // message and silent attacks act here
  std::optional<std::pair<grid::RegionId, grid::RegionId>> trace_pair;
};

enum class Outcome { Converged, GraphDisconnected, InsufficientRegions, IterationLimit };
std::string_view to_string(Outcome o);

struct Attempt {
  std::vector<grid::RegionId> order;  // region id of each pi entry
  int iterations = 0;
  Termination end = Termination::Continue;
  std::optional<grid::RegionId> identified;
  std::vector<double> steps;
  std::vector<Eigen::VectorXd> pis;
  std::vector<double> disagreement;  // max shared-slice gap per iteration
  // Tie-line trace for the traced pair at the first interval: both copies per iteration.
  std::vector<std::size_t> trace_vars;
  std::vector<Eigen::VectorXd> trace_n, trace_m;
};

struct VerificationReport {
  Outcome outcome = Outcome::IterationLimit;
  std::vector<grid::RegionId> attackers;
  std::vector<Attempt> attempts;
  std::map<grid::RegionId, RegionState> states;  // final attempt
  Eigen::MatrixXd verified;   // bus rows x T; NaN where no active region verified the bus
  Eigen::MatrixXd deviation;  // pstar - verified; 0 where unverified
  int total_iterations = 0;
  std::vector<std::string> warnings;
};

VerificationReport run_verification(const VerificationProblem& problem,
                                    const VerificationConfig& cfg, const Exchange& ex = {});

/// Builds the per-region states for the active set. Coordinates shared with a region in
/// `removed` are marked orphaned.
std::map<grid::RegionId, RegionState> build_states(const VerificationProblem& problem,
                                                   const std::set<grid::RegionId>& active,
                                                   const std::set<grid::RegionId>& removed = {});

}  // namespace eve::verification
