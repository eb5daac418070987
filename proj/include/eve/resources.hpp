#pragma once

// Prosumer asset models: p = A u + l with control and power bounds, plus convex costs.

#include "eve/qp.hpp"

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <vector>

namespace eve::resources {

enum class AssetKind { EV, DeferrableAppliance, TCL, Storage, Renewable, Slack, InflexibleLoad };

std::string_view to_string(AssetKind kind);
AssetKind kind_from_string(std::string_view name);  // throws Error{InvalidParams}

/// Union of kind-specific parameters. Vectors of length 1 are broadcast over the horizon.
struct AssetParams {
  double rho = 1.0;        // rate limit, MW
  double capacity = 1.0;   // EV / storage energy capacity (per-interval normalised)
  double u_init = 0.0;     // EV u(t_a), storage u(0), TCL u(0)
  double u_min = -1.0;     // TCL comfort band on u
  double u_max = 1.0;
  double tau_c = 0.0;      // EV charging time
  double tau_s = 0.0;      // EV slack time
  int t_a = 0;             // EV arrival
  int t_d = 0;             // EV departure (may exceed the horizon)
  std::vector<double> cycle;  // DA profile h(0..d), MW
  double R = 2.0, C = 1.0, eta = 1.0;
  double theta_r = 22.0;
  std::vector<double> theta_o;    // outdoor temperature forecast
  std::vector<double> disturbance;  // epsilon(t), folded into l
  std::vector<double> forecast;   // renewable output / inflexible injection, MW
  std::vector<double> schedule;   // slack wholesale schedule p_s, MW

  // Cost coefficients.
  std::vector<double> c1;
  std::vector<double> c1_pos;
  std::vector<double> c1_neg;
  double c0 = 0.0;
  double c_d = 0.0;        // EV deadline credit
  double c1_tilde = 0.0;   // DA delay slope
  double c0_tilde = 0.0;   // DA / TCL constant
  double c2_tilde = 0.0;   // TCL comfort weight
  double quadratic = 0.0;  // slack: quadratic * ||p - p_s||^2
};

struct CostSpec {
  Eigen::MatrixXd C2;      // p' C2 p
  Eigen::VectorXd c1;      // c1' p
  Eigen::VectorXd c1_pos;  // c1+' (p - anchor)_+
  Eigen::VectorXd c1_neg;  // c1-' (anchor - p)_+
  Eigen::VectorXd anchor;
  double c0 = 0.0;
  double deadline_credit = 0.0;  // - c_d min(offset + 1'p, cap)
  double deadline_offset = 0.0;
  double deadline_cap = 0.0;
};

struct AssetModel {
  AssetKind kind = AssetKind::Renewable;
  int T = 0;
  Eigen::MatrixXd A;      // rows: T (or T+d for DA), cols: control dimension
  Eigen::VectorXd ell;
  Eigen::VectorXd u_lo, u_hi;
  Eigen::MatrixXd Eu;     // extra control equalities Eu u = eu
  Eigen::VectorXd eu;
  Eigen::MatrixXd Fu;     // extra control inequalities Fu u >= fu
  Eigen::VectorXd fu;
  Eigen::VectorXd p_lo, p_hi;  // length T
  CostSpec cost;
  AssetParams params;

  Eigen::Index controls() const { return A.cols(); }
  /// First T rows of the profile map and offset.
  Eigen::MatrixXd A_T() const { return A.topRows(T); }
  Eigen::VectorXd ell_T() const { return ell.head(T); }
};

/// Throws Error{InvalidParams}.
AssetModel build_asset(AssetKind kind, const AssetParams& params, int T);

/// Throws Error{DimensionMismatch}.
double eval_cost(const AssetModel& asset, const Eigen::VectorXd& p);

struct Violation {
  std::string family;  // "control", "power", "budget", "profile"
  double magnitude = 0.0;
};

struct FeasibilityReport {
  std::vector<Violation> violations;
  bool feasible(double tol = 1e-6) const;
  double worst(const std::string& family) const;
};

/// Budget is checked only when `check_budget`; λ may be empty in that case.
FeasibilityReport feasibility_check(const AssetModel& asset, const Eigen::VectorXd& p,
                                    const Eigen::VectorXd& lambda, double budget,
                                    bool check_budget = true);

/// Recovers the control vector from a length-T profile (solves A_T u = p - l).
Eigen::VectorXd controls_from_profile(const AssetModel& asset, const Eigen::VectorXd& p);

/// Convex program over y = [u; epigraph vars] with p = P y + p0.
struct AssetProgram {
  qp::Problem problem;
  Eigen::MatrixXd P;
  Eigen::VectorXd p0;
  double constant = 0.0;
};

AssetProgram build_program(const AssetModel& asset);

}  // namespace eve::resources
