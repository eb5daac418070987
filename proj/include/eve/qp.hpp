#pragma once

// Dense convex QP:  min 1/2 y'Gy + g'y  s.t.  A y = b,  C y >= d.

#include <Eigen/Dense>

namespace eve::qp {

struct Problem {
  Eigen::MatrixXd G;
  Eigen::VectorXd g;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd C;
  Eigen::VectorXd d;

  explicit Problem(Eigen::Index n = 0);
  Eigen::Index size() const { return g.size(); }
  void add_equality(const Eigen::RowVectorXd& row, double rhs);
  void add_inequality(const Eigen::RowVectorXd& row, double rhs);  // row y >= rhs
  void add_bounds(Eigen::Index var, double lo, double hi);
};

struct Options {
  int max_iterations = 200;
  double tolerance = 1e-10;
  bool polish = true;
};

enum class Status { Optimal, Infeasible, Stalled };

struct Result {
  Status status = Status::Stalled;
  Eigen::VectorXd y;
  Eigen::VectorXd lambda;  // equality multipliers
  Eigen::VectorXd mu;      // inequality multipliers (>= 0)
  double objective = 0.0;
  int iterations = 0;
  double stationarity = 0.0;      // ||G y + g - A'lambda - C'mu||_inf
  double primal_residual = 0.0;   // max equality / inequality violation
  double complementarity = 0.0;   // max |mu_i (C y - d)_i|
};

/// Mehrotra predictor-corrector interior point method followed by an active-set
/// polish step. Does not throw; callers map the status to errors.
Result solve(const Problem& problem, const Options& opts = {});

}  // namespace eve::qp
