#include "eve/error.hpp"
#include "eve/market.hpp"

namespace eve::market {

using resources::AssetKind;
using resources::AssetModel;

bool smoothed(const AssetModel& a) { return a.kind != AssetKind::Slack && a.controls() > 0; }

namespace {

void add_price(resources::AssetProgram& prog, const Eigen::VectorXd& lambda) {
  prog.problem.g += prog.P.transpose() * lambda;
  prog.constant += prog.p0.dot(lambda);
}

void add_smoothing(resources::AssetProgram& prog, double delta) {
  prog.problem.G += delta * prog.P.transpose() * prog.P;
  prog.problem.g += delta * prog.P.transpose() * prog.p0;
  prog.constant += 0.5 * delta * prog.p0.squaredNorm();
}

// lambda'(P y + p0) <= r_b
void add_budget(resources::AssetProgram& prog, const Eigen::VectorXd& lambda, double budget) {
  Eigen::RowVectorXd row = -(prog.P.transpose() * lambda).transpose();
  prog.problem.add_inequality(row, prog.p0.dot(lambda) - budget);
}

void pin_zero(resources::AssetProgram& prog) {
  for (Eigen::Index t = 0; t < prog.P.rows(); ++t)
    prog.problem.add_equality(prog.P.row(t), -prog.p0(t));
}

}  // namespace

ProsumerSolution solve_prosumer(const Prosumer& pr, const Eigen::VectorXd& lambda,
                                double smoothing) {
  const AssetModel& a = pr.asset;
  if (lambda.size() != a.T)
    throw Error(ErrorCode::DimensionMismatch, pr.id + ": price length differs from T");
  ProsumerSolution sol;
  if (a.controls() == 0) {
    sol.p = a.ell_T();
    sol.cost = resources::eval_cost(a, sol.p);
    return sol;
  }

  auto build = [&](bool zero) {
    auto prog = resources::build_program(a);
    add_price(prog, lambda);
    if (smoothing > 0.0 && smoothed(a)) add_smoothing(prog, smoothing);
    // A negative balance already excludes the prosumer; the budget row would make even
    // the zero profile infeasible.
    if (!pr.budget_exempt && pr.eligible) add_budget(prog, lambda, pr.budget);
    if (zero) pin_zero(prog);
    return prog;
  };

  auto prog = build(!pr.eligible);
  auto res = qp::solve(prog.problem);
  if (!pr.eligible && res.status != qp::Status::Optimal) {
    prog = build(false);
    res = qp::solve(prog.problem);
  }
  if (res.status == qp::Status::Infeasible)
    throw Error(ErrorCode::Infeasible, pr.id + ": empty feasible set");
  if (res.status == qp::Status::Stalled)
    throw Error(ErrorCode::SolverStall, pr.id + ": subproblem did not converge");
  sol.p = prog.P * res.y + prog.p0;
  sol.cost = resources::eval_cost(a, sol.p);
  sol.stationarity = res.stationarity;
  sol.iterations = res.iterations;
  return sol;
}

Eigen::VectorXd ScheduleMatrix::aggregate() const {
  return P.rows() ? Eigen::VectorXd(P.colwise().sum().transpose())
                  : Eigen::VectorXd::Zero(P.cols());
}

ScheduleMatrix solve_subproblem(const Aggregator& agg, const Eigen::VectorXd& lambda,
                                double smoothing) {
  ScheduleMatrix s;
  s.P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(agg.prosumers.size()), lambda.size());
  for (std::size_t i = 0; i < agg.prosumers.size(); ++i) {
    auto sol = solve_prosumer(agg.prosumers[i], lambda, smoothing);
    s.P.row(static_cast<Eigen::Index>(i)) = sol.p.transpose();
    s.stationarity.push_back(sol.stationarity);
  }
  return s;
}

CentralResult solve_centralized(const std::vector<Aggregator>& aggs, int T, bool with_budgets,
                                const Eigen::VectorXd& budget_lambda, double smoothing) {
  std::vector<resources::AssetProgram> progs;
  std::vector<const Prosumer*> who;
  Eigen::Index n = 0, me = 0, mi = 0;
  for (const auto& ag : aggs)
    for (const auto& pr : ag.prosumers) {
      auto prog = resources::build_program(pr.asset);
      if (smoothing > 0.0 && smoothed(pr.asset)) add_smoothing(prog, smoothing);
      if (with_budgets && !pr.budget_exempt) add_budget(prog, budget_lambda, pr.budget);
      n += prog.problem.size();
      me += prog.problem.A.rows();
      mi += prog.problem.C.rows();
      progs.push_back(std::move(prog));
      who.push_back(&pr);
    }

  qp::Problem q(n);
  q.A = Eigen::MatrixXd::Zero(me + T, n);
  q.b = Eigen::VectorXd::Zero(me + T);
  q.C = Eigen::MatrixXd::Zero(mi, n);
  q.d = Eigen::VectorXd::Zero(mi);
  Eigen::Index off = 0, ro = 0, ri = 0;
  for (const auto& pg : progs) {
    const auto& p = pg.problem;
    const Eigen::Index k = p.size();
    q.G.block(off, off, k, k) = p.G;
    q.g.segment(off, k) = p.g;
    q.A.block(ro, off, p.A.rows(), k) = p.A;
    q.b.segment(ro, p.A.rows()) = p.b;
    q.C.block(ri, off, p.C.rows(), k) = p.C;
    q.d.segment(ri, p.C.rows()) = p.d;
    // Balance rows: sum_b (P_b y_b + p0_b) = 0.
    q.A.block(me, off, T, k) = pg.P;
    q.b.tail(T) -= pg.p0;
    off += k;
    ro += p.A.rows();
    ri += p.C.rows();
  }
  auto res = qp::solve(q);
  if (res.status == qp::Status::Infeasible)
    throw Error(ErrorCode::Infeasible, "centralized problem is infeasible");
  if (res.status == qp::Status::Stalled)
    throw Error(ErrorCode::SolverStall, "centralized problem did not converge");

  CentralResult out;
  out.lambda = -res.lambda.tail(T);
  off = 0;
  std::size_t idx = 0;
  for (const auto& ag : aggs) {
    Eigen::MatrixXd P(static_cast<Eigen::Index>(ag.prosumers.size()), T);
    for (std::size_t i = 0; i < ag.prosumers.size(); ++i, ++idx) {
      const auto& pg = progs[idx];
      const Eigen::Index k = pg.problem.size();
      P.row(static_cast<Eigen::Index>(i)) = (pg.P * res.y.segment(off, k) + pg.p0).transpose();
      off += k;
    }
    out.schedules.push_back(std::move(P));
  }
  out.objective = total_cost(aggs, out.schedules, smoothing);
  return out;
}

double total_cost(const std::vector<Aggregator>& aggs, const std::vector<Eigen::MatrixXd>& P,
                  double smoothing) {
  if (P.size() != aggs.size())
    throw Error(ErrorCode::DimensionMismatch, "one schedule per aggregator expected");
  double c = 0.0;
  for (std::size_t n = 0; n < aggs.size(); ++n)
    for (std::size_t i = 0; i < aggs[n].prosumers.size(); ++i) {
      const auto& a = aggs[n].prosumers[i].asset;
      Eigen::VectorXd p = P[n].row(static_cast<Eigen::Index>(i)).transpose();
      c += resources::eval_cost(a, p);
      if (smoothing > 0.0 && smoothed(a)) c += 0.5 * smoothing * p.squaredNorm();
    }
  return c;
}

double total_cost(const std::vector<Aggregator>& aggs, const std::vector<ScheduleMatrix>& s,
                  double smoothing) {
  std::vector<Eigen::MatrixXd> P;
  for (const auto& m : s) P.push_back(m.P);
  return total_cost(aggs, P, smoothing);
}

}  // namespace eve::market
