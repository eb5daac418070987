#include <doctest.h>

#include "eve/error.hpp"
#include "eve/ledger.hpp"
#include "eve/market.hpp"
#include "eve/qp.hpp"

#include <limits>

using namespace eve;
using namespace eve::market;
using resources::AssetKind;
using resources::AssetParams;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Prosumer make(const std::string& id, AssetKind kind, const AssetParams& p, int T,
              double budget = 1e6) {
  Prosumer pr;
  pr.id = id;
  pr.asset = resources::build_asset(kind, p, T);
  pr.budget = budget;
  pr.budget_exempt = kind == AssetKind::Slack;
  return pr;
}

Prosumer slack(int T, double q, std::vector<double> schedule = {0.0}) {
  AssetParams p;
  p.quadratic = q;
  p.schedule = std::move(schedule);
  return make("slack", AssetKind::Slack, p, T);
}

Prosumer fixed(const std::string& id, AssetKind kind, std::vector<double> f, int T) {
  AssetParams p;
  p.forecast = std::move(f);
  return make(id, kind, p, T);
}

Prosumer tcl(const std::string& id, int T) {
  AssetParams p;
  p.R = 2.0;
  p.C = 1.0;
  p.eta = 2.5;
  p.rho = 5.0;
  p.theta_o = {27.0, 28.0, 29.0};
  p.u_min = -3.0;
  p.u_max = 3.0;
  p.c2_tilde = 0.5;
  return make(id, AssetKind::TCL, p, T);
}

// Vertices of {A u <= b} in the plane.
std::vector<Eigen::Vector2d> vertices(const MatrixXd& A, const VectorXd& b) {
  std::vector<Eigen::Vector2d> out;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = i + 1; j < A.rows(); ++j) {
      Eigen::Matrix2d M;
      M << A.row(i), A.row(j);
      if (std::abs(M.determinant()) < 1e-12) continue;
      Eigen::Vector2d u = M.inverse() * Eigen::Vector2d(b(i), b(j));
      if (((A * u - b).array() <= 1e-12).all()) out.push_back(u);
    }
  return out;
}

}  // namespace

TEST_CASE("storage arbitrage matches vertex enumeration") {
  AssetParams p;
  p.rho = 1.0;
  p.capacity = 1.0;
  p.u_init = 0.0;
  auto pr = make("st", AssetKind::Storage, p, 2);
  VectorXd lam = vec({1, 3});
  auto sol = solve_prosumer(pr, lam);

  // Oracle: p0 = u0, p1 = u1 - u0 with 0 <= u <= 1 and |p| <= 1.
  MatrixXd A(8, 2);
  VectorXd b(8);
  A << 1, 0, -1, 0, 0, 1, 0, -1, 1, 0, -1, 0, -1, 1, 1, -1;
  b << 1, 0, 1, 0, 1, 1, 1, 1;
  double best = std::numeric_limits<double>::infinity();
  Eigen::Vector2d pbest;
  for (const auto& u : vertices(A, b)) {
    Eigen::Vector2d pv(u(0), u(1) - u(0));
    double v = lam.dot(pv);
    if (v < best) {
      best = v;
      pbest = pv;
    }
  }
  CHECK(best == doctest::Approx(-2.0));
  CHECK((sol.p - pbest).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(sol.p(0) == doctest::Approx(1.0));
  CHECK(sol.p(1) == doctest::Approx(-1.0));
  CHECK(sol.stationarity < 1e-6);
}

TEST_CASE("interior TCL response matches the normal equations") {
  const int T = 3;
  auto pr = tcl("tcl", T);
  pr.budget_exempt = true;
  VectorXd lam = vec({0.05, -0.02, 0.03});
  auto sol = solve_prosumer(pr, lam);
  const auto& m = pr.asset;
  MatrixXd Ainv = m.A.inverse();
  MatrixXd H = 2.0 * 0.5 * Ainv.transpose() * Ainv;
  // grad: H (p - l) + lambda = 0
  VectorXd expect = m.ell - H.ldlt().solve(lam);
  CHECK((sol.p - expect).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("price update, step size and convergence arithmetic") {
  CHECK(step_size(1.0, 3) == doctest::Approx(0.25));
  for (int k = 0; k < 10; ++k) CHECK(step_size(0.05, k + 1) < step_size(0.05, k));

  VectorXd l0 = vec({0, 0});
  std::vector<std::optional<VectorXd>> aggs = {vec({1, -2})};
  VectorXd l1 = price_update(l0, aggs, 0.1);
  CHECK(l1(0) == doctest::Approx(0.1));
  CHECK(l1(1) == doctest::Approx(-0.2));
  std::vector<std::optional<VectorXd>> zero = {vec({1, 1}), vec({-1, -1})};
  CHECK(price_update(vec({2, 3}), zero, 0.5) == vec({2, 3}));
  std::vector<std::optional<VectorXd>> missing = {vec({1, 1}), std::nullopt};
  bool thrown = false;
  try {
    price_update(l0, missing, 0.1);
  } catch (const Error& e) {
    thrown = e.code() == ErrorCode::MissingAggregator;
  }
  CHECK(thrown);

  const double eps = 1e-4;
  CHECK(check_convergence(vec({1, 2}), vec({1, 2}), eps));
  CHECK(check_convergence(vec({1 + eps / 2, 2 - eps / 2}), vec({1, 2}), eps));
  CHECK(!check_convergence(vec({1 + 2 * eps, 2}), vec({1, 2}), eps));
}

TEST_CASE("cycle detection") {
  std::vector<VectorXd> h;
  for (int k = 0; k < 12; ++k) h.push_back(vec({k % 2 ? 1.0 : -1.0}));
  CHECK(detect_cycle(h, 10, 1e-9));
  std::vector<VectorXd> g;
  for (int k = 0; k < 12; ++k) g.push_back(vec({1.0 / (k + 1)}));
  CHECK(!detect_cycle(g, 10, 1e-9));
  std::vector<VectorXd> three;
  for (int k = 0; k < 12; ++k) three.push_back(vec({double(k % 3)}));
  CHECK(detect_cycle(three, 10, 1e-9));
}

TEST_CASE("billing follows the inner product") {
  std::vector<Aggregator> aggs(1);
  aggs[0].prosumers = {fixed("a", AssetKind::InflexibleLoad, {0.0}, 2),
                       fixed("b", AssetKind::InflexibleLoad, {-1.0}, 2)};
  aggs[0].prosumers[0].budget = 10;
  aggs[0].prosumers[1].budget = 10;
  ScheduleMatrix s;
  s.P = MatrixXd(2, 2);
  s.P << 0, 0, 1, 2;
  auto bill = billing_update(aggs, {s}, vec({-1, -2}));
  CHECK(aggs[0].prosumers[0].budget == doctest::Approx(10));
  CHECK(bill[1].delta == doctest::Approx(-5));
  CHECK(aggs[0].prosumers[1].budget == doctest::Approx(5));
}

TEST_CASE("slack supplies an inflexible load") {
  const int T = 3;
  std::vector<Aggregator> aggs(2);
  aggs[0].id = 0;
  aggs[0].prosumers = {slack(T, 0.5)};
  aggs[1].id = 1;
  aggs[1].prosumers = {fixed("load", AssetKind::InflexibleLoad, {-1.0, -2.0, -1.5}, T)};
  PricingConfig cfg;
  cfg.alpha_hat = 2.0;
  auto central = solve_centralized(aggs, T, false, VectorXd::Zero(T));
  auto res = run_pricing(aggs, cfg, PricingContext{}, T);
  REQUIRE(res.status == PricingStatus::Converged);
  CHECK(res.balance_residual < cfg.balance_tol);
  CHECK((res.schedules[0].P.row(0).transpose() - vec({1.0, 2.0, 1.5})).cwiseAbs().maxCoeff() <
        1e-3);
  CHECK((res.lambda - central.lambda).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((central.lambda - vec({-1.0, -2.0, -1.5})).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("balanced fixed profiles converge at the first round") {
  const int T = 2;
  std::vector<Aggregator> aggs(2);
  aggs[0].id = 0;
  aggs[0].prosumers = {fixed("pv", AssetKind::Renewable, {1.0, 0.5}, T)};
  aggs[1].id = 1;
  aggs[1].prosumers = {fixed("load", AssetKind::InflexibleLoad, {-1.0, -0.5}, T)};
  auto res = run_pricing(aggs, PricingConfig{}, PricingContext{}, T);
  CHECK(res.status == PricingStatus::Converged);
  CHECK(res.iterations == 1);
  CHECK(res.lambda.isZero());
}

TEST_CASE("tight tolerance drives the balance to zero on a smooth instance") {
  const int T = 3;
  std::vector<Aggregator> aggs(2);
  aggs[0].id = 0;
  aggs[0].prosumers = {slack(T, 0.5, {1.0})};
  aggs[1].id = 1;
  aggs[1].prosumers = {tcl("t1", T), tcl("t2", T)};
  PricingConfig cfg;
  cfg.alpha_hat = 1.5;
  cfg.epsilon = 1e-8;
  cfg.balance_tol = 1e-6;
  cfg.max_iterations = 2000;
  auto res = run_pricing(aggs, cfg, PricingContext{}, T);
  REQUIRE(res.status == PricingStatus::Converged);
  CHECK(res.balance_residual < 1e-6);
  auto central = solve_centralized(aggs, T, false, VectorXd::Zero(T));
  CHECK((res.lambda - central.lambda).cwiseAbs().maxCoeff() < 1e-5);
  double dist = total_cost(aggs, res.schedules), cent = central.objective;
  CHECK(std::abs(dist - cent) <= 1e-3 * std::max(1.0, std::abs(cent)));
}

TEST_CASE("smoothed LP assets converge and match the centralized solve") {
  const int T = 3;
  std::vector<Aggregator> aggs(2);
  aggs[0].id = 0;
  aggs[0].prosumers = {slack(T, 0.5, {0.5})};
  AssetParams sp;
  sp.rho = 1.0;
  sp.capacity = 1.5;
  sp.u_init = 0.5;
  sp.c1_pos = {0.1};
  sp.c1_neg = {0.05};
  aggs[1].id = 1;
  aggs[1].prosumers = {tcl("t", T), make("st", AssetKind::Storage, sp, T)};
  PricingConfig cfg;
  cfg.alpha_hat = 1.5;
  cfg.smoothing = 0.2;
  auto res = run_pricing(aggs, cfg, PricingContext{}, T);
  REQUIRE(res.status == PricingStatus::Converged);
  CHECK(res.iterations < 100);
  auto central = solve_centralized(aggs, T, false, VectorXd::Zero(T), cfg.smoothing);
  double dist = total_cost(aggs, res.schedules, cfg.smoothing);
  CHECK(std::abs(dist - central.objective) <= 1e-3 * std::max(1.0, std::abs(central.objective)));
}

TEST_CASE("budgets hold at the cleared price") {
  const int T = 3;
  std::vector<Aggregator> aggs(2);
  aggs[0].id = 0;
  aggs[0].prosumers = {slack(T, 0.5, {1.0})};
  aggs[1].id = 1;
  aggs[1].prosumers = {tcl("t1", T), tcl("t2", T)};
  aggs[1].prosumers[1].budget = 0.5;  // binding for a consumer
  PricingConfig cfg;
  cfg.alpha_hat = 1.5;
  auto before = aggs;
  auto res = run_pricing(aggs, cfg, PricingContext{}, T);
  REQUIRE(res.status == PricingStatus::Converged);
  for (std::size_t n = 0; n < aggs.size(); ++n)
    for (std::size_t i = 0; i < aggs[n].prosumers.size(); ++i) {
      const auto& pr = before[n].prosumers[i];
      VectorXd p = res.schedules[n].P.row(static_cast<Eigen::Index>(i)).transpose();
      auto rep = resources::feasibility_check(pr.asset, p, res.lambda, pr.budget, !pr.budget_exempt);
      CHECK(rep.feasible(1e-6));
    }
  CHECK(res.billing.size() == 3);
}

TEST_CASE("silent aggregator takes the recycle path") {
  const int T = 2;
  std::vector<Aggregator> aggs(2);
  aggs[0].id = 0;
  aggs[0].prosumers = {slack(T, 0.5)};
  aggs[1].id = 1;
  aggs[1].prosumers = {fixed("load", AssetKind::InflexibleLoad, {-1.0}, T)};
  PricingConfig cfg;
  cfg.alpha_hat = 2.0;
  PricingContext ctx;
  ctx.silent = {1};
  auto empty = run_pricing(aggs, cfg, ctx, T);
  CHECK(empty.status == PricingStatus::Empty);
  CHECK(empty.schedules.empty());
  REQUIRE(!empty.warnings.empty());
  CHECK(empty.warnings.back().find("NoPriorSolution") != std::string::npos);

  auto good = run_pricing(aggs, cfg, PricingContext{}, T);
  REQUIRE(good.status == PricingStatus::Converged);
  ctx.previous = good;
  auto rec = run_pricing(aggs, cfg, ctx, T);
  CHECK(rec.status == PricingStatus::Recycled);
  CHECK(rec.schedules.size() == 2);
  CHECK(rec.lambda == good.lambda);
}

TEST_CASE("ledger-backed rounds are identical across execution modes") {
  const int T = 3;
  auto build = [&] {
    std::vector<Aggregator> aggs(3);
    for (int n = 0; n < 3; ++n) aggs[n].id = n;
    aggs[0].prosumers = {slack(T, 0.5, {1.0})};
    aggs[1].prosumers = {tcl("t1", T)};
    aggs[2].prosumers = {tcl("t2", T), fixed("pv", AssetKind::Renewable, {0.3}, T)};
    return aggs;
  };
  auto policy = std::make_shared<const ledger::AccessPolicy>(ledger::standard_policy());
  PricingConfig cfg;
  cfg.alpha_hat = 1.5;
  std::vector<PricingResult> out;
  for (auto mode : {ExecutionMode::Deterministic, ExecutionMode::Concurrent}) {
    ledger::Ledger gl(ledger::common_channel(), policy);
    auto aggs = build();
    PricingContext ctx;
    ctx.global = &gl;
    ctx.mode = mode;
    out.push_back(run_pricing(aggs, cfg, ctx, T));
    CHECK(gl.size() == static_cast<std::size_t>(3 * out.back().iterations));
    CHECK(ledger::verify_chain(gl.blocks()).ok);
  }
  REQUIRE(out[0].status == PricingStatus::Converged);
  CHECK(out[0].iterations == out[1].iterations);
  REQUIRE(out[0].lambda_trace.size() == out[1].lambda_trace.size());
  for (std::size_t k = 0; k < out[0].lambda_trace.size(); ++k)
    CHECK(out[0].lambda_trace[k] == out[1].lambda_trace[k]);
  for (int n = 0; n < 3; ++n) CHECK(out[0].schedules[n].P == out[1].schedules[n].P);
}

TEST_CASE("a large loose bound does not blur the qp solution") {
  // min 0.1 y^2 + 0.003 y over |y| <= 1, plus a far-away row; the optimum is y = -0.015.
  for (double far : {1.0, 1e6}) {
    qp::Problem p(1);
    p.G(0, 0) = 0.2;
    p.g(0) = 0.003;
    p.add_bounds(0, -1.0, 1.0);
    p.add_inequality(-MatrixXd::Ones(1, 1), -far);
    auto r = qp::solve(p);
    REQUIRE(r.status == qp::Status::Optimal);
    CHECK(r.y(0) == doctest::Approx(-0.015).epsilon(1e-9));
  }
  // Kink case: y = y+ - y-, costs 0.04 y+ + 0.02 y-, price 0.01 sits inside the dead band.
  qp::Problem k(2);
  k.G << 0.2, -0.2, -0.2, 0.2;
  k.g << 0.04 + 0.01, 0.02 - 0.01;
  k.add_bounds(0, 0.0, 1.0);
  k.add_bounds(1, 0.0, 1.0);
  k.add_inequality(-Eigen::RowVectorXd::Constant(2, 0.01), -1e6);
  auto r = qp::solve(k);
  REQUIRE(r.status == qp::Status::Optimal);
  CHECK(std::abs(r.y(0) - r.y(1)) < 1e-8);
}
