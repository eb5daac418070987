#include "eve/resources.hpp"

#include "eve/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace eve::resources {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct KindName {
  AssetKind kind;
  std::string_view name;
};
constexpr KindName kKindNames[] = {
    {AssetKind::EV, "EV"},
    {AssetKind::DeferrableAppliance, "DeferrableAppliance"},
    {AssetKind::TCL, "TCL"},
    {AssetKind::Storage, "Storage"},
    {AssetKind::Renewable, "Renewable"},
    {AssetKind::Slack, "Slack"},
    {AssetKind::InflexibleLoad, "InflexibleLoad"},
};

void invalid(const std::string& what) { throw Error(ErrorCode::InvalidParams, what); }

Eigen::VectorXd broadcast(const std::vector<double>& v, int T, double fallback,
                          const char* name) {
  if (v.empty()) return Eigen::VectorXd::Constant(T, fallback);
  if (v.size() == 1) return Eigen::VectorXd::Constant(T, v[0]);
  if (static_cast<int>(v.size()) != T)
    invalid(std::string(name) + " must have length 1 or T");
  return Eigen::Map<const Eigen::VectorXd>(v.data(), T);
}

Eigen::MatrixXd shift(int T) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(T, T);
  for (int t = 1; t < T; ++t) J(t, t - 1) = 1.0;
  return J;
}

void zero_cost(AssetModel& m) {
  const int T = m.T;
  m.cost.C2 = Eigen::MatrixXd::Zero(T, T);
  m.cost.c1 = Eigen::VectorXd::Zero(T);
  m.cost.c1_pos = Eigen::VectorXd::Zero(T);
  m.cost.c1_neg = Eigen::VectorXd::Zero(T);
  m.cost.anchor = Eigen::VectorXd::Zero(T);
}

void no_extra_controls(AssetModel& m) {
  m.Eu = Eigen::MatrixXd::Zero(0, m.controls());
  m.eu = Eigen::VectorXd::Zero(0);
  m.Fu = Eigen::MatrixXd::Zero(0, m.controls());
  m.fu = Eigen::VectorXd::Zero(0);
}

void nonnegative(const Eigen::VectorXd& v, const char* name) {
  if (v.size() && v.minCoeff() < 0.0) invalid(std::string(name) + " must be non-negative");
}

}  // namespace

std::string_view to_string(AssetKind kind) {
  for (const auto& k : kKindNames)
    if (k.kind == kind) return k.name;
  return "Unknown";
}

AssetKind kind_from_string(std::string_view name) {
  for (const auto& k : kKindNames)
    if (k.name == name) return k.kind;
  throw Error(ErrorCode::InvalidParams, "unknown asset kind " + std::string(name));
}

AssetModel build_asset(AssetKind kind, const AssetParams& prm, int T) {
  if (T < 1) invalid("horizon must be at least one interval");
  AssetModel m;
  m.kind = kind;
  m.T = T;
  m.params = prm;
  zero_cost(m);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(T, T);
  const Eigen::MatrixXd J = shift(T);

  switch (kind) {
    case AssetKind::EV: {
      if (!(prm.rho > 0.0)) invalid("EV rate must be positive");
      if (!(prm.capacity > 0.0)) invalid("EV capacity must be positive");
      if (prm.u_init < 0.0 || prm.u_init > prm.capacity) invalid("EV initial charge out of range");
      if (prm.t_a < 0 || prm.t_a > T - 1) invalid("EV arrival outside the horizon");
      if (prm.t_d <= prm.t_a) invalid("EV deadline before arrival");
      if (prm.tau_c < 0.0 || prm.tau_s < 0.0) invalid("EV times must be non-negative");
      m.A = J - I;
      m.ell = Eigen::VectorXd::Zero(T);
      m.ell(0) = prm.u_init;
      m.u_lo = Eigen::VectorXd::Zero(T);
      m.u_hi = Eigen::VectorXd::Constant(T, prm.capacity);
      m.p_lo = Eigen::VectorXd::Zero(T);
      m.p_hi = Eigen::VectorXd::Zero(T);
      for (int t = prm.t_a; t < std::min(prm.t_d, T); ++t) m.p_lo(t) = -prm.rho;
      no_extra_controls(m);
      const double cap = prm.rho * std::max(0, prm.t_d - T);
      if (prm.t_d <= T) {
        // Full by the end of interval t_d - 1.
        m.Eu = Eigen::MatrixXd::Zero(1, T);
        m.Eu(0, prm.t_d - 1) = 1.0;
        m.eu = Eigen::VectorXd::Constant(1, prm.capacity);
      } else {
        // What is left after the horizon must fit in the remaining charging time.
        m.Fu = Eigen::MatrixXd::Zero(1, T);
        m.Fu(0, T - 1) = 1.0;
        m.fu = Eigen::VectorXd::Constant(1, prm.capacity - cap);
      }
      m.cost.c1 = broadcast(prm.c1, T, 0.0, "c1");
      if (prm.c_d < 0.0) invalid("EV deadline credit must be non-negative");
      m.cost.deadline_credit = prm.c_d;
      m.cost.deadline_offset = prm.capacity - prm.u_init;
      m.cost.deadline_cap = cap;
      m.cost.c0 = prm.c0;
      break;
    }
    case AssetKind::DeferrableAppliance: {
      const int len = static_cast<int>(prm.cycle.size());
      if (len == 0) invalid("deferrable appliance needs a non-empty cycle");
      const int d = len - 1;
      if (prm.cycle[0] <= 0.0) invalid("cycle must start with positive demand");
      for (double h : prm.cycle)
        if (h < 0.0) invalid("cycle demand must be non-negative");
      if (T < d + 1) invalid("cycle longer than the horizon");
      m.A = Eigen::MatrixXd::Zero(T + d, T);
      for (int tau = 0; tau < T; ++tau)
        for (int j = 0; j <= d; ++j) m.A(tau + j, tau) = -prm.cycle[j];
      m.ell = Eigen::VectorXd::Zero(T + d);
      m.u_lo = Eigen::VectorXd::Zero(T);
      m.u_hi = Eigen::VectorXd::Ones(T);
      // Starts that would run past the horizon are excluded.
      for (int tau = T - d; tau < T; ++tau) m.u_hi(tau) = 0.0;
      no_extra_controls(m);
      m.Eu = Eigen::MatrixXd::Ones(1, T);
      m.eu = Eigen::VectorXd::Ones(1);
      double hmax = *std::max_element(prm.cycle.begin(), prm.cycle.end());
      m.p_lo = Eigen::VectorXd::Constant(T, -hmax);
      m.p_hi = Eigen::VectorXd::Zero(T);
      Eigen::VectorXd delay(T);
      for (int t = 0; t < T; ++t) delay(t) = prm.c1_tilde * (T - 1 - t);
      // c1' p = delay' u on the first T rows.
      m.cost.c1 = m.A_T().transpose().triangularView<Eigen::Upper>().solve(delay);
      m.cost.c0 = prm.c0_tilde;
      break;
    }
    case AssetKind::TCL: {
      if (!(prm.R > 0.0) || !(prm.C > 0.0)) invalid("TCL R and C must be positive");
      if (prm.eta == 0.0) invalid("TCL efficiency must be non-zero");
      if (!(prm.rho > 0.0)) invalid("TCL rate must be positive");
      if (prm.u_min > prm.u_max) invalid("TCL comfort band is empty");
      if (prm.c2_tilde < 0.0) invalid("TCL comfort weight must be non-negative");
      const double tau_h = prm.R * prm.C;
      m.A = tau_h * (I - J) + I;
      Eigen::VectorXd theta_o = broadcast(prm.theta_o, T, prm.theta_r, "theta_o");
      Eigen::VectorXd eps = broadcast(prm.disturbance, T, 0.0, "disturbance");
      Eigen::VectorXd ell_tilde =
          ((Eigen::VectorXd::Constant(T, prm.theta_r) - theta_o) + eps) / (prm.R * prm.eta);
      m.ell = ell_tilde;
      m.ell(0) -= tau_h * prm.u_init;
      m.u_lo = Eigen::VectorXd::Constant(T, prm.u_min);
      m.u_hi = Eigen::VectorXd::Constant(T, prm.u_max);
      no_extra_controls(m);
      m.p_lo = Eigen::VectorXd::Constant(T, -prm.rho);
      m.p_hi = Eigen::VectorXd::Zero(T);
      // c2~ ||A^-1 (p - l)||^2 - c0~
      Eigen::MatrixXd Ainv = m.A.triangularView<Eigen::Lower>().solve(I);
      Eigen::MatrixXd W = Ainv.transpose() * Ainv;
      m.cost.C2 = prm.c2_tilde * W;
      m.cost.c1 = -2.0 * prm.c2_tilde * W * m.ell;
      m.cost.c0 = prm.c2_tilde * m.ell.dot(W * m.ell) - prm.c0_tilde;
      break;
    }
    case AssetKind::Storage: {
      if (!(prm.rho > 0.0)) invalid("storage rate must be positive");
      if (!(prm.capacity > 0.0)) invalid("storage capacity must be positive");
      if (prm.u_init < 0.0 || prm.u_init > prm.capacity)
        invalid("storage initial charge out of range");
      m.A = I - J;
      m.ell = Eigen::VectorXd::Zero(T);
      m.ell(0) = -prm.u_init;
      m.u_lo = Eigen::VectorXd::Zero(T);
      m.u_hi = Eigen::VectorXd::Constant(T, prm.capacity);
      no_extra_controls(m);
      m.p_lo = Eigen::VectorXd::Constant(T, -prm.rho);
      m.p_hi = Eigen::VectorXd::Constant(T, prm.rho);
      m.cost.c1_pos = broadcast(prm.c1_pos, T, 0.0, "c1_pos");
      m.cost.c1_neg = broadcast(prm.c1_neg, T, 0.0, "c1_neg");
      nonnegative(m.cost.c1_pos, "c1_pos");
      nonnegative(m.cost.c1_neg, "c1_neg");
      break;
    }
    case AssetKind::Renewable:
    case AssetKind::InflexibleLoad: {
      if (prm.forecast.empty()) invalid("fixed profile needs a forecast");
      m.A = Eigen::MatrixXd::Zero(T, 0);
      m.ell = broadcast(prm.forecast, T, 0.0, "forecast");
      if (kind == AssetKind::Renewable && m.ell.minCoeff() < 0.0)
        invalid("renewable forecast must be non-negative");
      m.u_lo = m.u_hi = Eigen::VectorXd::Zero(0);
      no_extra_controls(m);
      m.p_lo = m.p_hi = m.ell;
      break;
    }
    case AssetKind::Slack: {
      if (prm.quadratic < 0.0) invalid("slack quadratic weight must be non-negative");
      m.A = I;
      m.ell = Eigen::VectorXd::Zero(T);
      m.u_lo = Eigen::VectorXd::Constant(T, -kInf);
      m.u_hi = Eigen::VectorXd::Constant(T, kInf);
      no_extra_controls(m);
      m.p_lo = Eigen::VectorXd::Constant(T, -kInf);
      m.p_hi = Eigen::VectorXd::Constant(T, kInf);
      Eigen::VectorXd ps = broadcast(prm.schedule, T, 0.0, "schedule");
      m.cost.anchor = ps;
      m.cost.c1_pos = broadcast(prm.c1_pos, T, 0.0, "c1_pos");
      m.cost.c1_neg = broadcast(prm.c1_neg, T, 0.0, "c1_neg");
      nonnegative(m.cost.c1_pos, "c1_pos");
      nonnegative(m.cost.c1_neg, "c1_neg");
      m.cost.C2 = prm.quadratic * I;
      m.cost.c1 = -2.0 * prm.quadratic * ps + broadcast(prm.c1, T, 0.0, "c1");
      m.cost.c0 = prm.quadratic * ps.squaredNorm() + prm.c0;
      break;
    }
  }
  return m;
}

double eval_cost(const AssetModel& a, const Eigen::VectorXd& p) {
  if (p.size() != a.T) throw Error(ErrorCode::DimensionMismatch, "profile length differs from T");
  const CostSpec& c = a.cost;
  double v = p.dot(c.C2 * p) + c.c1.dot(p) + c.c0;
  Eigen::VectorXd dev = p - c.anchor;
  v += c.c1_pos.dot(dev.cwiseMax(0.0)) + c.c1_neg.dot((-dev).cwiseMax(0.0));
  if (c.deadline_credit != 0.0)
    v -= c.deadline_credit * std::min(c.deadline_offset + p.sum(), c.deadline_cap);
  return v;
}

Eigen::VectorXd controls_from_profile(const AssetModel& a, const Eigen::VectorXd& p) {
  if (p.size() != a.T) throw Error(ErrorCode::DimensionMismatch, "profile length differs from T");
  if (a.controls() == 0) return Eigen::VectorXd::Zero(0);
  Eigen::MatrixXd AT = a.A_T();
  // All square maps here are lower triangular.
  return AT.triangularView<Eigen::Lower>().solve(p - a.ell_T());
}

bool FeasibilityReport::feasible(double tol) const {
  for (const auto& v : violations)
    if (v.magnitude > tol) return false;
  return true;
}

double FeasibilityReport::worst(const std::string& family) const {
  double w = 0.0;
  for (const auto& v : violations)
    if (v.family == family) w = std::max(w, v.magnitude);
  return w;
}

FeasibilityReport feasibility_check(const AssetModel& a, const Eigen::VectorXd& p,
                                    const Eigen::VectorXd& lambda, double budget,
                                    bool check_budget) {
  if (p.size() != a.T) throw Error(ErrorCode::DimensionMismatch, "profile length differs from T");
  FeasibilityReport rep;
  auto note = [&](const char* family, double mag) {
    if (mag > 0.0) rep.violations.push_back({family, mag});
  };
  if (a.controls() == 0) {
    note("profile", (p - a.ell_T()).cwiseAbs().maxCoeff());
  } else {
    Eigen::VectorXd u = controls_from_profile(a, p);
    double w = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (std::isfinite(a.u_lo(i))) w = std::max(w, a.u_lo(i) - u(i));
      if (std::isfinite(a.u_hi(i))) w = std::max(w, u(i) - a.u_hi(i));
    }
    if (a.Eu.rows()) w = std::max(w, (a.Eu * u - a.eu).cwiseAbs().maxCoeff());
    if (a.Fu.rows()) w = std::max(w, (a.fu - a.Fu * u).maxCoeff());
    note("control", w);
  }
  double w = 0.0;
  for (Eigen::Index t = 0; t < p.size(); ++t) {
    if (std::isfinite(a.p_lo(t))) w = std::max(w, a.p_lo(t) - p(t));
    if (std::isfinite(a.p_hi(t))) w = std::max(w, p(t) - a.p_hi(t));
  }
  note("power", w);
  if (check_budget) {
    if (lambda.size() != a.T) throw Error(ErrorCode::DimensionMismatch, "price length differs from T");
    note("budget", p.dot(lambda) - budget);
  }
  return rep;
}

AssetProgram build_program(const AssetModel& a) {
  const int T = a.T;
  const Eigen::Index nu = a.controls();
  const CostSpec& c = a.cost;

  std::vector<int> pos, neg;
  for (int t = 0; t < T; ++t) {
    if (c.c1_pos(t) != 0.0) pos.push_back(t);
    if (c.c1_neg(t) != 0.0) neg.push_back(t);
  }
  const bool credit = c.deadline_credit > 0.0 && c.deadline_cap > 0.0;
  const Eigen::Index n = nu + static_cast<Eigen::Index>(pos.size() + neg.size()) + (credit ? 1 : 0);

  AssetProgram prog;
  prog.problem = qp::Problem(n);
  qp::Problem& q = prog.problem;
  prog.P = Eigen::MatrixXd::Zero(T, n);
  prog.P.leftCols(nu) = a.A_T();
  prog.p0 = a.ell_T();
  const Eigen::MatrixXd& P = prog.P;
  const Eigen::VectorXd& p0 = prog.p0;

  for (Eigen::Index i = 0; i < nu; ++i) q.add_bounds(i, a.u_lo(i), a.u_hi(i));
  for (Eigen::Index r = 0; r < a.Eu.rows(); ++r) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
    row.head(nu) = a.Eu.row(r);
    q.add_equality(row, a.eu(r));
  }
  for (Eigen::Index r = 0; r < a.Fu.rows(); ++r) {
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
    row.head(nu) = a.Fu.row(r);
    q.add_inequality(row, a.fu(r));
  }
  if (nu > 0) {
    for (int t = 0; t < T; ++t) {
      bool lo = std::isfinite(a.p_lo(t)), hi = std::isfinite(a.p_hi(t));
      if (lo && hi && a.p_lo(t) == a.p_hi(t)) {
        q.add_equality(P.row(t), a.p_lo(t) - p0(t));
        continue;
      }
      if (lo) q.add_inequality(P.row(t), a.p_lo(t) - p0(t));
      if (hi) q.add_inequality(-P.row(t), p0(t) - a.p_hi(t));
    }
  }

  // p'C2p + c1'p + c0 in terms of y.
  q.G = 2.0 * P.transpose() * c.C2 * P;
  q.G = 0.5 * (q.G + q.G.transpose());
  q.g = P.transpose() * (2.0 * c.C2 * p0 + c.c1);
  prog.constant = p0.dot(c.C2 * p0) + c.c1.dot(p0) + c.c0;

  Eigen::Index k = nu;
  for (int t : pos) {
    // s >= p_t - anchor_t, s >= 0
    Eigen::RowVectorXd row = -P.row(t);
    row(k) = 1.0;
    q.add_inequality(row, p0(t) - c.anchor(t));
    q.add_bounds(k, 0.0, kInf);
    q.g(k) = c.c1_pos(t);
    ++k;
  }
  for (int t : neg) {
    Eigen::RowVectorXd row = P.row(t);
    row(k) = 1.0;
    q.add_inequality(row, c.anchor(t) - p0(t));
    q.add_bounds(k, 0.0, kInf);
    q.g(k) = c.c1_neg(t);
    ++k;
  }
  if (credit) {
    // m <= offset + 1'p,  m <= cap;  cost -c_d m
    Eigen::RowVectorXd row = P.colwise().sum();
    row(k) = -1.0;
    q.add_inequality(row, -(c.deadline_offset + p0.sum()));
    Eigen::RowVectorXd capr = Eigen::RowVectorXd::Zero(n);
    capr(k) = -1.0;
    q.add_inequality(capr, -c.deadline_cap);
    q.g(k) = -c.deadline_credit;
    ++k;
  }
  return prog;
}

}  // namespace eve::resources
