#include "eve/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace eve::qp {

Problem::Problem(Eigen::Index n)
    : G(Eigen::MatrixXd::Zero(n, n)),
      g(Eigen::VectorXd::Zero(n)),
      A(0, n),
      b(0),
      C(0, n),
      d(0) {}

void Problem::add_equality(const Eigen::RowVectorXd& row, double rhs) {
  A.conservativeResize(A.rows() + 1, size());
  A.row(A.rows() - 1) = row;
  b.conservativeResize(b.size() + 1);
  b(b.size() - 1) = rhs;
}

void Problem::add_inequality(const Eigen::RowVectorXd& row, double rhs) {
  C.conservativeResize(C.rows() + 1, size());
  C.row(C.rows() - 1) = row;
  d.conservativeResize(d.size() + 1);
  d(d.size() - 1) = rhs;
}

void Problem::add_bounds(Eigen::Index var, double lo, double hi) {
  Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(size());
  e(var) = 1.0;
  if (lo == hi) {
    add_equality(e, lo);
    return;
  }
  if (std::isfinite(lo)) add_inequality(e, lo);
  if (std::isfinite(hi)) add_inequality(-e, -hi);
}

namespace {

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Row residuals relative to their own right-hand side, so one large bound does not loosen the rest.
double rel_norm(const Eigen::VectorXd& res, const Eigen::VectorXd& rhs) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < res.size(); ++i) m = std::max(m, std::abs(res(i)) / (1.0 + std::abs(rhs(i))));
  return m;
}

double dual_scale(const Problem& P) { return 1.0 + inf_norm(P.g); }

void measure(const Problem& P, Result& r) {
  const auto& y = r.y;
  Eigen::VectorXd rd = P.G * y + P.g - P.A.transpose() * r.lambda - P.C.transpose() * r.mu;
  r.stationarity = inf_norm(rd);
  double prim = 0.0, comp = 0.0;
  if (P.A.rows()) prim = inf_norm(P.A * y - P.b);
  if (P.C.rows()) {
    Eigen::VectorXd slack = P.C * y - P.d;
    prim = std::max(prim, std::max(0.0, -slack.minCoeff()));
    comp = inf_norm(slack.cwiseProduct(r.mu));
  }
  r.primal_residual = prim;
  r.complementarity = comp;
  r.objective = 0.5 * y.dot(P.G * y) + P.g.dot(y);
}

// Step length keeping v + a*dv >= 0.
double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
  return a;
}

bool polish(const Problem& P, Result& r, const Eigen::VectorXd& s, const Eigen::VectorXd& z) {
  const Eigen::Index n = P.size(), me = P.A.rows();
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < P.C.rows(); ++i)
    if (z(i) > s(i)) active.push_back(i);
  const Eigen::Index ma = static_cast<Eigen::Index>(active.size());
  const Eigen::Index dim = n + me + ma;
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs(dim);
  K.topLeftCorner(n, n) = P.G;
  K.block(0, n, n, me) = P.A.transpose();
  K.block(n, 0, me, n) = P.A;
  rhs.head(n) = -P.g;
  rhs.segment(n, me) = P.b;
  for (Eigen::Index k = 0; k < ma; ++k) {
    K.block(0, n + me + k, n, 1) = P.C.row(active[k]).transpose();
    K.block(n + me + k, 0, 1, n) = P.C.row(active[k]);
    rhs(n + me + k) = P.d(active[k]);
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(K);
  Eigen::VectorXd sol = cod.solve(rhs);
  if (!sol.allFinite()) return false;

  Result cand = r;
  cand.y = sol.head(n);
  cand.lambda = -sol.segment(n, me);
  cand.mu = Eigen::VectorXd::Zero(P.C.rows());
  for (Eigen::Index k = 0; k < ma; ++k) cand.mu(active[k]) = -sol(n + me + k);
  if (ma && cand.mu.minCoeff() < -1e-9) return false;
  measure(P, cand);
  double prim = P.A.rows() ? rel_norm(P.A * cand.y - P.b, P.b) : 0.0;
  if (P.C.rows()) prim = std::max(prim, rel_norm((P.C * cand.y - P.d).cwiseMin(0.0), P.d));
  if (prim > 1e-9 || cand.stationarity > 1e-9 * dual_scale(P)) return false;
  if (cand.stationarity > std::max(r.stationarity, 1e-12) * 10 &&
      cand.primal_residual > r.primal_residual)
    return false;
  cand.mu = cand.mu.cwiseMax(0.0);
  measure(P, cand);
  r = cand;
  return true;
}

}  // namespace

Result solve(const Problem& P, const Options& opts) {
  const Eigen::Index n = P.size(), me = P.A.rows(), mi = P.C.rows();
  Result r;
  r.y = Eigen::VectorXd::Zero(n);
  r.lambda = Eigen::VectorXd::Zero(me);
  r.mu = Eigen::VectorXd::Zero(mi);
  const double reg = 1e-10;
  const double scale = dual_scale(P);

  Eigen::VectorXd s = Eigen::VectorXd::Ones(mi), z = Eigen::VectorXd::Ones(mi);
  if (mi) s = (P.C * r.y - P.d).cwiseMax(1.0);

  auto kkt_solve = [&](const Eigen::VectorXd& rd, const Eigen::VectorXd& rp,
                       const Eigen::VectorXd& ri, const Eigen::VectorXd& rc,
                       Eigen::VectorXd& dy, Eigen::VectorXd& dl, Eigen::VectorXd& dz,
                       Eigen::VectorXd& ds) {
    Eigen::VectorXd w = z.cwiseQuotient(s);
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + me, n + me);
    K.topLeftCorner(n, n) = P.G + P.C.transpose() * w.asDiagonal() * P.C;
    K.topLeftCorner(n, n).diagonal().array() += reg;
    K.topRightCorner(n, me) = P.A.transpose();
    K.bottomLeftCorner(me, n) = P.A;
    K.bottomRightCorner(me, me).diagonal().array() -= reg;
    Eigen::VectorXd t = (rc + z.cwiseProduct(ri)).cwiseQuotient(s);
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -rd - P.C.transpose() * t;
    rhs.tail(me) = -rp;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
    Eigen::VectorXd sol = lu.solve(rhs);
    sol += lu.solve(rhs - K * sol);  // one refinement step
    dy = sol.head(n);
    dl = -sol.tail(me);
    dz = -t - w.cwiseProduct(P.C * dy);
    ds = P.C * dy + ri;
  };

  bool converged = false;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    Eigen::VectorXd rd = P.G * r.y + P.g - P.A.transpose() * r.lambda - P.C.transpose() * z;
    Eigen::VectorXd rp = P.A * r.y - P.b;
    Eigen::VectorXd ri = P.C * r.y - s - P.d;
    double mu = mi ? s.dot(z) / static_cast<double>(mi) : 0.0;
    if (!rd.allFinite() || !r.y.allFinite()) break;
    if (inf_norm(rd) <= opts.tolerance * scale && rel_norm(rp, P.b) <= opts.tolerance &&
        rel_norm(ri, P.d) <= opts.tolerance && mu <= opts.tolerance * scale) {
      converged = true;
      break;
    }
    Eigen::VectorXd dy, dl, dz, ds;
    if (mi == 0) {
      kkt_solve(rd, rp, ri, Eigen::VectorXd::Zero(0), dy, dl, dz, ds);
      r.y += dy;
      r.lambda += dl;
      continue;
    }
    // Predictor.
    Eigen::VectorXd rc = s.cwiseProduct(z);
    kkt_solve(rd, rp, ri, rc, dy, dl, dz, ds);
    double a_aff = std::min(max_step(s, ds), max_step(z, dz));
    double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(mi);
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    // Corrector.
    rc = s.cwiseProduct(z) + ds.cwiseProduct(dz) - Eigen::VectorXd::Constant(mi, sigma * mu);
    kkt_solve(rd, rp, ri, rc, dy, dl, dz, ds);
    double a = 0.995 * std::min(max_step(s, ds), max_step(z, dz));
    a = std::min(a, 1.0);
    r.y += a * dy;
    r.lambda += a * dl;
    z += a * dz;
    s += a * ds;
    // Keep strictly interior.
    s = s.cwiseMax(1e-300);
    z = z.cwiseMax(1e-300);
  }
  r.iterations = it;
  r.mu = z;
  if (!r.y.allFinite()) {
    r.y = Eigen::VectorXd::Zero(n);
    r.status = Status::Infeasible;
    measure(P, r);
    return r;
  }
  measure(P, r);
  if (converged) {
    r.status = Status::Optimal;
    if (opts.polish && mi) polish(P, r, s, z);
    return r;
  }
  double prim = me ? rel_norm(P.A * r.y - P.b, P.b) : 0.0;
  if (mi) prim = std::max(prim, rel_norm((P.C * r.y - P.d).cwiseMin(0.0), P.d));
  r.status = prim > 1e-6 ? Status::Infeasible : Status::Stalled;
  // A loose but usable point still counts when all residuals are small.
  if (r.status == Status::Stalled && r.stationarity < 1e-6 * scale &&
      r.complementarity < 1e-6 * scale) {
    r.status = Status::Optimal;
    if (opts.polish && mi) polish(P, r, s, z);
  }
  return r;
}

}  // namespace eve::qp
