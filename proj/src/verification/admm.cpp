#include "eve/verification.hpp"

#include "eve/error.hpp"

#include <cmath>

namespace eve::verification {

void VerificationConfig::validate() const {
  if (!(c1 > 0 && c2 > 0 && c3 > 0 && c4 > 0))
    throw Error(ErrorCode::InvalidParams, "verification weights must be positive");
  if (!(eps > 0 && eps_pi > 0 && eps_B > 0 && eig_tol > 0))
    throw Error(ErrorCode::InvalidParams, "verification tolerances must be positive");
  if (beta < 0 || eig_max_iters < 1 || max_iterations < 2 || alpha_power <= 0)
    throw Error(ErrorCode::InvalidParams, "bad verification limits");
  if (stall_window < 0 || burn_in < 0)
    throw Error(ErrorCode::InvalidParams, "stall window and burn-in must be non-negative");
}

VerificationConfig VerificationConfig::strict() {
  VerificationConfig c;
  c.c3 = 1e-3;
  return c;
}

double alpha_k(int k, double power) {
  if (k < 1) k = 1;
  return 1.0 / std::pow(static_cast<double>(k), power);
}

RegionSolver::RegionSolver(const RegionState& s, const VerificationConfig& cfg) {
  const auto& m = s.m;
  const Eigen::Index n = static_cast<Eigen::Index>(m.size());
  const Eigen::Index T = s.horizon();
  if (s.z.rows() != static_cast<Eigen::Index>(m.measured.size()) ||
      s.variance.size() != s.z.rows() ||
      s.pstar.rows() != static_cast<Eigen::Index>(m.injections.size()) || s.pstar.cols() != T)
    throw Error(ErrorCode::DimensionMismatch, "region " + std::to_string(m.region) + " data");

  M_ = cfg.c2 * m.H.transpose() * m.H;
  rhs_ = Eigen::MatrixXd::Zero(n, T);
  for (std::size_t i = 0; i < m.measured.size(); ++i) {
    const auto li = static_cast<Eigen::Index>(m.measured[i]);
    const double w = cfg.c1 / s.variance(static_cast<Eigen::Index>(i));
    M_(li, li) += w;
    rhs_.row(li) += w * s.z.row(static_cast<Eigen::Index>(i));
  }
  for (std::size_t i = 0; i < m.injections.size(); ++i) {
    const auto li = static_cast<Eigen::Index>(m.injections[i]);
    M_(li, li) += cfg.c3;
    rhs_.row(li) += cfg.c3 * s.pstar.row(static_cast<Eigen::Index>(i));
  }
  c4D_ = cfg.c4 * m.D;
  M_.diagonal() += c4D_;

  // Coordinates no term touches are decoupled; pin them to zero.
  for (Eigen::Index i = 0; i < n; ++i)
    if (M_.row(i).cwiseAbs().maxCoeff() == 0.0) M_(i, i) = 1.0;

  // Coordinates whose only other owner was removed get a small ridge.
  if (!s.orphaned.empty()) {
    const double ridge = 1e-8 * (1.0 + M_.diagonal().maxCoeff());
    for (std::size_t li : s.orphaned) M_(static_cast<Eigen::Index>(li), static_cast<Eigen::Index>(li)) += ridge;
  }

  llt_.compute(M_);
  bool ok = llt_.info() == Eigen::Success;
  if (ok && n > 0) {
    const Eigen::VectorXd piv = Eigen::MatrixXd(llt_.matrixL()).diagonal();
    ok = piv.minCoeff() * piv.minCoeff() > 1e-12 * M_.diagonal().maxCoeff();
  }
  if (!ok)
    throw Error(ErrorCode::SingularSystem,
                "region " + std::to_string(m.region) +
                    " has coordinates fixed by neither sensors, physics, schedules nor neighbours");
}

Eigen::MatrixXd RegionSolver::solve(const Eigen::MatrixXd& ups) const {
  Eigen::MatrixXd rhs = rhs_ + c4D_.asDiagonal() * ups;
  return llt_.solve(rhs);
}

Eigen::MatrixXd initial_x(const RegionState& s, InitMode mode) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.m.size()), s.horizon());
  if (mode == InitMode::Backfill)
    for (std::size_t i = 0; i < s.m.measured.size(); ++i)
      x.row(static_cast<Eigen::Index>(s.m.measured[i])) = s.z.row(static_cast<Eigen::Index>(i));
  return x;
}

Eigen::MatrixXd shared_slice(const RegionState& s, grid::RegionId neighbour) {
  auto it = s.m.shared.find(neighbour);
  if (it == s.m.shared.end()) return Eigen::MatrixXd(0, s.x.cols());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(it->second.size()), s.x.cols());
  for (std::size_t i = 0; i < it->second.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = s.x.row(static_cast<Eigen::Index>(it->second[i]));
  return out;
}

Slices outgoing(const RegionState& s) {
  Slices out;
  for (const auto& [nb, idx] : s.m.shared) out[nb] = shared_slice(s, nb);
  return out;
}

Eigen::MatrixXd consensus_average(const grid::RegionMatrices& m, const Slices& incoming,
                                  Eigen::Index horizon) {
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.size()), horizon);
  for (const auto& [nb, slice] : incoming) {
    auto it = m.shared.find(nb);
    if (it == m.shared.end()) continue;
    if (slice.rows() != static_cast<Eigen::Index>(it->second.size()) || slice.cols() != horizon)
      throw Error(ErrorCode::DimensionMismatch, "slice from region " + std::to_string(nb));
    for (std::size_t i = 0; i < it->second.size(); ++i)
      psi.row(static_cast<Eigen::Index>(it->second[i])) += slice.row(static_cast<Eigen::Index>(i));
  }
  return m.Dbar.asDiagonal() * psi;
}

void admm_init(RegionState& s, Eigen::MatrixXd x0, const Slices& incoming) {
  s.x = std::move(x0);
  s.psi = consensus_average(s.m, incoming, s.horizon());
  s.ups = 0.5 * (s.psi + s.x);
  s.k = 0;
}

Eigen::MatrixXd admm_x_update(const RegionState& s, const RegionSolver& solver) {
  return solver.solve(s.ups);
}

void admm_consensus_update(RegionState& s, Eigen::MatrixXd x_next, const Slices& incoming) {
  Eigen::MatrixXd psi_next = consensus_average(s.m, incoming, s.horizon());
  s.ups += psi_next - 0.5 * (s.psi + s.x);
  s.psi = std::move(psi_next);
  s.x = std::move(x_next);
  ++s.k;
}

}  // namespace eve::verification
