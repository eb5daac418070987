#include "eve/verification.hpp"

#include "eve/error.hpp"

#include <algorithm>
#include <cmath>

namespace eve::verification {

double disagreement_update(double d, const Eigen::MatrixXd& own, const Eigen::MatrixXd& other,
                           double alpha) {
  if (own.rows() != other.rows() || own.cols() != other.cols())
    throw Error(ErrorCode::DimensionMismatch, "shared slices differ in shape");
  if (own.size() == 0) return (1.0 - alpha) * d;
  const double denom = static_cast<double>(own.rows()) * static_cast<double>(own.cols());
  return (1.0 - alpha) * d + (alpha / 4.0) / denom * (own - other).squaredNorm();
}

Eigen::MatrixXd normalize_disagreement(const Eigen::MatrixXd& d, double eps_B) {
  Eigen::MatrixXd B = d;
  for (Eigen::Index i = 0; i < B.rows(); ++i) {
    const double s = B.row(i).sum();
    B.row(i) /= (s + eps_B);
  }
  return B;
}

TrustResult trust_scores(const Eigen::MatrixXd& B, double tol, int max_iters) {
  const Eigen::Index n = B.rows();
  if (B.cols() != n) throw Error(ErrorCode::DimensionMismatch, "B must be square");
  TrustResult r;
  if (n == 0) return r;
  // The lazy chain (I + B')/2 shares the principal eigenvector and is aperiodic.
  Eigen::VectorXd pi = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  const Eigen::MatrixXd Bt = B.transpose();
  for (int it = 1; it <= max_iters; ++it) {
    Eigen::VectorXd next = 0.5 * (pi + Bt * pi);
    next /= next.sum();
    const double change = (next - pi).cwiseAbs().maxCoeff();
    pi = std::move(next);
    if (change <= tol) {
      r.pi = pi;
      r.iterations = it;
      return r;
    }
  }
  throw Error(ErrorCode::NoConvergence,
              "trust power iteration hit " + std::to_string(max_iters) + " iterations");
}

TrustResult trust_scores(const Eigen::MatrixXd& d, const VerificationConfig& cfg) {
  return trust_scores(normalize_disagreement(d, cfg.eps_B), cfg.eig_tol, cfg.eig_max_iters);
}

std::pair<double, double> excluded_stats(const Eigen::VectorXd& pi, Eigen::Index m) {
  const Eigen::Index n = pi.size();
  if (n < 2) return {0.0, 0.0};
  double mean = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (i != m) mean += pi(i);
  mean /= static_cast<double>(n - 1);
  double var = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (i != m) var += (pi(i) - mean) * (pi(i) - mean);
  var /= static_cast<double>(n - 1);
  return {mean, std::sqrt(var)};
}

std::optional<Eigen::Index> t2_candidate(const Eigen::VectorXd& pi, double beta) {
  std::optional<Eigen::Index> best;
  double best_margin = 0.0;
  for (Eigen::Index m = 0; m < pi.size(); ++m) {
    auto [mu, sigma] = excluded_stats(pi, m);
    const double margin = pi(m) - (mu + beta * sigma);
    if (margin > 0.0 && (!best || margin > best_margin)) {
      best = m;
      best_margin = margin;
    }
  }
  return best;
}

bool stalled(const std::vector<double>& steps, const VerificationConfig& cfg) {
  const auto k = static_cast<int>(steps.size());
  if (k < cfg.burn_in) return false;
  const int W = cfg.stall_window;
  if (W == 0) return true;
  if (k < 2 * W) return false;
  const auto last = std::max_element(steps.end() - W, steps.end());
  const auto prev = std::max_element(steps.end() - 2 * W, steps.end() - W);
  return *last >= cfg.stall_ratio * *prev;
}

TerminationCheck check_termination(const std::vector<double>& steps,
                                   const std::vector<Eigen::VectorXd>& pis,
                                   const VerificationConfig& cfg) {
  TerminationCheck out;
  if (!steps.empty() && steps.back() <= cfg.eps) {
    out.kind = Termination::Converged;
    return out;
  }
  if (pis.size() < 2) return out;
  const auto& cur = pis.back();
  const auto& prev = pis[pis.size() - 2];
  if (cur.size() != prev.size() || (cur - prev).cwiseAbs().maxCoeff() > cfg.eps_pi) return out;
  if (!stalled(steps, cfg)) return out;
  if (auto m = t2_candidate(cur, cfg.beta)) {
    out.kind = Termination::AttackerIdentified;
    out.attacker = m;
  }
  return out;
}

}  // namespace eve::verification
