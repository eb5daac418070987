#include "eve/error.hpp"
#include "eve/grid.hpp"

#include <cmath>

namespace eve::grid {

SystemState solve_power_flow(const RadialNetwork& net, const Eigen::VectorXd& p_inj,
                             const Eigen::VectorXd& q_inj, const PowerFlowOptions& opts) {
  const std::size_t nb = net.bus_count(), nl = net.line_count();
  if (static_cast<std::size_t>(p_inj.size()) != nb || static_cast<std::size_t>(q_inj.size()) != nb)
    throw Error(ErrorCode::DimensionMismatch, "injection vectors must have one entry per bus");
  const double base = net.base_mva();
  const auto& lines = net.topology().lines;
  const auto& order = net.bfs_order();

  SystemState s = SystemState::zeros(net);
  s.p = p_inj;
  s.q = q_inj;
  s.v2.setConstant(net.topology().slack_v2);

  for (int it = 0; it < opts.max_iterations; ++it) {
    // Current magnitudes from the previous flows and voltages.
    Eigen::VectorXd c2_prev = s.c2;
    for (std::size_t l = 0; l < nl; ++l) {
      double vf = s.v2(net.line_from(l));
      double pp = s.P(l) / base, qq = s.Q(l) / base;
      s.c2(l) = (pp * pp + qq * qq) / vf;
    }
    // Backward: sending-end flow covers the subtree demand plus line losses.
    for (auto rit = order.rbegin(); rit != order.rend(); ++rit) {
      std::size_t b = *rit;
      int pl = net.parent_line(b);
      if (pl < 0) continue;
      double P = -s.p(b), Q = -s.q(b);
      for (std::size_t cl : net.child_lines(b)) {
        P += s.P(cl);
        Q += s.Q(cl);
      }
      s.P(pl) = P + lines[pl].r * s.c2(pl) * base;
      s.Q(pl) = Q + lines[pl].x * s.c2(pl) * base;
    }
    // Forward: voltage drop from the root outwards.
    double dv = 0.0;
    for (std::size_t b : order) {
      int pl = net.parent_line(b);
      if (pl < 0) continue;
      const Line& ln = lines[pl];
      double vf = s.v2(net.line_from(pl));
      double v = vf - 2.0 * (ln.r * s.P(pl) + ln.x * s.Q(pl)) / base +
                 (ln.r * ln.r + ln.x * ln.x) * s.c2(pl);
      if (!(v > 0.0) || !std::isfinite(v))
        throw Error(ErrorCode::VoltageCollapse, "squared voltage fell to " + std::to_string(v) +
                                                    " at bus " + std::to_string(net.bus_id(b)));
      dv = std::max(dv, std::abs(v - s.v2(b)));
      s.v2(b) = v;
    }
    double dc = nl ? (s.c2 - c2_prev).cwiseAbs().maxCoeff() : 0.0;
    if (dv < opts.tolerance && dc < opts.tolerance) {
      std::size_t root = net.root_index();
      double pr = 0.0, qr = 0.0;
      for (std::size_t cl : net.child_lines(root)) {
        pr += s.P(cl);
        qr += s.Q(cl);
      }
      s.p(root) = pr;
      s.q(root) = qr;
      for (std::size_t l = 0; l < nl; ++l) {
        double pp = s.P(l) / base, qq = s.Q(l) / base;
        s.aux(l) = s.c2(l) > 0.0 ? (pp * pp + qq * qq) / s.c2(l) : s.v2(net.line_from(l));
      }
      return s;
    }
  }
  throw Error(ErrorCode::NoConvergence,
              "sweep did not converge in " + std::to_string(opts.max_iterations) + " iterations");
}

}  // namespace eve::grid
