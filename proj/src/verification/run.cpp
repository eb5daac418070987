#include "eve/verification.hpp"

#include "eve/error.hpp"
#include "eve/json_io.hpp"
#include "eve/ledger.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace eve::verification {

namespace {

using grid::RegionId;

std::string message_key(int window, int attempt, int k, RegionId from, RegionId to) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "verification/%06d/%02d/%05d/%d>%d", window, attempt, k, from, to);
  return buf;
}

std::string trust_key(int window, int attempt, int k, RegionId n) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "verification/%06d/%02d/%05d/d%d", window, attempt, k, n);
  return buf;
}

// Carries the shared slices between regions, either in memory or through the global ledger.
class Mailbox {
 public:
  Mailbox(const Exchange& ex, int attempt) : ex_(ex), attempt_(attempt) {}

  void send(RegionId from, RegionId to, int k, const Eigen::MatrixXd& slice) {
    if (ex_.gl) {
      ledger::rc_put_round(*ex_.gl, ledger::Identity::admin(from), "verification", ex_.window, k,
                           message_key(ex_.window, attempt_, k, from, to),
                           json{{"from", from}, {"to", to}, {"slice", to_json(slice)}}, {from, to});
      pending_.insert({from, to});
    } else {
      inbox_[{from, to}] = slice;
    }
  }

  // Latest slice from `from`, or the previous one when nothing arrived this round.
  const Eigen::MatrixXd* receive(RegionId from, RegionId to, int k) {
    if (ex_.gl && pending_.count({from, to})) {
      try {
        auto v = ex_.gl->query(message_key(ex_.window, attempt_, k, from, to),
                               ledger::Identity::admin(to));
        inbox_[{from, to}] = matrix_from_json(v.at("slice"));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NotFound) throw;
      }
    }
    auto it = inbox_.find({from, to});
    return it == inbox_.end() ? nullptr : &it->second;
  }

  void end_round() { pending_.clear(); }

  // Publishes a row of disagreement scores and reads every row back.
  Eigen::MatrixXd share_rows(const Eigen::MatrixXd& d, const std::vector<RegionId>& order, int k) {
    if (!ex_.gl) return d;
    for (std::size_t i = 0; i < order.size(); ++i)
      ledger::rc_put_round(*ex_.gl, ledger::Identity::admin(order[i]), "verification", ex_.window,
                           k, trust_key(ex_.window, attempt_, k, order[i]),
                           json{{"region", order[i]},
                                {"d", to_json(Eigen::VectorXd(d.row(static_cast<Eigen::Index>(i))))}});
    Eigen::MatrixXd out(d.rows(), d.cols());
    const auto reader = ledger::Identity::admin(order.front());
    for (std::size_t i = 0; i < order.size(); ++i)
      out.row(static_cast<Eigen::Index>(i)) =
          vector_from_json(ex_.gl->query(trust_key(ex_.window, attempt_, k, order[i]), reader).at("d"));
    return out;
  }

 private:
  const Exchange& ex_;
  int attempt_;
  std::map<std::pair<RegionId, RegionId>, Eigen::MatrixXd> inbox_;
  std::set<std::pair<RegionId, RegionId>> pending_;
};

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

Attempt run_attempt(std::map<RegionId, RegionState>& states, const grid::CommunicationGraph& graph,
                    const VerificationConfig& cfg, const Exchange& ex, int attempt_no,
                    std::vector<std::string>& warnings) {
  Attempt at;
  for (const auto& [id, s] : states) at.order.push_back(id);
  const auto N = static_cast<Eigen::Index>(at.order.size());
  std::map<RegionId, Eigen::Index> pos;
  for (Eigen::Index i = 0; i < N; ++i) pos[at.order[static_cast<std::size_t>(i)]] = i;

  std::map<RegionId, RegionSolver> solvers;
  for (auto& [id, s] : states) solvers.emplace(id, RegionSolver(s, cfg));

  const auto& atk = ex.attack;
  const bool attacker_here = atk.active() && states.count(atk.attacker);
  auto message = [&](RegionId from, RegionId to, int k, Eigen::MatrixXd slice) -> std::optional<Eigen::MatrixXd> {
    if (attacker_here && from == atk.attacker && k > 0) {
      if (atk.mode == adversary::AttackMode::Silent) return std::nullopt;
      if (atk.mode == adversary::AttackMode::MessageFDIA)
        return adversary::perturb_message(slice, atk, k, to, graph);
    }
    return slice;
  };

  Mailbox box(ex, attempt_no);
  auto exchange = [&](int k, const std::map<RegionId, Eigen::MatrixXd>& xs) {
    for (const auto& [id, s] : states)
      for (const auto& [nb, idx] : s.m.shared)
        if (auto msg = message(id, nb, k, rows_of(xs.at(id), idx))) box.send(id, nb, k, *msg);
    std::map<RegionId, Slices> incoming;
    for (const auto& [id, s] : states)
      for (const auto& [nb, idx] : s.m.shared)
        if (const auto* msg = box.receive(nb, id, k)) incoming[id][nb] = *msg;
    box.end_round();
    return incoming;
  };

  // Initial exchange.
  std::map<RegionId, Eigen::MatrixXd> x0;
  for (const auto& [id, s] : states) x0[id] = initial_x(s, cfg.init);
  auto incoming = exchange(0, x0);
  for (auto& [id, s] : states) admm_init(s, x0[id], incoming[id]);

  std::optional<std::pair<RegionId, RegionId>> trace;
  if (ex.trace_pair && states.count(ex.trace_pair->first) &&
      states.at(ex.trace_pair->first).m.shared.count(ex.trace_pair->second) &&
      states.count(ex.trace_pair->second)) {
    trace = ex.trace_pair;
    const auto& s = states.at(trace->first);
    for (std::size_t li : s.m.shared.at(trace->second)) at.trace_vars.push_back(s.m.vars[li]);
  }

  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(N, N);
  bool warned_eig = false;
  for (int k = 1; k <= cfg.max_iterations; ++k) {
    std::map<RegionId, Eigen::MatrixXd> xn;
    for (const auto& [id, s] : states) xn[id] = admm_x_update(s, solvers.at(id));
    incoming = exchange(k, xn);

    double step = 0.0, gap = 0.0;
    const double alpha = alpha_k(k, cfg.alpha_power);
    for (auto& [id, s] : states) {
      step = std::max(step, (xn[id] - s.x).cwiseAbs().maxCoeff());
      for (const auto& [nb, slice] : incoming[id]) {
        Eigen::MatrixXd own = rows_of(xn[id], s.m.shared.at(nb));
        const Eigen::Index i = pos.at(id), j = pos.at(nb);
        d(i, j) = disagreement_update(d(i, j), own, slice, alpha);
        if (own.size() > 0) gap = std::max(gap, (own - slice).cwiseAbs().maxCoeff());
      }
    }
    for (auto& [id, s] : states) admm_consensus_update(s, std::move(xn[id]), incoming[id]);
    at.steps.push_back(step);
    at.disagreement.push_back(gap);
    if (trace) {
      const auto& sn = states.at(trace->first);
      const auto& sm = states.at(trace->second);
      at.trace_n.push_back(rows_of(sn.x, sn.m.shared.at(trace->second)).col(0));
      at.trace_m.push_back(rows_of(sm.x, sm.m.shared.at(trace->first)).col(0));
    }

    Eigen::MatrixXd shared_d = box.share_rows(d, at.order, k);
    try {
      at.pis.push_back(trust_scores(shared_d, cfg).pi);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoConvergence) throw;
      if (!warned_eig) warnings.push_back(e.what());
      warned_eig = true;
      at.pis.push_back(at.pis.empty() ? Eigen::VectorXd::Constant(N, 1.0 / static_cast<double>(N))
                                      : at.pis.back());
    }
    at.iterations = k;

    auto check = check_termination(at.steps, at.pis, cfg);
    if (check.kind == Termination::Converged) {
      at.end = Termination::Converged;
      return at;
    }
    if (check.kind == Termination::AttackerIdentified && N > 1) {
      Eigen::Index arg;
      at.pis.back().maxCoeff(&arg);
      at.end = Termination::AttackerIdentified;
      at.identified = at.order[static_cast<std::size_t>(arg)];
      return at;
    }
  }
  return at;
}

}  // namespace

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Converged: return "converged";
    case Outcome::GraphDisconnected: return "graph_disconnected";
    case Outcome::InsufficientRegions: return "insufficient_regions";
    case Outcome::IterationLimit: return "iteration_limit";
  }
  return "?";
}

std::map<RegionId, RegionState> build_states(const VerificationProblem& p,
                                              const std::set<RegionId>& active,
                                              const std::set<RegionId>& removed) {
  if (!p.net) throw Error(ErrorCode::InvalidParams, "verification needs a network");
  const auto& net = *p.net;
  const auto S = static_cast<Eigen::Index>(p.sensors.vars.size());
  if (p.z.rows() != S || p.variance.size() != S ||
      p.pstar.rows() != static_cast<Eigen::Index>(net.bus_count()) || p.pstar.cols() != p.z.cols())
    throw Error(ErrorCode::DimensionMismatch, "verification inputs do not match the sensors");
  std::map<std::size_t, Eigen::Index> row_of;
  for (Eigen::Index i = 0; i < S; ++i) row_of[p.sensors.vars[static_cast<std::size_t>(i)]] = i;

  std::map<RegionId, RegionState> out;
  for (RegionId r : active) {
    RegionState s;
    s.m = grid::build_region_matrices(net, r, p.sensors, active);
    const auto T = p.z.cols();
    s.z.resize(static_cast<Eigen::Index>(s.m.measured_vars.size()), T);
    s.variance.resize(s.z.rows());
    for (std::size_t i = 0; i < s.m.measured_vars.size(); ++i) {
      const Eigen::Index row = row_of.at(s.m.measured_vars[i]);
      s.z.row(static_cast<Eigen::Index>(i)) = p.z.row(row);
      s.variance(static_cast<Eigen::Index>(i)) = p.variance(row);
    }
    s.pstar.resize(static_cast<Eigen::Index>(s.m.own_buses.size()), T);
    for (std::size_t i = 0; i < s.m.own_buses.size(); ++i)
      s.pstar.row(static_cast<Eigen::Index>(i)) = p.pstar.row(static_cast<Eigen::Index>(s.m.own_buses[i]));
    for (RegionId gone : removed) {
      auto gv = grid::region_variables(net, gone);
      for (std::size_t li = 0; li < s.m.vars.size(); ++li)
        if (s.m.D(static_cast<Eigen::Index>(li)) == 0.0 &&
            std::binary_search(gv.begin(), gv.end(), s.m.vars[li]))
          s.orphaned.push_back(li);
    }
    std::sort(s.orphaned.begin(), s.orphaned.end());
    s.orphaned.erase(std::unique(s.orphaned.begin(), s.orphaned.end()), s.orphaned.end());
    out.emplace(r, std::move(s));
  }
  return out;
}

VerificationReport run_verification(const VerificationProblem& problem,
                                    const VerificationConfig& cfg, const Exchange& ex) {
  cfg.validate();
  if (!problem.net) throw Error(ErrorCode::InvalidParams, "verification needs a network");
  const auto& net = *problem.net;
  std::set<RegionId> active = problem.regions;
  if (active.empty())
    for (RegionId r : net.regions()) active.insert(r);
  const int N = static_cast<int>(active.size());
  const int max_removals = cfg.max_removals < 0 ? std::max(0, N - 2) : cfg.max_removals;

  VerificationReport rep;
  int removals = 0;
  std::set<RegionId> removed;
  for (int attempt_no = 0;; ++attempt_no) {
    auto graph = grid::build_communication_graph(net, active);
    if (!graph.connected()) {
      rep.outcome = Outcome::GraphDisconnected;
      rep.warnings.push_back("communication graph disconnected after removing region " +
                             std::to_string(rep.attackers.back()) + "; partial result");
      break;
    }
    auto states = build_states(problem, active, removed);
    Attempt at = run_attempt(states, graph, cfg, ex, attempt_no, rep.warnings);
    rep.total_iterations += at.iterations;
    rep.states = std::move(states);
    const auto end = at.end;
    const auto id = at.identified;
    rep.attempts.push_back(std::move(at));
    if (end == Termination::Converged) {
      rep.outcome = Outcome::Converged;
      break;
    }
    if (end != Termination::AttackerIdentified) {
      rep.outcome = Outcome::IterationLimit;
      break;
    }
    rep.attackers.push_back(*id);
    if (removals + 1 > max_removals) {
      rep.outcome = Outcome::InsufficientRegions;
      rep.warnings.push_back("no more regions can be removed");
      break;
    }
    ++removals;
    active.erase(*id);
    removed.insert(*id);
  }

  const auto T = problem.pstar.cols();
  rep.verified = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(net.bus_count()), T,
                                           std::numeric_limits<double>::quiet_NaN());
  rep.deviation = Eigen::MatrixXd::Zero(rep.verified.rows(), T);
  for (const auto& [id, s] : rep.states) {
    if (!active.count(id)) continue;
    for (std::size_t i = 0; i < s.m.own_buses.size(); ++i) {
      const auto b = static_cast<Eigen::Index>(s.m.own_buses[i]);
      rep.verified.row(b) = s.x.row(static_cast<Eigen::Index>(s.m.injections[i]));
      rep.deviation.row(b) = problem.pstar.row(b) - rep.verified.row(b);
    }
  }
  return rep;
}

}  // namespace eve::verification
