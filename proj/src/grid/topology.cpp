#include "eve/error.hpp"
#include "eve/grid.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

namespace eve::grid {

std::size_t RadialNetwork::bus_index(BusId id) const {
  auto it = index_of_.find(id);
  if (it == index_of_.end())
    throw Error(ErrorCode::DimensionMismatch, "unknown bus " + std::to_string(id));
  return it->second;
}

std::vector<RegionId> RadialNetwork::regions() const {
  std::vector<RegionId> out(region_.begin(), region_.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::size_t> RadialNetwork::region_buses(RegionId region) const {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < bus_count(); ++b)
    if (region_[b] == region) out.push_back(b);
  std::sort(out.begin(), out.end(),
            [&](std::size_t a, std::size_t c) { return bus_id(a) < bus_id(c); });
  return out;
}

VarKind RadialNetwork::var_kind(std::size_t var) const {
  const std::size_t nb = 3 * bus_count();
  if (var < nb) {
    switch (var % 3) {
      case 0: return VarKind::P;
      case 1: return VarKind::Q;
      default: return VarKind::V2;
    }
  }
  switch ((var - nb) % 4) {
    case 0: return VarKind::LineP;
    case 1: return VarKind::LineQ;
    case 2: return VarKind::C2;
    default: return VarKind::Aux;
  }
}

std::size_t RadialNetwork::var_bus(std::size_t var) const {
  const std::size_t nb = 3 * bus_count();
  if (var < nb) return var / 3;
  return to_[(var - nb) / 4];
}

std::string RadialNetwork::var_name(std::size_t var) const {
  const std::size_t nb = 3 * bus_count();
  std::ostringstream os;
  if (var < nb) {
    static const char* names[] = {"p", "q", "v2"};
    os << names[var % 3] << '_' << bus_id(var / 3);
  } else {
    static const char* names[] = {"P", "Q", "c2", "aux"};
    std::size_t l = (var - nb) / 4;
    os << names[(var - nb) % 4] << '_' << bus_id(from_[l]) << '_' << bus_id(to_[l]);
  }
  return os.str();
}

RadialNetwork validate_radial(GridTopology topology) {
  RadialNetwork net;
  const std::size_t nb = topology.buses.size();
  if (nb == 0) throw Error(ErrorCode::Disconnected, "no buses");

  for (std::size_t i = 0; i < nb; ++i) {
    if (!net.index_of_.emplace(topology.buses[i], i).second)
      throw Error(ErrorCode::DimensionMismatch,
                  "duplicate bus " + std::to_string(topology.buses[i]));
  }
  auto root_it = net.index_of_.find(topology.root);
  if (root_it == net.index_of_.end())
    throw Error(ErrorCode::Disconnected, "root bus not in bus set");
  net.root_ = root_it->second;

  const std::size_t nl = topology.lines.size();
  if (nl + 1 > nb) throw Error(ErrorCode::CycleDetected, "more lines than a tree allows");

  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(nb);  // (neighbour, line)
  for (std::size_t l = 0; l < nl; ++l) {
    const Line& ln = topology.lines[l];
    auto f = net.index_of_.find(ln.from);
    auto t = net.index_of_.find(ln.to);
    if (f == net.index_of_.end() || t == net.index_of_.end())
      throw Error(ErrorCode::Disconnected, "line references unknown bus");
    if (f->second == t->second) throw Error(ErrorCode::CycleDetected, "self loop");
    adj[f->second].push_back({t->second, l});
    adj[t->second].push_back({f->second, l});
  }

  // BFS from the root; orient every line parent -> child.
  net.from_.assign(nl, 0);
  net.to_.assign(nl, 0);
  net.parent_line_.assign(nb, -1);
  net.child_lines_.assign(nb, {});
  std::vector<char> seen(nb, 0), line_used(nl, 0);
  std::deque<std::size_t> queue{net.root_};
  seen[net.root_] = 1;
  while (!queue.empty()) {
    std::size_t b = queue.front();
    queue.pop_front();
    net.bfs_.push_back(b);
    for (auto [nbr, l] : adj[b]) {
      if (line_used[l]) continue;
      line_used[l] = 1;
      if (seen[nbr]) throw Error(ErrorCode::CycleDetected, "cycle through bus " +
                                                               std::to_string(topology.buses[nbr]));
      seen[nbr] = 1;
      net.from_[l] = b;
      net.to_[l] = nbr;
      net.parent_line_[nbr] = static_cast<int>(l);
      net.child_lines_[b].push_back(l);
      queue.push_back(nbr);
    }
  }
  if (net.bfs_.size() != nb) throw Error(ErrorCode::Disconnected, "not all buses reachable");
  for (std::size_t l = 0; l < nl; ++l) {
    Line& ln = topology.lines[l];
    ln.from = topology.buses[net.from_[l]];
    ln.to = topology.buses[net.to_[l]];
  }

  // Regions: every bus assigned, each region connected.
  net.region_.assign(nb, 0);
  for (std::size_t b = 0; b < nb; ++b) {
    auto it = topology.region_of.find(topology.buses[b]);
    if (it == topology.region_of.end())
      throw Error(ErrorCode::NonContiguousRegion,
                  "bus " + std::to_string(topology.buses[b]) + " has no region");
    net.region_[b] = it->second;
  }
  // In a tree a region is connected iff exactly one of its buses has its parent outside it.
  std::map<RegionId, int> heads;
  for (std::size_t b = 0; b < nb; ++b) {
    int pl = net.parent_line_[b];
    if (pl < 0 || net.region_[net.from_[pl]] != net.region_[b]) ++heads[net.region_[b]];
  }
  for (auto [r, count] : heads)
    if (count != 1)
      throw Error(ErrorCode::NonContiguousRegion, "region " + std::to_string(r) +
                                                      " splits into " + std::to_string(count) +
                                                      " pieces");

  for (const SensorShare& share : topology.sensor_sharing) {
    if (!heads.count(share.region))
      throw Error(ErrorCode::UnknownRegion, "sensor share for unknown region");
    for (BusId b : share.buses)
      if (!net.index_of_.count(b))
        throw Error(ErrorCode::UnknownRegion, "sensor share references unknown bus");
  }

  net.topo_ = std::move(topology);
  return net;
}

void assign_regions_by_subtree(GridTopology& topo, const std::map<BusId, RegionId>& heads) {
  if (!heads.count(topo.root)) throw Error(ErrorCode::UnknownRegion, "root bus needs a region head");
  GridTopology probe = topo;
  probe.region_of.clear();
  for (BusId b : probe.buses) probe.region_of[b] = 0;
  probe.sensor_sharing.clear();
  RadialNetwork net = validate_radial(probe);
  std::vector<RegionId> region(net.bus_count(), 0);
  for (std::size_t b : net.bfs_order()) {
    auto it = heads.find(net.bus_id(b));
    if (it != heads.end())
      region[b] = it->second;
    else
      region[b] = region[net.line_from(net.parent_line(b))];
  }
  topo.region_of.clear();
  for (std::size_t b = 0; b < net.bus_count(); ++b) topo.region_of[net.bus_id(b)] = region[b];
}

SystemState SystemState::zeros(const RadialNetwork& net) {
  SystemState s;
  const auto nb = static_cast<Eigen::Index>(net.bus_count());
  const auto nl = static_cast<Eigen::Index>(net.line_count());
  s.p = Eigen::VectorXd::Zero(nb);
  s.q = Eigen::VectorXd::Zero(nb);
  s.v2 = Eigen::VectorXd::Zero(nb);
  s.P = Eigen::VectorXd::Zero(nl);
  s.Q = Eigen::VectorXd::Zero(nl);
  s.c2 = Eigen::VectorXd::Zero(nl);
  s.aux = Eigen::VectorXd::Zero(nl);
  return s;
}

Eigen::VectorXd stack(const SystemState& s, const RadialNetwork& net) {
  const auto nb = static_cast<Eigen::Index>(net.bus_count());
  const auto nl = static_cast<Eigen::Index>(net.line_count());
  if (s.p.size() != nb || s.q.size() != nb || s.v2.size() != nb || s.P.size() != nl ||
      s.Q.size() != nl || s.c2.size() != nl || s.aux.size() != nl)
    throw Error(ErrorCode::DimensionMismatch, "state does not match topology");
  Eigen::VectorXd x(net.var_count());
  for (Eigen::Index b = 0; b < nb; ++b) {
    x(net.var_p(b)) = s.p(b);
    x(net.var_q(b)) = s.q(b);
    x(net.var_v2(b)) = s.v2(b);
  }
  for (Eigen::Index l = 0; l < nl; ++l) {
    x(net.var_line_p(l)) = s.P(l);
    x(net.var_line_q(l)) = s.Q(l);
    x(net.var_c2(l)) = s.c2(l);
    x(net.var_aux(l)) = s.aux(l);
  }
  return x;
}

SystemState unstack(const Eigen::VectorXd& x, const RadialNetwork& net) {
  if (static_cast<std::size_t>(x.size()) != net.var_count())
    throw Error(ErrorCode::DimensionMismatch, "stacked vector has wrong length");
  SystemState s = SystemState::zeros(net);
  for (std::size_t b = 0; b < net.bus_count(); ++b) {
    s.p(b) = x(net.var_p(b));
    s.q(b) = x(net.var_q(b));
    s.v2(b) = x(net.var_v2(b));
  }
  for (std::size_t l = 0; l < net.line_count(); ++l) {
    s.P(l) = x(net.var_line_p(l));
    s.Q(l) = x(net.var_line_q(l));
    s.c2(l) = x(net.var_c2(l));
    s.aux(l) = x(net.var_aux(l));
  }
  return s;
}

std::vector<LinearRow> build_distflow_rows(const RadialNetwork& net) {
  const std::size_t nb = net.bus_count(), nl = net.line_count();
  const double base = net.base_mva();
  std::vector<LinearRow> rows(2 * nb + 2 * nl);

  // Balance at bus b: injection + inflow - losses on the inflow line - outflows = 0.
  for (std::size_t b = 0; b < nb; ++b) {
    LinearRow& re = rows[b];
    LinearRow& im = rows[nb + b];
    re.terms.push_back({net.var_p(b), 1.0});
    im.terms.push_back({net.var_q(b), 1.0});
    int pl = net.parent_line(b);
    if (pl >= 0) {
      const Line& ln = net.topology().lines[pl];
      re.terms.push_back({net.var_line_p(pl), 1.0});
      re.terms.push_back({net.var_c2(pl), -ln.r * base});
      im.terms.push_back({net.var_line_q(pl), 1.0});
      im.terms.push_back({net.var_c2(pl), -ln.x * base});
    }
    for (std::size_t cl : net.child_lines(b)) {
      re.terms.push_back({net.var_line_p(cl), -1.0});
      im.terms.push_back({net.var_line_q(cl), -1.0});
    }
  }
  // Voltage drop along line l (from f to t) and the linearised auxiliary relation.
  for (std::size_t l = 0; l < nl; ++l) {
    const Line& ln = net.topology().lines[l];
    LinearRow& vd = rows[2 * nb + l];
    vd.terms.push_back({net.var_v2(net.line_from(l)), 1.0});
    vd.terms.push_back({net.var_v2(net.line_to(l)), -1.0});
    vd.terms.push_back({net.var_line_p(l), -2.0 * ln.r / base});
    vd.terms.push_back({net.var_line_q(l), -2.0 * ln.x / base});
    vd.terms.push_back({net.var_c2(l), ln.r * ln.r + ln.x * ln.x});
    LinearRow& ax = rows[2 * nb + nl + l];
    ax.terms.push_back({net.var_aux(l), 1.0});
    ax.terms.push_back({net.var_v2(net.line_from(l)), -1.0});
  }
  return rows;
}

Eigen::MatrixXd distflow_matrix(const RadialNetwork& net) {
  auto rows = build_distflow_rows(net);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(rows.size(), net.var_count());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (auto [j, c] : rows[i].terms) H(i, j) += c;
  return H;
}

Eigen::VectorXd distflow_residual(const Eigen::VectorXd& x, const RadialNetwork& net) {
  if (static_cast<std::size_t>(x.size()) != net.var_count())
    throw Error(ErrorCode::DimensionMismatch, "stacked vector has wrong length");
  auto rows = build_distflow_rows(net);
  Eigen::VectorXd r(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double acc = 0.0;
    for (auto [j, c] : rows[i].terms) acc += c * x(j);
    r(i) = acc;
  }
  return r;
}

Eigen::VectorXd distflow_residual(const SystemState& state, const RadialNetwork& net) {
  return distflow_residual(stack(state, net), net);
}

}  // namespace eve::grid
