#include "eve/error.hpp"
#include "eve/grid.hpp"

#include <algorithm>
#include <functional>
#include <random>

namespace eve::grid {

namespace {

std::set<RegionId> resolve_active(const RadialNetwork& net, const std::set<RegionId>& active) {
  if (!active.empty()) return active;
  auto all = net.regions();
  return {all.begin(), all.end()};
}

void require_region(const RadialNetwork& net, RegionId region) {
  auto all = net.regions();
  if (!std::binary_search(all.begin(), all.end(), region))
    throw Error(ErrorCode::UnknownRegion, "region " + std::to_string(region));
}

std::vector<std::size_t> share_buses(const RadialNetwork& net, RegionId region) {
  std::vector<std::size_t> out;
  for (const auto& share : net.topology().sensor_sharing)
    if (share.region == region)
      for (BusId b : share.buses) out.push_back(net.bus_index(b));
  return out;
}

}  // namespace

RegionId sensor_region(const RadialNetwork& net, std::size_t var) {
  if (var >= net.var_count()) throw Error(ErrorCode::UnknownSensor, "variable out of range");
  return net.region_of_bus(net.var_bus(var));
}

std::vector<std::size_t> region_variables(const RadialNetwork& net, RegionId region) {
  require_region(net, region);
  std::set<std::size_t> buses, lines;
  for (std::size_t b : net.region_buses(region)) {
    buses.insert(b);
    int pl = net.parent_line(b);
    if (pl >= 0) {
      lines.insert(pl);
      buses.insert(net.line_from(pl));
    }
    for (std::size_t cl : net.child_lines(b)) {
      lines.insert(cl);
      buses.insert(net.line_to(cl));
    }
  }
  for (std::size_t b : share_buses(net, region)) buses.insert(b);

  std::vector<std::size_t> vars;
  for (std::size_t b : buses) {
    vars.push_back(net.var_p(b));
    vars.push_back(net.var_q(b));
    vars.push_back(net.var_v2(b));
  }
  for (std::size_t l : lines) {
    vars.push_back(net.var_line_p(l));
    vars.push_back(net.var_line_q(l));
    vars.push_back(net.var_c2(l));
    vars.push_back(net.var_aux(l));
  }
  std::sort(vars.begin(), vars.end());
  return vars;
}

std::optional<std::size_t> RegionMatrices::local_index(std::size_t global) const {
  auto it = std::lower_bound(vars.begin(), vars.end(), global);
  if (it == vars.end() || *it != global) return std::nullopt;
  return static_cast<std::size_t>(it - vars.begin());
}

namespace {
Eigen::MatrixXd rows_to_selection(const std::vector<std::size_t>& idx, std::size_t cols) {
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(idx.size(), cols);
  for (std::size_t i = 0; i < idx.size(); ++i) S(i, idx[i]) = 1.0;
  return S;
}
}  // namespace

Eigen::MatrixXd RegionMatrices::selection(std::size_t global_size) const {
  return rows_to_selection(vars, global_size);
}

Eigen::MatrixXd RegionMatrices::measured_selection() const {
  return rows_to_selection(measured, size());
}

Eigen::MatrixXd RegionMatrices::injection_selection() const {
  return rows_to_selection(injections, size());
}

Eigen::MatrixXd RegionMatrices::shared_selection(RegionId neighbour) const {
  auto it = shared.find(neighbour);
  if (it == shared.end()) return Eigen::MatrixXd::Zero(0, size());
  return rows_to_selection(it->second, size());
}

RegionMatrices build_region_matrices(const RadialNetwork& net, RegionId region,
                                     const SensorPlacement& sensors,
                                     const std::set<RegionId>& active_in) {
  require_region(net, region);
  const auto active = resolve_active(net, active_in);

  RegionMatrices m;
  m.region = region;
  m.vars = region_variables(net, region);
  m.own_buses = net.region_buses(region);
  const std::size_t n = m.vars.size();

  auto rows = build_distflow_rows(net);
  std::vector<std::size_t> eqs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    bool inside = std::all_of(rows[i].terms.begin(), rows[i].terms.end(),
                              [&](const auto& t) { return m.local_index(t.first).has_value(); });
    if (inside) eqs.push_back(i);
  }
  m.equations = eqs;
  m.H = Eigen::MatrixXd::Zero(eqs.size(), n);
  for (std::size_t r = 0; r < eqs.size(); ++r)
    for (auto [j, c] : rows[eqs[r]].terms) m.H(r, *m.local_index(j)) += c;

  std::set<std::size_t> shared_bus_vars;
  for (std::size_t b : share_buses(net, region)) {
    shared_bus_vars.insert(net.var_p(b));
    shared_bus_vars.insert(net.var_q(b));
    shared_bus_vars.insert(net.var_v2(b));
  }
  std::set<std::size_t> measured;
  for (std::size_t v : sensors.vars) {
    if (v >= net.var_count()) throw Error(ErrorCode::UnknownSensor, "sensor variable out of range");
    if (!m.local_index(v)) continue;
    if (sensor_region(net, v) == region || shared_bus_vars.count(v)) measured.insert(v);
  }
  for (std::size_t v : measured) {
    m.measured_vars.push_back(v);
    m.measured.push_back(*m.local_index(v));
  }

  for (std::size_t b : m.own_buses) m.injections.push_back(*m.local_index(net.var_p(b)));

  m.D = Eigen::VectorXd::Zero(n);
  for (RegionId other : active) {
    if (other == region) continue;
    auto ov = region_variables(net, other);
    std::vector<std::size_t> common;
    std::set_intersection(m.vars.begin(), m.vars.end(), ov.begin(), ov.end(),
                          std::back_inserter(common));
    if (common.empty()) continue;
    auto& idx = m.shared[other];
    for (std::size_t g : common) {
      std::size_t li = *m.local_index(g);
      idx.push_back(li);
      m.D(li) += 1.0;
    }
  }
  m.Dbar = m.D.unaryExpr([](double d) { return d > 0.0 ? 1.0 / d : 0.0; });
  return m;
}

bool CommunicationGraph::adjacent(RegionId a, RegionId b) const {
  return edges.count({std::min(a, b), std::max(a, b)}) != 0;
}

std::vector<RegionId> CommunicationGraph::neighbours(RegionId n) const {
  std::vector<RegionId> out;
  for (RegionId m : nodes)
    if (m != n && adjacent(n, m)) out.push_back(m);
  return out;
}

bool CommunicationGraph::connected() const {
  if (nodes.empty()) return true;
  std::set<RegionId> seen{nodes.front()};
  std::vector<RegionId> stack{nodes.front()};
  while (!stack.empty()) {
    RegionId n = stack.back();
    stack.pop_back();
    for (RegionId m : neighbours(n))
      if (seen.insert(m).second) stack.push_back(m);
  }
  return seen.size() == nodes.size();
}

std::vector<std::array<RegionId, 3>> CommunicationGraph::triangles() const {
  std::vector<std::array<RegionId, 3>> out;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      if (!adjacent(nodes[i], nodes[j])) continue;
      for (std::size_t k = j + 1; k < nodes.size(); ++k)
        if (adjacent(nodes[i], nodes[k]) && adjacent(nodes[j], nodes[k]))
          out.push_back({nodes[i], nodes[j], nodes[k]});
    }
  return out;
}

namespace {
void finish_graph(CommunicationGraph& g) {
  g.clique3 = !g.triangles().empty();
  g.warnings.clear();
  if (!g.clique3)
    g.warnings.push_back("communication graph has no 3-clique; attacker ranking may not be unique");
}
}  // namespace

CommunicationGraph build_communication_graph(const RadialNetwork& net,
                                             const std::set<RegionId>& active_in) {
  const auto active = resolve_active(net, active_in);
  CommunicationGraph g;
  g.nodes.assign(active.begin(), active.end());
  std::map<RegionId, std::vector<std::size_t>> vars;
  for (RegionId r : g.nodes) vars[r] = region_variables(net, r);
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    for (std::size_t j = i + 1; j < g.nodes.size(); ++j) {
      const auto& a = vars[g.nodes[i]];
      const auto& b = vars[g.nodes[j]];
      std::vector<std::size_t> common;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
      if (!common.empty()) g.edges.insert({g.nodes[i], g.nodes[j]});
    }
  finish_graph(g);
  return g;
}

CommunicationGraph without(const CommunicationGraph& graph, RegionId removed) {
  CommunicationGraph g;
  for (RegionId n : graph.nodes)
    if (n != removed) g.nodes.push_back(n);
  for (auto e : graph.edges)
    if (e.first != removed && e.second != removed) g.edges.insert(e);
  finish_graph(g);
  return g;
}

SensorPlacement default_sensor_placement(const RadialNetwork& net, double interior_fraction,
                                         std::uint64_t seed) {
  std::vector<int> count(net.var_count(), 0);
  for (RegionId r : net.regions())
    for (std::size_t v : region_variables(net, r)) ++count[v];
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SensorPlacement out;
  for (std::size_t v = 0; v < net.var_count(); ++v) {
    if (net.var_kind(v) == VarKind::Aux) continue;
    double draw = u(rng);
    if (count[v] >= 2 || draw < interior_fraction) out.vars.push_back(v);
  }
  return out;
}

}  // namespace eve::grid
