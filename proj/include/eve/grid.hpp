#pragma once

// Radial distribution network: topology validation, DistFlow residuals,
// backward/forward sweep power flow, and per-region selection matrices.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace eve::grid {

using BusId = int;
using RegionId = int;

struct Line {
  BusId from = 0;
  BusId to = 0;
  double r = 0.0;  // per unit
  double x = 0.0;  // per unit
};

/// Extra bus variables a region may read from a neighbouring zone's sensors.
struct SensorShare {
  RegionId region = 0;
  std::vector<BusId> buses;
};

struct GridTopology {
  double base_mva = 10.0;
  double slack_v2 = 1.0;
  BusId root = 1;
  std::vector<BusId> buses;
  std::vector<Line> lines;
  std::map<BusId, RegionId> region_of;
  std::vector<SensorShare> sensor_sharing;
};

enum class VarKind { P, Q, V2, LineP, LineQ, C2, Aux };

/// A topology that passed validate_radial. Lines are oriented away from the root.
class RadialNetwork {
 public:
  const GridTopology& topology() const { return topo_; }

  std::size_t bus_count() const { return topo_.buses.size(); }
  std::size_t line_count() const { return topo_.lines.size(); }
  double base_mva() const { return topo_.base_mva; }

  std::size_t bus_index(BusId id) const;
  BusId bus_id(std::size_t index) const { return topo_.buses[index]; }
  std::size_t root_index() const { return root_; }
  bool has_bus(BusId id) const { return index_of_.count(id) != 0; }

  std::size_t line_from(std::size_t line) const { return from_[line]; }
  std::size_t line_to(std::size_t line) const { return to_[line]; }
  /// Incoming line of a bus, or -1 at the root.
  int parent_line(std::size_t bus) const { return parent_line_[bus]; }
  const std::vector<std::size_t>& child_lines(std::size_t bus) const { return child_lines_[bus]; }
  /// Bus indices in breadth-first order from the root.
  const std::vector<std::size_t>& bfs_order() const { return bfs_; }

  RegionId region_of_bus(std::size_t bus) const { return region_[bus]; }
  std::vector<RegionId> regions() const;
  std::vector<std::size_t> region_buses(RegionId region) const;

  // Stacked variable layout: per bus (p, q, v2), then per line (P, Q, c2, x').
  std::size_t var_count() const { return 3 * bus_count() + 4 * line_count(); }
  std::size_t var_p(std::size_t bus) const { return 3 * bus; }
  std::size_t var_q(std::size_t bus) const { return 3 * bus + 1; }
  std::size_t var_v2(std::size_t bus) const { return 3 * bus + 2; }
  std::size_t var_line_p(std::size_t line) const { return 3 * bus_count() + 4 * line; }
  std::size_t var_line_q(std::size_t line) const { return var_line_p(line) + 1; }
  std::size_t var_c2(std::size_t line) const { return var_line_p(line) + 2; }
  std::size_t var_aux(std::size_t line) const { return var_line_p(line) + 3; }
  VarKind var_kind(std::size_t var) const;
  /// Bus index for bus variables; to-bus index for line variables.
  std::size_t var_bus(std::size_t var) const;
  std::string var_name(std::size_t var) const;

  /// Equation rows: real balance per bus, reactive balance per bus, voltage drop per line,
  /// auxiliary relation per line.
  std::size_t equation_count() const { return 2 * bus_count() + 2 * line_count(); }

 private:
  friend RadialNetwork validate_radial(GridTopology topology);

  GridTopology topo_;
  std::map<BusId, std::size_t> index_of_;
  std::size_t root_ = 0;
  std::vector<std::size_t> from_, to_;
  std::vector<int> parent_line_;
  std::vector<std::vector<std::size_t>> child_lines_;
  std::vector<std::size_t> bfs_;
  std::vector<RegionId> region_;
};

/// Checks connectivity, radiality and region contiguity; orients lines away from the root.
/// Throws Error{CycleDetected | Disconnected | NonContiguousRegion}.
RadialNetwork validate_radial(GridTopology topology);

/// Puts every bus in the region of its nearest ancestor listed in `heads` (root included).
void assign_regions_by_subtree(GridTopology& topo, const std::map<BusId, RegionId>& heads);

/// Physical state. Powers in MW / MVAr (injection positive), v2 and c2 in p.u.^2.
struct SystemState {
  Eigen::VectorXd p, q, v2;        // per bus
  Eigen::VectorXd P, Q, c2, aux;   // per line

  static SystemState zeros(const RadialNetwork& net);
};

Eigen::VectorXd stack(const SystemState& state, const RadialNetwork& net);
SystemState unstack(const Eigen::VectorXd& x, const RadialNetwork& net);

struct LinearRow {
  std::vector<std::pair<std::size_t, double>> terms;  // (var index, coefficient)
};

/// Linear DistFlow rows H x = 0 with the auxiliary relation linearised.
std::vector<LinearRow> build_distflow_rows(const RadialNetwork& net);
Eigen::MatrixXd distflow_matrix(const RadialNetwork& net);

/// Stacked residuals (real balance, reactive balance, voltage drop, auxiliary).
Eigen::VectorXd distflow_residual(const SystemState& state, const RadialNetwork& net);
Eigen::VectorXd distflow_residual(const Eigen::VectorXd& x, const RadialNetwork& net);

struct PowerFlowOptions {
  int max_iterations = 200;
  double tolerance = 1e-10;
};

/// Backward/forward sweep. Injections are indexed by bus index; the root entry is
/// replaced by the slack injection. Throws Error{NoConvergence | VoltageCollapse}.
SystemState solve_power_flow(const RadialNetwork& net, const Eigen::VectorXd& p_inj,
                             const Eigen::VectorXd& q_inj, const PowerFlowOptions& opts = {});

/// Global variable indices carrying a sensor.
struct SensorPlacement {
  std::vector<std::size_t> vars;
};

/// Sensor owner: the region of the bus, or of the line's to-bus.
RegionId sensor_region(const RadialNetwork& net, std::size_t var);

struct RegionMatrices {
  RegionId region = 0;
  std::vector<std::size_t> vars;          // global var indices, ascending
  std::vector<std::size_t> own_buses;     // bus indices, ascending bus id
  std::vector<std::size_t> equations;     // global equation rows fully inside vars
  Eigen::MatrixXd H;                      // equations x vars
  std::vector<std::size_t> measured;      // local indices, S_A rows
  std::vector<std::size_t> measured_vars; // global indices matching `measured`
  std::vector<std::size_t> injections;    // local indices of own-bus p, S_P rows
  std::map<RegionId, std::vector<std::size_t>> shared;  // S_nm rows (local), ascending global
  Eigen::VectorXd D;
  Eigen::VectorXd Dbar;

  std::size_t size() const { return vars.size(); }
  std::optional<std::size_t> local_index(std::size_t global) const;

  Eigen::MatrixXd selection(std::size_t global_size) const;  // S^(n)
  Eigen::MatrixXd measured_selection() const;                // S_A
  Eigen::MatrixXd injection_selection() const;               // S_P
  Eigen::MatrixXd shared_selection(RegionId neighbour) const;  // S_nm
};

/// Variables of region n: own buses, one-hop periphery buses, lines touching own buses,
/// and configured sensor-share buses. Only `active` regions are considered for sharing.
/// Throws Error{UnknownRegion}.
RegionMatrices build_region_matrices(const RadialNetwork& net, RegionId region,
                                     const SensorPlacement& sensors,
                                     const std::set<RegionId>& active = {});

/// Global variable set of a region (without the matrices).
std::vector<std::size_t> region_variables(const RadialNetwork& net, RegionId region);

struct CommunicationGraph {
  std::vector<RegionId> nodes;
  std::set<std::pair<RegionId, RegionId>> edges;  // (lo, hi)
  bool clique3 = false;
  std::vector<std::string> warnings;

  bool adjacent(RegionId a, RegionId b) const;
  std::vector<RegionId> neighbours(RegionId n) const;
  bool connected() const;
  std::vector<std::array<RegionId, 3>> triangles() const;
};

CommunicationGraph build_communication_graph(const RadialNetwork& net,
                                             const std::set<RegionId>& active = {});
/// Induced subgraph without `removed`.
CommunicationGraph without(const CommunicationGraph& graph, RegionId removed);

/// Sensors on every variable shared by two or more regions plus a seeded fraction of the
/// remaining ones.
SensorPlacement default_sensor_placement(const RadialNetwork& net, double interior_fraction,
                                         std::uint64_t seed);

struct MatpowerOptions {
  bool impedance_in_ohms = false;
  bool loads_in_kva = false;
  std::optional<double> power_factor;
};

struct MatpowerCase {
  GridTopology topology;
  std::map<BusId, double> pd;  // MW
  std::map<BusId, double> qd;  // MVAr
};

/// Reads the baseMVA, bus and branch tables of a MATPOWER case file. Every bus is put in
/// region 0. Throws Error{ParseError}.
MatpowerCase parse_matpower(const std::string& text, const MatpowerOptions& opts);
MatpowerCase load_matpower(const std::string& path, const MatpowerOptions& opts);

}  // namespace eve::grid
