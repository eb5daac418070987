#include "eve/json_io.hpp"

#include "eve/error.hpp"

#include <fstream>
#include <sstream>

namespace eve {

json to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, "expected a numeric array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

json to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(to_json(Eigen::VectorXd(m.row(r).transpose())));
  return out;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, "expected an array of rows");
  if (j.empty()) return {};
  Eigen::MatrixXd m(j.size(), j[0].size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != j[0].size()) throw Error(ErrorCode::ParseError, "ragged matrix");
    for (std::size_t c = 0; c < j[r].size(); ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json to_json(const grid::GridTopology& topo) {
  json j;
  j["base_mva"] = topo.base_mva;
  j["slack_v2"] = topo.slack_v2;
  j["root"] = topo.root;
  j["buses"] = json::array();
  for (grid::BusId b : topo.buses) {
    auto it = topo.region_of.find(b);
    j["buses"].push_back({{"id", b}, {"region", it == topo.region_of.end() ? 0 : it->second}});
  }
  j["lines"] = json::array();
  for (const auto& l : topo.lines)
    j["lines"].push_back({{"from", l.from}, {"to", l.to}, {"r", l.r}, {"x", l.x}});
  j["sensor_sharing"] = json::array();
  for (const auto& s : topo.sensor_sharing)
    j["sensor_sharing"].push_back({{"region", s.region}, {"buses", s.buses}});
  return j;
}

grid::GridTopology topology_from_json(const json& j) {
  try {
    grid::GridTopology t;
    t.base_mva = j.value("base_mva", 10.0);
    t.slack_v2 = j.value("slack_v2", 1.0);
    t.root = j.at("root").get<int>();
    for (const auto& b : j.at("buses")) {
      int id = b.at("id").get<int>();
      t.buses.push_back(id);
      t.region_of[id] = b.value("region", 0);
    }
    for (const auto& l : j.at("lines"))
      t.lines.push_back({l.at("from").get<int>(), l.at("to").get<int>(), l.at("r").get<double>(),
                         l.at("x").get<double>()});
    if (j.contains("sensor_sharing"))
      for (const auto& s : j["sensor_sharing"])
        t.sensor_sharing.push_back({s.at("region").get<int>(), s.at("buses").get<std::vector<int>>()});
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("grid file: ") + e.what());
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path);
}

}  // namespace eve
