#pragma once

#include "eve/grid.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <string>

namespace eve {

using json = nlohmann::json;

json to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);
json to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);

/// Grid file: {"base_mva", "slack_v2", "root", "buses": [{"id", "region"}],
/// "lines": [{"from", "to", "r", "x"}], "sensor_sharing": [{"region", "buses"}]}.
json to_json(const grid::GridTopology& topo);
grid::GridTopology topology_from_json(const json& j);

json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace eve
