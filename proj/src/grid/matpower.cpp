#include "eve/error.hpp"
#include "eve/grid.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

namespace eve::grid {

namespace {

std::string strip_comments(const std::string& text) {
  std::ostringstream out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto pos = line.find('%');
    out << (pos == std::string::npos ? line : line.substr(0, pos)) << '\n';
  }
  return out.str();
}

std::vector<std::vector<double>> read_matrix(const std::string& text, const std::string& name) {
  auto start = text.find("mpc." + name);
  if (start == std::string::npos) throw Error(ErrorCode::ParseError, "missing mpc." + name);
  auto open = text.find('[', start);
  auto close = text.find(']', open);
  if (open == std::string::npos || close == std::string::npos)
    throw Error(ErrorCode::ParseError, "malformed mpc." + name);
  std::string body = text.substr(open + 1, close - open - 1);
  for (char& c : body)
    if (c == '\n') c = ';';
  std::vector<std::vector<double>> rows;
  std::istringstream rs(body);
  std::string row;
  while (std::getline(rs, row, ';')) {
    std::istringstream cs(row);
    std::vector<double> vals;
    double v;
    while (cs >> v) vals.push_back(v);
    if (!cs.eof()) throw Error(ErrorCode::ParseError, "non-numeric entry in mpc." + name);
    if (!vals.empty()) rows.push_back(std::move(vals));
  }
  return rows;
}

}  // namespace

MatpowerCase parse_matpower(const std::string& raw, const MatpowerOptions& opts) {
  const std::string text = strip_comments(raw);
  std::smatch m;
  static const std::regex base_re(R"(mpc\.baseMVA\s*=\s*([0-9.eE+-]+))");
  if (!std::regex_search(text, m, base_re)) throw Error(ErrorCode::ParseError, "missing baseMVA");
  MatpowerCase out;
  GridTopology& topo = out.topology;
  topo.base_mva = std::stod(m[1].str());

  auto bus = read_matrix(text, "bus");
  auto branch = read_matrix(text, "branch");
  if (bus.empty()) throw Error(ErrorCode::ParseError, "empty bus table");
  double base_kv = 0.0;
  bool have_root = false;
  for (const auto& row : bus) {
    if (row.size() < 10) throw Error(ErrorCode::ParseError, "short bus row");
    BusId id = static_cast<BusId>(row[0]);
    topo.buses.push_back(id);
    topo.region_of[id] = 0;
    if (static_cast<int>(row[1]) == 3) {
      topo.root = id;
      have_root = true;
    }
    if (base_kv == 0.0) base_kv = row[9];
    double pd = row[2], qd = row[3];
    if (opts.loads_in_kva) {
      pd *= 1e-3;
      qd *= 1e-3;
    }
    if (opts.power_factor) {
      double pf = *opts.power_factor;
      qd = pd * std::sin(std::acos(pf));
      pd = pd * pf;
    }
    out.pd[id] = pd;
    out.qd[id] = qd;
  }
  if (!have_root) throw Error(ErrorCode::ParseError, "no reference bus");

  double zbase = base_kv * base_kv / topo.base_mva;
  for (const auto& row : branch) {
    if (row.size() < 4) throw Error(ErrorCode::ParseError, "short branch row");
    if (row.size() >= 11 && row[10] == 0.0) continue;  // out of service
    Line ln;
    ln.from = static_cast<BusId>(row[0]);
    ln.to = static_cast<BusId>(row[1]);
    ln.r = row[2];
    ln.x = row[3];
    if (opts.impedance_in_ohms) {
      ln.r /= zbase;
      ln.x /= zbase;
    }
    topo.lines.push_back(ln);
  }
  return out;
}

MatpowerCase load_matpower(const std::string& path, const MatpowerOptions& opts) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_matpower(ss.str(), opts);
}

}  // namespace eve::grid
