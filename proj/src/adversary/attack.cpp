#include "eve/adversary.hpp"

#include "eve/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace eve::adversary {

namespace {

struct ModeName {
  AttackMode mode;
  std::string_view name;
};
constexpr ModeName kModes[] = {{AttackMode::None, "none"},
                               {AttackMode::MeasurementFDIA, "measurement"},
                               {AttackMode::MessageFDIA, "message"},
                               {AttackMode::Silent, "silent"},
                               {AttackMode::Stealth, "stealth"}};

}  // namespace

std::string_view to_string(AttackMode m) {
  for (const auto& k : kModes)
    if (k.mode == m) return k.name;
  return "?";
}

AttackMode mode_from_string(std::string_view s) {
  for (const auto& k : kModes)
    if (k.name == s) return k.mode;
  throw Error(ErrorCode::ParseError, "unknown attack mode " + std::string(s));
}

AttackSpec parse_attack(const std::string& text, std::uint64_t seed) {
  AttackSpec spec;
  spec.seed = seed;
  if (text.empty() || text == "none") return spec;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(':', start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (parts.size() < 2 || parts.size() > 3)
    throw Error(ErrorCode::ParseError, "attack spec must be mode:attacker[:scale]");
  spec.mode = mode_from_string(parts[0]);
  try {
    spec.attacker = std::stoi(parts[1]);
    if (parts.size() == 3) spec.scale = std::stod(parts[2]);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "bad attack spec " + text);
  }
  if (spec.attacker < 0 || spec.scale < 0.0)
    throw Error(ErrorCode::ParseError, "attack spec needs a non-negative attacker and scale");
  return spec;
}

Eigen::MatrixXd perturb_measurements(const Eigen::MatrixXd& z,
                                     const std::vector<std::size_t>& measured_vars,
                                     const AttackSpec& spec) {
  Eigen::MatrixXd out = z;
  for (const auto& [var, offset] : spec.offsets) {
    auto it = std::find(measured_vars.begin(), measured_vars.end(), var);
    if (it == measured_vars.end())
      throw Error(ErrorCode::UnknownSensor, "no sensor on variable " + std::to_string(var));
    out.row(it - measured_vars.begin()).array() += offset;
  }
  return out;
}

Eigen::MatrixXd message_attack(Eigen::Index rows, Eigen::Index cols, const AttackSpec& spec, int k,
                               grid::RegionId receiver) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, cols);
  if (rows == 0 || spec.scale == 0.0) return a;
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(receiver),
                    static_cast<std::uint32_t>(spec.attacker)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> N(0.0, 1.0);
  const double norm = spec.scale * 0.5 * std::sqrt(static_cast<double>(rows));
  for (Eigen::Index t = 0; t < cols; ++t) {
    Eigen::VectorXd v(rows);
    do {
      for (Eigen::Index i = 0; i < rows; ++i) v(i) = N(rng);
    } while (v.norm() == 0.0);
    a.col(t) = v * (norm / v.norm());
  }
  return a;
}

Eigen::MatrixXd perturb_message(const Eigen::MatrixXd& slice, const AttackSpec& spec, int k,
                                grid::RegionId receiver, const grid::CommunicationGraph& graph) {
  if (!graph.adjacent(spec.attacker, receiver))
    throw Error(ErrorCode::NotANeighbor, "regions " + std::to_string(spec.attacker) + " and " +
                                             std::to_string(receiver) + " share no variables");
  return slice + message_attack(slice.rows(), slice.cols(), spec, k, receiver);
}

std::optional<Eigen::VectorXd> build_stealth_attack(const Eigen::MatrixXd& H,
                                                    const Eigen::MatrixXd& S_A, double threshold,
                                                    const std::vector<Eigen::Index>& targets) {
  const Eigen::MatrixXd K = H * S_A.transpose();
  const Eigen::Index m = K.cols();
  if (m == 0) return std::nullopt;
  Eigen::MatrixXd null;
  if (K.rows() == 0) {
    null = Eigen::MatrixXd::Identity(m, m);
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(K, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (s(i) > threshold * std::max(1.0, s(0))) ++rank;
    if (rank == m) return std::nullopt;
    null = svd.matrixV().rightCols(m - rank);
  }
  Eigen::VectorXd a;
  if (targets.empty()) {
    a = null.col(null.cols() - 1);
  } else {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(m);
    for (Eigen::Index t : targets) {
      if (t < 0 || t >= m) throw Error(ErrorCode::UnknownSensor, "stealth target out of range");
      e(t) = 1.0;
    }
    a = null * (null.transpose() * e);
    if (a.norm() <= threshold) return std::nullopt;
  }
  return a / a.norm();
}

}  // namespace eve::adversary
