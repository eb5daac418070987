#pragma once

// Attack injection used to exercise the verification layer.

#include "eve/grid.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace eve::adversary {

enum class AttackMode { None, MeasurementFDIA, MessageFDIA, Silent, Stealth };

std::string_view to_string(AttackMode m);
AttackMode mode_from_string(std::string_view s);  // throws Error{ParseError}

struct AttackSpec {
  grid::RegionId attacker = -1;
  AttackMode mode = AttackMode::None;
  double scale = 1.0;  // message norm = scale * 0.5 * sqrt(len); stealth norm; offset factor
  std::map<std::size_t, double> offsets;  // measurement FDIA: global var -> additive offset
  std::uint64_t seed = 0;

  bool active() const { return mode != AttackMode::None && attacker >= 0; }
};

/// "none" or "<mode>:<attacker>[:scale]" with mode in {message, measurement, silent, stealth}.
AttackSpec parse_attack(const std::string& text, std::uint64_t seed);

/// Adds the configured offsets to the sensors in `measured_vars` (rows of z).
/// Throws Error{UnknownSensor} when an offset names a variable without a sensor.
Eigen::MatrixXd perturb_measurements(const Eigen::MatrixXd& z,
                                     const std::vector<std::size_t>& measured_vars,
                                     const AttackSpec& spec);

/// Corrupts the slice the attacker sends to `receiver` in iteration k. Each column gets a
/// fresh Gaussian direction scaled to scale * 0.5 * sqrt(rows).
/// Throws Error{NotANeighbor} when the edge is not in the graph.
Eigen::MatrixXd perturb_message(const Eigen::MatrixXd& slice, const AttackSpec& spec, int k,
                                grid::RegionId receiver, const grid::CommunicationGraph& graph);

/// The raw attack vector used by perturb_message (one column per interval).
Eigen::MatrixXd message_attack(Eigen::Index rows, Eigen::Index cols, const AttackSpec& spec,
                               int k, grid::RegionId receiver);

/// Unit vector a with H S_A' a = 0, or nullopt when that null space is trivial. With
/// `targets` (rows of S_A), returns the null-space vector closest to moving those sensors.
std::optional<Eigen::VectorXd> build_stealth_attack(const Eigen::MatrixXd& H,
                                                    const Eigen::MatrixXd& S_A,
                                                    double threshold = 1e-10,
                                                    const std::vector<Eigen::Index>& targets = {});

}  // namespace eve::adversary
