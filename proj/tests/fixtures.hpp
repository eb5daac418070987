#pragma once

#include "eve/error.hpp"
#include "eve/grid.hpp"

#include <functional>
#include <string>

namespace fixtures {

inline eve::grid::GridTopology chain(int n, double r = 0.01, double x = 0.01) {
  eve::grid::GridTopology t;
  t.root = 1;
  for (int b = 1; b <= n; ++b) {
    t.buses.push_back(b);
    t.region_of[b] = 0;
  }
  for (int b = 2; b <= n; ++b) t.lines.push_back({b - 1, b, r, x});
  return t;
}

inline eve::grid::MatpowerCase case141() {
  eve::grid::MatpowerOptions o;
  o.impedance_in_ohms = true;
  o.loads_in_kva = true;
  o.power_factor = 0.85;
  return eve::grid::load_matpower(std::string(EVE_DATA_DIR) + "/case141.m", o);
}

inline eve::grid::GridTopology case141x7() {
  auto t = case141().topology;
  eve::grid::assign_regions_by_subtree(
      t, {{1, 3}, {37, 0}, {43, 1}, {54, 2}, {7, 4}, {16, 5}, {118, 6}});
  t.sensor_sharing.push_back({1, {54, 73}});
  return t;
}

inline eve::ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const eve::Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected an eve::Error");
}

}  // namespace fixtures
