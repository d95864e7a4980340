#pragma once

#include <cstdint>

#include "dopf/network.hpp"

namespace dopf {

/// Main feeder with `laterals` taps. Ahead of every tap the main chain gets
/// `main_nodes_between_laterals` distributed-load buses followed by the tap bus
/// itself; each lateral is a chain of neighborhood heads and every head feeds
/// a chain of households.
struct FeederSpec {
  int laterals = 20;
  int neighborhoods_per_lateral = 20;
  int households_per_neighborhood = 20;
  int main_nodes_between_laterals = 4;
  Complex load{0.1, 0.01};
  Complex z{0.07, 0.01};
  double v0 = 1.0;
  double base_kv = 12.47;
  double base_kva = 1000.0;
  double i_rated_sq = 1e6;
  VoltageLimits limits;
};

/// 1 + laterals * (main_nodes + 1 + neighborhoods * (1 + households)).
std::int64_t feeder_bus_count(const FeederSpec& spec);

/// Throws std::invalid_argument on a spec with a non-positive count or negative load.
RadialNetwork build_feeder(const FeederSpec& spec);

struct DerScenario {
  double penetration = 1.0;  ///< fraction of load buses that receive a DER
  double rating_kva = 8.4;
  double p_nominal_kw = 7.0;
  DispatchMode mode = DispatchMode::Reactive;
  double load_multiplier = 1.0;
  std::uint64_t seed = 1;
};

/// Replaces every DER with round(penetration * L) new devices on a seeded
/// uniform draw of the L load buses, and scales all loads.
RadialNetwork place_ders(const RadialNetwork& network, const DerScenario& scenario);

/// Smallest power of ten K such that dividing every branch impedance of
/// `spec` by K keeps the DER-free power flow inside the voltage band.
/// Returns 0 when no K up to 1e12 works.
double feasible_impedance_divisor(const FeederSpec& spec);

/// Feeder spec whose bus count is close to `target_buses`: the lateral shape is
/// taken from `shape` and only the lateral count varies.
FeederSpec feeder_spec_for_size(std::int64_t target_buses, const FeederSpec& shape);

}  // namespace dopf
