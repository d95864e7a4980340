#include "dopf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "dopf/pfsweep.hpp"

namespace dopf {

std::int64_t feeder_bus_count(const FeederSpec& spec) {
  const std::int64_t per_lateral =
      spec.main_nodes_between_laterals + 1 +
      std::int64_t{spec.neighborhoods_per_lateral} * (1 + std::int64_t{spec.households_per_neighborhood});
  return 1 + std::int64_t{spec.laterals} * per_lateral;
}

RadialNetwork build_feeder(const FeederSpec& spec) {
  if (spec.laterals < 1 || spec.neighborhoods_per_lateral < 1 || spec.households_per_neighborhood < 1 ||
      spec.main_nodes_between_laterals < 1)
    throw std::invalid_argument("feeder counts must all be >= 1");
  if (spec.load.real() < 0.0) throw std::invalid_argument("load real part must be non-negative");

  NetworkData data;
  data.v0 = spec.v0;
  data.base_kv = spec.base_kv;
  data.base_kva = spec.base_kva;
  data.limits = spec.limits;
  const auto n = static_cast<std::size_t>(feeder_bus_count(spec));
  data.buses.reserve(n);
  data.branches.reserve(n - 1);
  data.buses.push_back(Bus{kSubstation, {}, std::nullopt});

  auto add_bus = [&](BusId parent) {
    const auto id = static_cast<BusId>(data.buses.size());
    data.buses.push_back(Bus{id, spec.load, std::nullopt});
    data.branches.push_back(Branch{parent, id, spec.z.real(), spec.z.imag(), spec.i_rated_sq});
    return id;
  };

  // Main feeder first so its buses carry the lowest ids, then the laterals.
  std::vector<BusId> taps;
  taps.reserve(static_cast<std::size_t>(spec.laterals));
  BusId main_tail = kSubstation;
  for (int lat = 0; lat < spec.laterals; ++lat) {
    for (int m = 0; m <= spec.main_nodes_between_laterals; ++m) main_tail = add_bus(main_tail);
    taps.push_back(main_tail);
  }
  for (BusId tap : taps) {
    BusId head = tap;
    for (int nb = 0; nb < spec.neighborhoods_per_lateral; ++nb) {
      head = add_bus(head);
      BusId house = head;
      for (int h = 0; h < spec.households_per_neighborhood; ++h) house = add_bus(house);
    }
  }
  return RadialNetwork(std::move(data));
}

namespace {

// Unbiased draw in [0, bound) by rejection; independent of the standard
// library's distribution implementations so placements are portable.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw >= limit);
  return draw % bound;
}

}  // namespace

RadialNetwork place_ders(const RadialNetwork& network, const DerScenario& scenario) {
  if (!(scenario.penetration >= 0.0 && scenario.penetration <= 1.0))
    throw std::invalid_argument("penetration must lie in [0, 1]");
  if (scenario.mode == DispatchMode::Reactive && scenario.rating_kva < scenario.p_nominal_kw)
    throw std::invalid_argument("rating_kva must be >= p_nominal_kw in reactive-dispatch mode");
  if (scenario.rating_kva < 0.0 || scenario.p_nominal_kw < 0.0 || scenario.load_multiplier < 0.0)
    throw std::invalid_argument("DER ratings and load multiplier must be non-negative");

  std::vector<BusId> load_buses;
  for (const Bus& b : network.buses())
    if (b.id != kSubstation && b.load != Complex{}) load_buses.push_back(b.id);

  NetworkData data = network.data();
  for (Bus& b : data.buses) {
    b.der.reset();
    b.load *= scenario.load_multiplier;
  }

  const auto count = static_cast<std::size_t>(std::llround(scenario.penetration * static_cast<double>(load_buses.size())));
  std::mt19937_64 rng(scenario.seed);
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, load_buses.size() - i));
    std::swap(load_buses[i], load_buses[j]);
  }

  DerDevice device;
  device.mode = scenario.mode;
  device.rating = scenario.rating_kva / data.base_kva;
  device.p_measured = std::min(scenario.p_nominal_kw, scenario.rating_kva) / data.base_kva;
  for (std::size_t i = 0; i < count; ++i) data.buses[static_cast<std::size_t>(load_buses[i])].der = device;
  return RadialNetwork(std::move(data));
}

double feasible_impedance_divisor(const FeederSpec& spec) {
  for (int k = 0; k <= 12; ++k) {
    const double divisor = std::pow(10.0, k);
    FeederSpec scaled = spec;
    scaled.z = spec.z / divisor;
    RadialNetwork net = build_feeder(scaled);
    try {
      NetworkState state = solve_power_flow(net, nominal_dispatch(net));
      if (check_limits(state, net).empty()) return divisor;
    } catch (const PowerFlowError&) {
    }
  }
  return 0.0;
}

FeederSpec feeder_spec_for_size(std::int64_t target_buses, const FeederSpec& shape) {
  FeederSpec spec = shape;
  spec.laterals = 1;
  const std::int64_t per_lateral = feeder_bus_count(spec) - 1;
  const auto laterals = std::llround(static_cast<double>(target_buses - 1) / static_cast<double>(per_lateral));
  spec.laterals = static_cast<int>(std::max<long long>(1, laterals));
  return spec;
}

}  // namespace dopf
