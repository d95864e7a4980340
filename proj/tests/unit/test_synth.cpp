#include <doctest.h>

#include <set>

#include "dopf/pfsweep.hpp"
#include "dopf/synth.hpp"

using namespace dopf;

namespace {

FeederSpec small(int laterals, int main_nodes, int neighborhoods, int households) {
  FeederSpec s;
  s.laterals = laterals;
  s.main_nodes_between_laterals = main_nodes;
  s.neighborhoods_per_lateral = neighborhoods;
  s.households_per_neighborhood = households;
  return s;
}

std::set<BusId> der_buses(const RadialNetwork& net) {
  std::set<BusId> out;
  for (const Bus& b : net.buses())
    if (b.der) out.insert(b.id);
  return out;
}

}  // namespace

TEST_CASE("one lateral with one neighborhood of two households") {
  // substation, main bus, tap, head, two households
  RadialNetwork net = build_feeder(small(1, 1, 1, 2));
  CHECK(net.bus_count() == 6);
  CHECK(net.branch_count() == 5);
  CHECK(feeder_bus_count(small(1, 1, 1, 2)) == 6);
  CHECK(net.bus(0).load == Complex{});
}

TEST_CASE("default feeder size") {
  FeederSpec s;
  CHECK(feeder_bus_count(s) == 8501);
  RadialNetwork net = build_feeder(s);
  CHECK(net.bus_count() == 8501);
  for (std::size_t i = 0; i < net.branch_count(); i += 997) {
    CHECK(net.branches()[i].r == 0.07);
    CHECK(net.branches()[i].x == 0.01);
  }
}

TEST_CASE("bus count matches the closed form") {
  for (int L : {1, 2, 5})
    for (int m : {1, 4})
      for (int n : {1, 3})
        for (int h : {1, 2, 7}) {
          FeederSpec s = small(L, m, n, h);
          CHECK(static_cast<std::int64_t>(build_feeder(s).bus_count()) == 1 + L * (m + 1 + n * (1 + h)));
        }
}

TEST_CASE("invalid specs") {
  CHECK_THROWS_AS(build_feeder(small(0, 1, 1, 1)), std::invalid_argument);
  FeederSpec s = small(1, 1, 1, 1);
  s.load = {-0.1, 0.0};
  CHECK_THROWS_AS(build_feeder(s), std::invalid_argument);
}

TEST_CASE("DER placement") {
  RadialNetwork base = build_feeder(FeederSpec{});
  const std::size_t loads = base.bus_count() - 1;

  DerScenario full;
  full.penetration = 1.0;
  CHECK(place_ders(base, full).der_count() == loads);

  DerScenario none;
  none.penetration = 0.0;
  CHECK(place_ders(base, none).der_count() == 0);

  DerScenario half;
  half.penetration = 0.5;
  half.seed = 7;
  RadialNetwork a = place_ders(base, half);
  RadialNetwork b = place_ders(base, half);
  CHECK(a.der_count() == 4250);
  CHECK(der_buses(a) == der_buses(b));

  half.seed = 8;
  CHECK(der_buses(place_ders(base, half)) != der_buses(a));
}

TEST_CASE("DER ratings and load scaling") {
  RadialNetwork base = build_feeder(small(1, 1, 1, 2));
  DerScenario s;
  s.rating_kva = 21;
  s.p_nominal_kw = 7;
  s.load_multiplier = 2.0;
  RadialNetwork net = place_ders(base, s);
  const Bus& b = net.bus(5);
  REQUIRE(b.der);
  CHECK(b.der->rating == doctest::Approx(0.021));
  CHECK(b.der->p_measured == doctest::Approx(0.007));
  CHECK(b.load == Complex(0.2, 0.02));
  CHECK_FALSE(net.bus(0).der);
}

TEST_CASE("feasible impedance divisor keeps the unloaded-DER flow in band") {
  FeederSpec s = small(2, 1, 3, 5);
  const double K = feasible_impedance_divisor(s);
  REQUIRE(K >= 1.0);
  FeederSpec ok = s;
  ok.z /= K;
  RadialNetwork net = build_feeder(ok);
  CHECK(check_limits(solve_power_flow(net, nominal_dispatch(net)), net).empty());
  if (K > 1.0) {
    FeederSpec tight = s;
    tight.z /= K / 10.0;
    RadialNetwork t = build_feeder(tight);
    bool failed = false;
    try {
      failed = !check_limits(solve_power_flow(t, nominal_dispatch(t)), t).empty();
    } catch (const PowerFlowError&) {
      failed = true;
    }
    CHECK(failed);
  }
}

TEST_CASE("feeder_spec_for_size varies only the lateral count") {
  FeederSpec shape = small(1, 4, 9, 4);
  for (std::int64_t target : {250, 500, 1000, 2000}) {
    FeederSpec s = feeder_spec_for_size(target, shape);
    CHECK(s.neighborhoods_per_lateral == 9);
    CHECK(s.households_per_neighborhood == 4);
    const std::int64_t per = 4 + 1 + 9 * 5;
    CHECK(std::abs(feeder_bus_count(s) - target) <= per / 2 + 1);
  }
}
