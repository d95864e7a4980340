#include <doctest.h>

#include <filesystem>

#include "dopf/network.hpp"
#include "dopf/network_io.hpp"

using namespace dopf;

namespace {

NetworkData chain(int n, Complex load = {0.1, 0.01}) {
  NetworkData d;
  for (int i = 0; i < n; ++i) d.buses.push_back({i, i == 0 ? Complex{} : load, std::nullopt});
  for (int i = 1; i < n; ++i) d.branches.push_back({i - 1, i, 0.07, 0.01, 1e6});
  return d;
}

}  // namespace

TEST_CASE("validate_radial accepts a chain") {
  CHECK(validate_radial(chain(3)).ok());
}

TEST_CASE("validate_radial rejects a cycle") {
  NetworkData d = chain(3);
  d.branches.push_back({0, 2, 0.07, 0.01, 1e6});
  auto r = validate_radial(d);
  REQUIRE_FALSE(r.ok());
  CHECK(*r.error == NetworkErrc::NotATree);
}

TEST_CASE("validate_radial rejects unreachable buses") {
  NetworkData d = chain(4);
  d.branches.pop_back();
  d.branches.pop_back();
  auto r = validate_radial(d);
  REQUIRE_FALSE(r.ok());
  CHECK(*r.error == NetworkErrc::Disconnected);
}

TEST_CASE("validate_radial rejects reversed branches") {
  NetworkData d = chain(3);
  std::swap(d.branches[1].from, d.branches[1].to);
  auto r = validate_radial(d);
  REQUIRE_FALSE(r.ok());
  CHECK(*r.error == NetworkErrc::BadOrientation);
}

TEST_CASE("constructor throws NetworkError with the validation code") {
  NetworkData d = chain(3);
  d.branches.push_back({0, 2, 0.07, 0.01, 1e6});
  try {
    RadialNetwork net(d);
    FAIL("expected NetworkError");
  } catch (const NetworkError& e) {
    CHECK(e.code() == NetworkErrc::NotATree);
  }
}

TEST_CASE("children") {
  RadialNetwork c(chain(3));
  REQUIRE(c.children(1).size() == 1);
  CHECK(c.children(1)[0] == 2);
  CHECK(c.children(2).empty());
  CHECK_THROWS_AS(c.children(7), NetworkError);

  NetworkData s;
  for (int i = 0; i < 4; ++i) s.buses.push_back({i, {}, std::nullopt});
  for (int i : {3, 1, 2}) s.branches.push_back({0, i, 0.07, 0.01, 1e6});
  RadialNetwork star(s);
  auto k = star.children(0);
  CHECK(std::vector<BusId>(k.begin(), k.end()) == std::vector<BusId>{1, 2, 3});
}

TEST_CASE("aggregate_downstream_load") {
  RadialNetwork c(chain(4));
  CHECK(c.aggregate_downstream_load(3) == Complex(0.1, 0.01));
  Complex top = c.aggregate_downstream_load(1);
  CHECK(top.real() == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(top.imag() == doctest::Approx(0.03).epsilon(1e-15));

  RadialNetwork z(chain(4, {}));
  CHECK(z.aggregate_downstream_load(0) == Complex{});
}

TEST_CASE("nominal active output offsets the load") {
  NetworkData d = chain(3);
  d.buses[2].der = DerDevice{0.05, 0.03, DispatchMode::Reactive};
  RadialNetwork net(d);
  CHECK(net.aggregate_downstream_load(2).real() == doctest::Approx(0.07));
  CHECK(net.der_count() == 1);
  CHECK(net.bus(2).der->reactive_limit() == doctest::Approx(0.04));
}

TEST_CASE("preorder puts parents first") {
  NetworkData d;
  for (int i = 0; i < 6; ++i) d.buses.push_back({i, {}, std::nullopt});
  d.branches = {{0, 4, 1, 1, 1}, {4, 1, 1, 1, 1}, {0, 2, 1, 1, 1}, {2, 5, 1, 1, 1}, {5, 3, 1, 1, 1}};
  RadialNetwork net(d);
  std::vector<int> pos(6);
  auto pre = net.preorder();
  REQUIRE(pre.size() == 6);
  for (std::size_t i = 0; i < pre.size(); ++i) pos[pre[i]] = static_cast<int>(i);
  for (const Branch& b : net.branches()) CHECK(pos[b.from] < pos[b.to]);
}

TEST_CASE("network file round trip") {
  NetworkData d = chain(4);
  d.buses[3].der = DerDevice{0.0084, 0.007, DispatchMode::Active};
  d.v0 = 1.05 * 1.05;
  auto path = std::filesystem::temp_directory_path() / "dopf_network_roundtrip.json";
  write_network(path, d);
  RadialNetwork back = read_network(path);
  std::filesystem::remove(path);
  CHECK(back.bus_count() == 4);
  CHECK(back.v0() == d.v0);
  REQUIRE(back.bus(3).der);
  CHECK(back.bus(3).der->rating == 0.0084);
  CHECK(back.bus(3).der->mode == DispatchMode::Active);
  CHECK(back.branches()[2].r == 0.07);
}

TEST_CASE("malformed network documents") {
  CHECK_THROWS_AS(network_from_json(nlohmann::json::parse(R"({"buses": 3})")), NetworkError);
  CHECK_THROWS_AS(network_from_json(nlohmann::json::array()), NetworkError);
}
